#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flmg/data.hpp"
#include "flmg/diffusion.hpp"
#include "flmg/guidance.hpp"
#include "flmg/nn.hpp"
#include "flmg/tensor.hpp"

namespace flmg::fed {

struct TrainConfig {
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

/// What a client uploads, exactly once: the trained model (weights plus BN
/// running statistics) and the label-side bookkeeping the server needs.
struct ClientUpdate {
  int client_id = -1;
  nn::ClassifierModel model;
  std::size_t train_size = 0;
  std::vector<int> class_counts;   // per class, over the local train split
  std::vector<int> label_set;      // sorted classes observed locally
  std::vector<double> loss_curve;  // mean train CE per epoch
};

struct CostEntry {
  int client_id = -1;
  std::size_t scalars = 0;
  std::size_t bytes = 0;
};

/// Append-only communication/compute log. Callers synchronize appends.
struct CostLedger {
  std::vector<CostEntry> uploads;
  std::vector<CostEntry> downloads;
  double client_train_flops = 0.0;
  int rounds = 0;
};

struct LedgerReport {
  std::size_t upload_scalars = 0;
  std::size_t upload_bytes = 0;
  std::size_t download_scalars = 0;
  std::size_t download_bytes = 0;
  std::size_t total_scalars = 0;
  std::size_t total_bytes = 0;
  double client_train_flops = 0.0;
  int rounds = 0;
};

LedgerReport ledger_report(const CostLedger& ledger);

/// Analytic multiply-add count for one sample through the stack.
double forward_flops(const std::vector<nn::LayerSpec>& layers);
/// Training cost: forward plus backward (costed at 2x forward) per sample
/// per epoch.
double training_flops(const std::vector<nn::LayerSpec>& layers, std::size_t samples, int epochs);

/// SGD on cross-entropy over the client's train split. cfg.seed is used
/// as-is; derive per-client seeds at the call site. epochs == 0 returns the
/// seeded initialization untouched. When `ledger` is given, the upload of
/// the serialized model and the local training flops are recorded.
ClientUpdate local_train(const data::ClientData& client, const std::vector<nn::LayerSpec>& arch,
                         const TrainConfig& cfg, CostLedger* ledger = nullptr);

struct SynthRecord {
  std::vector<double> x;
  int label = -1;
  int client_id = -1;
};

struct SyntheticDataset {
  int dim = 0;
  int num_classes = 0;
  std::vector<SynthRecord> records;
  guidance::GuidanceConfig gen_config;  // generation snapshot
  std::uint64_t gen_seed = 0;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  Tensor to_tensor() const;
  std::vector<int> labels() const;
  std::vector<int> client_ids() const;
  int count_for(int client_id, int label) const;
  void validate() const;
};

struct SynthesisConfig {
  guidance::GuidanceConfig guidance;
  int per_class_count = 0;  // <= 0: match each client's per-class train count
  std::uint64_t seed = 1;
};

/// For each client k and each class y in k's label set, generates the
/// requested number of samples guided by k's model, tagged (y, k). The
/// (k, y) tasks use independent PRNG streams derive_seed(seed, k, y) and may
/// run on `threads` workers; output order is fixed regardless.
SyntheticDataset build_synthetic(const diffusion::EpsNet& net,
                                 const std::vector<ClientUpdate>& updates,
                                 const diffusion::NoiseSchedule& sched,
                                 const SynthesisConfig& cfg, int threads = 1);

enum class StrategyKind { FineTune = 0, MultiTeacher = 1, SpecificTeacher = 2 };

struct AggregationStrategy {
  StrategyKind kind = StrategyKind::SpecificTeacher;
  double lambda_distill = 1.0;  // weight of the distillation term
  double temperature = 1.0;     // softmax temperature for student and teachers
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Trains a fresh server model (arch chosen by the server, independent of
/// client archs) on the synthetic set. Per-sample loss is CE plus, for the
/// distillation strategies, lambda_distill * KL(student_probs || teacher_probs)
/// at `temperature`; the teacher distribution is the mean over all teachers
/// (MultiTeacher) or the record's originating client model (SpecificTeacher).
/// lambda_distill == 0 skips teacher work entirely, so both strategies follow
/// the fine-tune trajectory bit-exactly under the same seed.
nn::ClassifierModel aggregate(const SyntheticDataset& synth,
                              const std::vector<ClientUpdate>& teachers,
                              const std::vector<nn::LayerSpec>& arch,
                              const AggregationStrategy& strat);

nn::ClassifierModel aggregate_finetune(const SyntheticDataset& synth,
                                       const std::vector<nn::LayerSpec>& arch,
                                       const TrainConfig& cfg);
nn::ClassifierModel aggregate_multi_teacher(const SyntheticDataset& synth,
                                            const std::vector<ClientUpdate>& teachers,
                                            const std::vector<nn::LayerSpec>& arch,
                                            AggregationStrategy strat);
nn::ClassifierModel aggregate_specific_teacher(const SyntheticDataset& synth,
                                               const std::vector<ClientUpdate>& teachers,
                                               const std::vector<nn::LayerSpec>& arch,
                                               AggregationStrategy strat);

/// Fraction of samples whose argmax logit (ties to the lowest class index)
/// equals the label.
double accuracy(const nn::ClassifierModel& model, const data::Dataset& ds);

struct EvalResult {
  std::vector<double> per_client;  // accuracy on each client's test split
  double average = 0.0;            // unweighted mean over clients
};

EvalResult evaluate_global(const nn::ClassifierModel& model,
                           const std::vector<data::ClientData>& clients);

struct FedAvgConfig {
  int rounds = 20;
  int local_epochs = 1;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

struct FedAvgResult {
  nn::ClassifierModel model;
  CostLedger ledger;
};

/// Iterative baseline: rounds of broadcast -> local training -> averaging of
/// parameters and BN statistics weighted by client train size. The ledger
/// records one download and one upload per client per round. Round r uses the
/// shared shuffle stream derive_seed(seed, r + 1) on every client, so clients
/// holding identical data produce identical local weights.
FedAvgResult fedavg_baseline(const std::vector<data::ClientData>& clients,
                             const std::vector<nn::LayerSpec>& arch, const FedAvgConfig& cfg);

/// Class-conditional unguided sampling: no client model is consulted and the
/// records carry client_id -1. Class y uses the stream derive_seed(seed, y);
/// with guidance disabled this way, the draw for a class is bit-identical to
/// guided generation under a zeroed guide scale and the same derived seed.
SyntheticDataset prompts_only_baseline(const diffusion::EpsNet& net, std::span<const int> classes,
                                       int per_class_count, const diffusion::NoiseSchedule& sched,
                                       const guidance::GuidanceConfig& base_cfg,
                                       std::uint64_t seed, int threads = 1);

struct CeilingResult {
  nn::ClassifierModel model;
  CostLedger ledger;
};

/// Centralized training on the union of client train splits (client order).
/// With one client this is exactly local_train under the same config. The
/// ledger charges each client the raw bytes of its train split; download 0.
CeilingResult ceiling_baseline(const std::vector<data::ClientData>& clients,
                               const std::vector<nn::LayerSpec>& arch, const TrainConfig& cfg);

}  // namespace flmg::fed
