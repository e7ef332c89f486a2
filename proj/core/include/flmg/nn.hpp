#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flmg/rng.hpp"
#include "flmg/tensor.hpp"

namespace flmg::nn {

enum class LayerKind : std::uint8_t { Linear = 0, BatchNorm = 1, ReLU = 2 };

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int in_dim = 0;   // Linear
  int out_dim = 0;  // Linear
  int dim = 0;      // BatchNorm
  double momentum = 0.1;
  double eps = 1e-5;

  static LayerSpec linear(int in, int out);
  static LayerSpec batch_norm(int dim, double momentum = 0.1, double eps = 1e-5);
  static LayerSpec relu();

  bool operator==(const LayerSpec&) const = default;
};

/// Linear -> BatchNorm -> ReLU stacks ending in a Linear classification head.
std::vector<LayerSpec> mlp_arch(int input_dim, const std::vector<int>& hidden, int num_classes,
                                bool with_batch_norm = true);

struct BnStats {
  std::vector<double> mean;
  std::vector<double> var;
};

enum class Mode {
  Train,       // batch statistics normalize, running statistics updated
  Eval,        // running statistics normalize, nothing mutated
  BatchStats,  // batch statistics normalize, nothing mutated
};

/// Gradient of a loss with respect to one BatchNorm layer's input-batch mean
/// and (biased) variance, injected into the backward sweep at that layer.
struct BnStatGrad {
  std::vector<double> d_mean;
  std::vector<double> d_var;
};

struct ForwardCache {
  Mode mode = Mode::Eval;
  std::vector<Tensor> layer_inputs;  // input to layer i; layer_inputs[0] is the batch
  struct BnCache {
    std::vector<double> mean;     // statistics used for normalization
    std::vector<double> var;      // biased batch variance (or running, in Eval)
    std::vector<double> inv_std;  // 1/sqrt(var + eps)
    Tensor x_hat;
  };
  std::vector<BnCache> bn;  // one entry per BatchNorm layer, in layer order
  const void* model_identity = nullptr;
  std::uint64_t model_revision = 0;
};

struct Gradients {
  std::vector<double> params;  // flat, same indexing as ClassifierModel::params()
  Tensor input;                // [B, D]
};

/// Layered classifier with a flat parameter store and tracked BatchNorm
/// running statistics. Forward in Train mode and parameter mutation are
/// single-writer; Eval-mode forward on a const instance is concurrency-safe.
class ClassifierModel {
 public:
  ClassifierModel(std::vector<LayerSpec> layers, Rng& init_rng);
  ClassifierModel(std::vector<LayerSpec> layers, std::uint64_t init_seed);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  int input_dim() const { return input_dim_; }
  int num_classes() const { return num_classes_; }
  int num_bn_layers() const { return static_cast<int>(bn_stats_.size()); }

  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() {
    ++revision_;
    return params_;
  }
  std::size_t param_count() const { return params_.size(); }
  /// Scalars carried by the running statistics (2 * sum of BN dims).
  std::size_t stat_count() const;
  /// All scalars in the uploaded artifact: parameters plus running stats.
  std::size_t total_scalars() const { return param_count() + stat_count(); }

  const std::vector<BnStats>& bn_stats() const { return bn_stats_; }
  void set_bn_stats(std::vector<BnStats> stats);

  std::uint64_t revision() const { return revision_; }

  /// Train mode updates running statistics and requires B >= 2 when the model
  /// has BatchNorm layers. Eval and BatchStats modes leave the model as-is.
  Tensor forward(const Tensor& x, Mode mode, ForwardCache* cache = nullptr);
  Tensor forward(const Tensor& x, Mode mode, ForwardCache* cache = nullptr) const;

  /// Reverse sweep for the forward that produced `cache`. Returns gradients
  /// for every parameter and for the input batch. `bn_stat_grads`, when
  /// given, injects per-BN-layer loss terms on the input-batch statistics.
  Gradients backward(const ForwardCache& cache, const Tensor& d_logits,
                     const std::vector<BnStatGrad>* bn_stat_grads = nullptr) const;

  std::span<const double> layer_params(std::size_t layer_index) const;

 private:
  Tensor run_forward(const Tensor& x, Mode mode, ForwardCache* cache,
                     std::vector<BnStats>* running) const;
  void build();
  void init_params(Rng& rng);
  void validate();

  std::vector<LayerSpec> layers_;
  std::vector<double> params_;
  std::vector<std::size_t> param_offsets_;  // per layer, into params_
  std::vector<BnStats> bn_stats_;
  int input_dim_ = 0;
  int num_classes_ = 0;
  std::uint64_t revision_ = 0;
};

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor d_logits;  // (softmax - one_hot) / B
};

/// Mean over the batch of -log softmax(logits)[label].
CrossEntropyResult cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax with max-subtraction.
Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);

/// Momentum SGD: v <- momentum * v + g; p <- p - lr * v.
void sgd_step(std::span<double> params, std::span<const double> grads,
              std::vector<double>& velocity, double lr, double momentum_coeff);

/// Stateful wrapper keeping the velocity buffer between steps.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum_coeff) : lr_(lr), momentum_(momentum_coeff) {}
  void step(ClassifierModel& model, std::span<const double> grads);
  void step(std::span<double> params, std::span<const double> grads);
  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::vector<double> velocity_;
};

/// Ordered (mean, variance) running statistics, one entry per BatchNorm layer.
std::vector<BnStats> extract_bn_stats(const ClassifierModel& model);

}  // namespace flmg::nn
