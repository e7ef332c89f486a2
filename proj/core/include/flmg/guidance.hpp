#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flmg/diffusion.hpp"
#include "flmg/nn.hpp"
#include "flmg/tensor.hpp"

namespace flmg::guidance {

struct GuidanceConfig {
  double lambda_bn = 1.0;   // weight of the BN statistic-matching term
  double lambda_ce = 1.0;   // weight of the classification term (1 = combined loss as defined)
  double guide_scale = 1.0; // multiplier on the guidance gradient
  int batch_size = 32;      // generation batch (BN statistics need B >= 2)
  int sample_steps = 50;    // reverse-process stride count

  void validate() const;
  bool active() const { return guide_scale > 0.0 && (lambda_ce > 0.0 || lambda_bn > 0.0); }
};

struct LossWithGrad {
  double loss = 0.0;
  Tensor d_x;  // gradient w.r.t. the input batch
};

/// Sum over BN layers of ||mu_batch - mu_run||^2 + ||var_batch - var_run||^2,
/// batch statistics taken at each BN layer's input under a batch-stats pass.
LossWithGrad bn_loss(const Tensor& x_batch, const nn::ClassifierModel& model);

/// lambda_ce * cross_entropy(Eval-mode logits, labels) + lambda_bn * bn_loss.
LossWithGrad guidance_loss(const Tensor& x_batch, std::span<const int> labels,
                           const nn::ClassifierModel& model, const GuidanceConfig& cfg);

/// Classifier-guidance noise update: eps - coeff * scale * g, with g the
/// gradient of log p(y|x) (so a loss gradient enters negated).
double apply_guidance(double eps, double coeff, double scale, double g);

/// eps_raw = net(s_t, t | y); x0_hat = predict_x0(s_t, eps_raw, t);
/// loss gradient taken at x0_hat with d(x0_hat)/d(s_t) = 1/sqrt(abar_t)
/// (stop-gradient through the noise net); returns the modified noise.
Tensor guided_eps(const Tensor& s_t, int t, std::span<const int> labels,
                  const diffusion::EpsNet& net, const nn::ClassifierModel& model,
                  const diffusion::NoiseSchedule& sched, const GuidanceConfig& cfg);

struct GenSample {
  std::vector<double> x;
  int label = -1;
  int client_id = -1;
};

/// One reverse-process batch; model == nullptr or an inactive config yields
/// the unguided path, bit-identical to plain conditional sampling.
Tensor generate_batch(const diffusion::EpsNet& net, const nn::ClassifierModel* model,
                      const diffusion::NoiseSchedule& sched, std::span<const int> labels,
                      const GuidanceConfig& cfg, Rng& rng);

/// Batched generation of labels_wanted.size() samples. Work proceeds in
/// batches of cfg.batch_size; the last batch is padded by wrapping around
/// the requested labels and the excess discarded. Batch b uses the PRNG
/// stream derive_seed(seed, b), so results are thread-count invariant.
std::vector<GenSample> generate_labeled(const diffusion::EpsNet& net,
                                        const nn::ClassifierModel* model, int client_id,
                                        std::span<const int> labels_wanted,
                                        const diffusion::NoiseSchedule& sched,
                                        const GuidanceConfig& cfg, std::uint64_t seed,
                                        int threads = 1);

/// count samples of class y guided by client k's model.
std::vector<GenSample> generate_guided(const diffusion::EpsNet& net,
                                       const nn::ClassifierModel& model, int client_id, int y,
                                       int count, const diffusion::NoiseSchedule& sched,
                                       const GuidanceConfig& cfg, std::uint64_t seed,
                                       int threads = 1);

}  // namespace flmg::guidance
