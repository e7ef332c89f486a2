#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "flmg/nn.hpp"
#include "flmg/rng.hpp"
#include "flmg/tensor.hpp"

namespace flmg::diffusion {

/// Timesteps run 1..T; index 0 is the clean-data boundary (alpha_bar[0] = 1).
struct NoiseSchedule {
  int T = 0;
  double eta = 0.0;
  std::vector<double> beta;       // [T+1], beta[0] = 0 sentinel
  std::vector<double> alpha_bar;  // [T+1], alpha_bar[0] = 1, strictly decreasing

  /// Noise scale for the step t -> t_prev (t_prev < t, t_prev >= 0).
  double sigma_to(int t, int t_prev) const;
  /// Adjacent-step noise scale (t -> t-1).
  double sigma(int t) const { return sigma_to(t, t - 1); }
  void check_t(int t) const;
};

NoiseSchedule make_schedule(int T, double beta_min, double beta_max, double eta = 0.0);

/// s_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, per-sample timesteps.
Tensor q_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps,
                const NoiseSchedule& sched);
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// x0_hat = (s_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t).
Tensor predict_x0(const Tensor& s_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

/// s_prev = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev - sigma^2) * eps_hat
///        + sigma * noise. noise may be null when sigma == 0.
Tensor ddim_step_to(const Tensor& s_t, const Tensor& eps_hat, int t, int t_prev,
                    const NoiseSchedule& sched, const Tensor* noise_draw);
Tensor ddim_step(const Tensor& s_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                 const Tensor* noise_draw);

/// Descending timestep sequence for strided sampling: front() == T, n entries.
std::vector<int> make_sample_steps(int T, int n);

struct EpsNetConfig {
  int data_dim = 0;
  int num_classes = 0;
  int emb_dim = 32;
  std::vector<int> hidden = {128, 128};
  bool input_skip = true;

  void validate() const;
};

/// Class-conditional noise predictor: an MLP trunk on [sample, time-emb +
/// class-emb] with an optional identity skip from the sample to the output.
/// Class id num_classes is the unconditional row of the embedding table.
class EpsNet {
 public:
  EpsNet(EpsNetConfig cfg, std::uint64_t init_seed);

  const EpsNetConfig& config() const { return cfg_; }
  int uncond_label() const { return cfg_.num_classes; }

  const nn::ClassifierModel& trunk() const { return trunk_; }
  nn::ClassifierModel& trunk() { return trunk_; }
  std::span<const double> embedding() const { return embed_; }
  std::span<double> mutable_embedding() { return embed_; }
  std::size_t param_count() const { return trunk_.param_count() + embed_.size(); }

  Tensor forward(const Tensor& s, std::span<const int> t, std::span<const int> labels) const;

  struct TrainCache {
    nn::ForwardCache trunk;
    Tensor trunk_input;          // [B, D+E]
    std::vector<int> labels;     // embedding rows used
  };
  Tensor forward(const Tensor& s, std::span<const int> t, std::span<const int> labels,
                 TrainCache& cache) const;

  struct Grads {
    std::vector<double> trunk;
    std::vector<double> embed;
  };
  Grads backward(const TrainCache& cache, const Tensor& d_out) const;

  std::vector<double> time_embedding(int t) const;

 private:
  Tensor build_trunk_input(const Tensor& s, std::span<const int> t,
                           std::span<const int> labels) const;

  EpsNetConfig cfg_;
  nn::ClassifierModel trunk_;
  std::vector<double> embed_;  // (num_classes + 1) x emb_dim, row-major
};

struct EpsTrainConfig {
  int epochs = 60;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  double cond_dropout = 0.1;
};

/// Noise-prediction MSE training (loss summed over dims, mean over batch).
/// Returns the per-epoch mean loss curve.
std::vector<double> train_epsnet(EpsNet& net, const Tensor& x0, std::span<const int> labels,
                                 const NoiseSchedule& sched, const EpsTrainConfig& cfg, Rng& rng);

/// Hook for modifying the predicted noise at each reverse step (guidance).
using EpsModifier =
    std::function<Tensor(const Tensor& s_t, int t, const Tensor& eps_raw)>;

/// Shared reverse-sampling loop: s_T ~ N(0,I) from rng, then DDIM steps down
/// the given timestep sequence. The modifier, when set, replaces eps_raw;
/// it must not consume rng.
Tensor sample_loop(const EpsNet& net, const NoiseSchedule& sched, std::span<const int> labels,
                   const std::vector<int>& steps, Rng& rng, const EpsModifier& modify = {});

/// Unguided class-conditional sampling: n draws of class y (or uncond).
Tensor sample(const EpsNet& net, const NoiseSchedule& sched, int y, int n, int sample_steps,
              std::uint64_t seed);

}  // namespace flmg::diffusion
