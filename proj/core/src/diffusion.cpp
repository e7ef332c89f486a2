#include "flmg/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace flmg::diffusion {

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > T) throw std::out_of_range("timestep out of range [1, T]");
}

double NoiseSchedule::sigma_to(int t, int t_prev) const {
  check_t(t);
  if (t_prev < 0 || t_prev >= t) throw std::out_of_range("t_prev must satisfy 0 <= t_prev < t");
  const double ab_t = alpha_bar[t];
  const double ab_p = alpha_bar[t_prev];
  return eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max, double eta) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw std::invalid_argument("betas must satisfy 0 < beta_min <= beta_max < 1");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
  NoiseSchedule s;
  s.T = T;
  s.eta = eta;
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
    s.beta[t] = beta_min + (beta_max - beta_min) * frac;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

Tensor q_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps,
                const NoiseSchedule& sched) {
  x0.require_2d();
  check_same_shape(x0, eps, "q_sample");
  if (t.size() != x0.rows()) throw std::invalid_argument("q_sample: one timestep per row");
  Tensor out = Tensor::zeros({x0.rows(), x0.cols()});
  for (std::size_t b = 0; b < x0.rows(); ++b) {
    sched.check_t(t[b]);
    const double ab = sched.alpha_bar[t[b]];
    const double c0 = std::sqrt(ab);
    const double c1 = std::sqrt(1.0 - ab);
    auto xr = x0.row(b);
    auto er = eps.row(b);
    auto orow = out.row(b);
    for (std::size_t i = 0; i < x0.cols(); ++i) orow[i] = c0 * xr[i] + c1 * er[i];
  }
  return out;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  std::vector<int> ts(x0.rows(), t);
  return q_sample(x0, ts, eps, sched);
}

Tensor predict_x0(const Tensor& s_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
  s_t.require_2d();
  check_same_shape(s_t, eps_hat, "predict_x0");
  sched.check_t(t);
  const double ab = sched.alpha_bar[t];
  const double c1 = std::sqrt(1.0 - ab);
  const double inv = 1.0 / std::sqrt(ab);
  Tensor out = Tensor::zeros({s_t.rows(), s_t.cols()});
  const auto sv = s_t.data();
  const auto ev = eps_hat.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = (sv[i] - c1 * ev[i]) * inv;
  return out;
}

Tensor ddim_step_to(const Tensor& s_t, const Tensor& eps_hat, int t, int t_prev,
                    const NoiseSchedule& sched, const Tensor* noise_draw) {
  const double sig = sched.sigma_to(t, t_prev);
  const double ab_p = sched.alpha_bar[t_prev];
  const double dir_sq = 1.0 - ab_p - sig * sig;
  if (dir_sq < -1e-12)
    throw std::invalid_argument("ddim_step: 1 - alpha_bar_prev - sigma^2 < 0");
  const double c_dir = std::sqrt(std::max(dir_sq, 0.0));
  const double c0 = std::sqrt(ab_p);
  Tensor x0 = predict_x0(s_t, eps_hat, t, sched);
  Tensor out = Tensor::zeros({s_t.rows(), s_t.cols()});
  const auto xv = x0.data();
  const auto ev = eps_hat.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c0 * xv[i] + c_dir * ev[i];
  if (sig > 0.0) {
    if (!noise_draw) throw std::invalid_argument("ddim_step: sigma > 0 needs a noise draw");
    check_same_shape(s_t, *noise_draw, "ddim_step noise");
    const auto nv = noise_draw->data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += sig * nv[i];
  }
  return out;
}

Tensor ddim_step(const Tensor& s_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                 const Tensor* noise_draw) {
  return ddim_step_to(s_t, eps_hat, t, t - 1, sched, noise_draw);
}

std::vector<int> make_sample_steps(int T, int n) {
  if (T < 1) throw std::invalid_argument("T must be positive");
  if (n < 1 || n > T) throw std::invalid_argument("sample step count must lie in [1, T]");
  std::vector<int> steps;
  steps.reserve(n);
  for (int i = n; i >= 1; --i) {
    const int t = static_cast<int>(std::lround(static_cast<double>(T) * i / n));
    if (steps.empty() || steps.back() != t) steps.push_back(std::max(t, 1));
  }
  return steps;
}

void EpsNetConfig::validate() const {
  if (data_dim < 1) throw std::invalid_argument("eps net data_dim must be positive");
  if (num_classes < 1) throw std::invalid_argument("eps net num_classes must be positive");
  if (emb_dim < 2 || emb_dim % 2 != 0)
    throw std::invalid_argument("eps net emb_dim must be even and >= 2");
  if (hidden.empty()) throw std::invalid_argument("eps net needs at least one hidden layer");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("eps net hidden dims must be positive");
}

namespace {

std::vector<nn::LayerSpec> trunk_arch(const EpsNetConfig& cfg) {
  std::vector<nn::LayerSpec> layers;
  int cur = cfg.data_dim + cfg.emb_dim;
  for (int h : cfg.hidden) {
    layers.push_back(nn::LayerSpec::linear(cur, h));
    layers.push_back(nn::LayerSpec::relu());
    cur = h;
  }
  layers.push_back(nn::LayerSpec::linear(cur, cfg.data_dim));
  return layers;
}

}  // namespace

EpsNet::EpsNet(EpsNetConfig cfg, std::uint64_t init_seed)
    : cfg_([&] {
        cfg.validate();
        return cfg;
      }()),
      trunk_(trunk_arch(cfg_), derive_seed(init_seed, 0)) {
  Rng rng(derive_seed(init_seed, 1));
  const std::size_t rows = static_cast<std::size_t>(cfg_.num_classes) + 1;
  embed_.resize(rows * cfg_.emb_dim);
  const double bound = std::sqrt(3.0 / cfg_.emb_dim);
  for (double& v : embed_) v = rng.uniform(-bound, bound);
}

std::vector<double> EpsNet::time_embedding(int t) const {
  const int half = cfg_.emb_dim / 2;
  std::vector<double> e(cfg_.emb_dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[2 * i] = std::sin(t * freq);
    e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

Tensor EpsNet::build_trunk_input(const Tensor& s, std::span<const int> t,
                                 std::span<const int> labels) const {
  s.require_2d();
  if (static_cast<int>(s.cols()) != cfg_.data_dim)
    throw std::invalid_argument("eps net input width mismatch");
  const std::size_t batch = s.rows();
  if (t.size() != batch || labels.size() != batch)
    throw std::invalid_argument("eps net needs one timestep and label per row");
  const std::size_t width = static_cast<std::size_t>(cfg_.data_dim) + cfg_.emb_dim;
  Tensor in = Tensor::zeros({batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || y > cfg_.num_classes)
      throw std::invalid_argument("eps net label out of range (num_classes is unconditional)");
    auto sr = s.row(b);
    auto ir = in.row(b);
    std::copy(sr.begin(), sr.end(), ir.begin());
    const auto temb = time_embedding(t[b]);
    const double* crow = embed_.data() + static_cast<std::size_t>(y) * cfg_.emb_dim;
    for (int i = 0; i < cfg_.emb_dim; ++i) ir[cfg_.data_dim + i] = temb[i] + crow[i];
  }
  return in;
}

Tensor EpsNet::forward(const Tensor& s, std::span<const int> t,
                       std::span<const int> labels) const {
  Tensor in = build_trunk_input(s, t, labels);
  Tensor out = trunk_.forward(in, nn::Mode::Eval);
  if (cfg_.input_skip) {
    auto ov = out.data();
    const auto sv = s.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += sv[i];
  }
  return out;
}

Tensor EpsNet::forward(const Tensor& s, std::span<const int> t, std::span<const int> labels,
                       TrainCache& cache) const {
  cache.trunk_input = build_trunk_input(s, t, labels);
  cache.labels.assign(labels.begin(), labels.end());
  Tensor out = trunk_.forward(cache.trunk_input, nn::Mode::Eval, &cache.trunk);
  if (cfg_.input_skip) {
    auto ov = out.data();
    const auto sv = s.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += sv[i];
  }
  return out;
}

EpsNet::Grads EpsNet::backward(const TrainCache& cache, const Tensor& d_out) const {
  nn::Gradients tg = trunk_.backward(cache.trunk, d_out);
  Grads g;
  g.trunk = std::move(tg.params);
  g.embed.assign(embed_.size(), 0.0);
  // embedding gradient: columns data_dim.. of the trunk input gradient,
  // scattered into the rows actually used
  for (std::size_t b = 0; b < cache.labels.size(); ++b) {
    auto ir = tg.input.row(b);
    double* erow = g.embed.data() + static_cast<std::size_t>(cache.labels[b]) * cfg_.emb_dim;
    for (int i = 0; i < cfg_.emb_dim; ++i) erow[i] += ir[cfg_.data_dim + i];
  }
  return g;
}

std::vector<double> train_epsnet(EpsNet& net, const Tensor& x0, std::span<const int> labels,
                                 const NoiseSchedule& sched, const EpsTrainConfig& cfg,
                                 Rng& rng) {
  x0.require_2d();
  const std::size_t n = x0.rows();
  if (n == 0) throw std::invalid_argument("empty diffusion training corpus");
  if (labels.size() != n) throw std::invalid_argument("label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= net.config().num_classes)
      throw std::invalid_argument("diffusion corpus label out of range");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw std::invalid_argument("bad training config");
  if (!(cfg.cond_dropout >= 0.0 && cfg.cond_dropout < 1.0))
    throw std::invalid_argument("cond_dropout must lie in [0, 1)");

  const std::size_t d = x0.cols();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> curve;
  curve.reserve(cfg.epochs);
  std::vector<double> vel_trunk, vel_embed;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(perm);
    double sq_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, n - start);
      Tensor xb = Tensor::zeros({bsz, d});
      std::vector<int> tb(bsz), yb(bsz);
      for (std::size_t j = 0; j < bsz; ++j) {
        const std::size_t idx = perm[start + j];
        auto src = x0.row(idx);
        auto dst = xb.row(j);
        std::copy(src.begin(), src.end(), dst.begin());
        yb[j] = labels[idx];
      }
      for (std::size_t j = 0; j < bsz; ++j)
        tb[j] = static_cast<int>(rng.uniform_int(1, sched.T));
      Tensor eps = Tensor::zeros({bsz, d});
      rng.fill_normal(eps.data());
      for (std::size_t j = 0; j < bsz; ++j)
        if (cfg.cond_dropout > 0.0 && rng.uniform() < cfg.cond_dropout)
          yb[j] = net.uncond_label();

      Tensor st = q_sample(xb, tb, eps, sched);
      EpsNet::TrainCache cache;
      Tensor pred = net.forward(st, tb, yb, cache);
      Tensor d_pred = Tensor::zeros({bsz, d});
      const double invb = 1.0 / static_cast<double>(bsz);
      double batch_sq = 0.0;
      for (std::size_t i = 0; i < pred.data().size(); ++i) {
        const double r = pred.data()[i] - eps.data()[i];
        batch_sq += r * r;
        d_pred.data()[i] = 2.0 * r * invb;
      }
      sq_sum += batch_sq;
      EpsNet::Grads g = net.backward(cache, d_pred);
      nn::sgd_step(net.trunk().mutable_params(), g.trunk, vel_trunk, cfg.lr, cfg.momentum);
      nn::sgd_step(net.mutable_embedding(), g.embed, vel_embed, cfg.lr, cfg.momentum);
    }
    curve.push_back(sq_sum / static_cast<double>(n));
  }
  return curve;
}

Tensor sample_loop(const EpsNet& net, const NoiseSchedule& sched, std::span<const int> labels,
                   const std::vector<int>& steps, Rng& rng, const EpsModifier& modify) {
  if (labels.empty()) return Tensor::zeros({0, static_cast<std::size_t>(net.config().data_dim)});
  if (steps.empty() || steps.front() != sched.T)
    throw std::invalid_argument("sample steps must start at T");
  const std::size_t batch = labels.size();
  const std::size_t d = net.config().data_dim;
  Tensor s = Tensor::zeros({batch, d});
  rng.fill_normal(s.data());
  std::vector<int> tb(batch);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    const int t_prev = (i + 1 < steps.size()) ? steps[i + 1] : 0;
    std::fill(tb.begin(), tb.end(), t);
    Tensor eps_raw = net.forward(s, tb, labels);
    Tensor eps_hat = modify ? modify(s, t, eps_raw) : std::move(eps_raw);
    const double sig = sched.sigma_to(t, t_prev);
    if (sig > 0.0) {
      Tensor noise = Tensor::zeros({batch, d});
      rng.fill_normal(noise.data());
      s = ddim_step_to(s, eps_hat, t, t_prev, sched, &noise);
    } else {
      s = ddim_step_to(s, eps_hat, t, t_prev, sched, nullptr);
    }
  }
  return s;
}

Tensor sample(const EpsNet& net, const NoiseSchedule& sched, int y, int n, int sample_steps,
              std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample count must be non-negative");
  std::vector<int> labels(n, y);
  Rng rng(seed);
  const auto steps = make_sample_steps(sched.T, sample_steps);
  return sample_loop(net, sched, labels, steps, rng);
}

}  // namespace flmg::diffusion
