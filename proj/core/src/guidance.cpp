#include "flmg/guidance.hpp"

#include <cmath>
#include <stdexcept>

#include "flmg/parallel.hpp"

namespace flmg::guidance {

void GuidanceConfig::validate() const {
  if (lambda_bn < 0.0 || lambda_ce < 0.0 || guide_scale < 0.0)
    throw std::invalid_argument("guidance weights must be non-negative");
  if (batch_size < 2) throw std::invalid_argument("guidance batch_size must be >= 2");
  if (sample_steps < 1) throw std::invalid_argument("sample_steps must be >= 1");
}

LossWithGrad bn_loss(const Tensor& x_batch, const nn::ClassifierModel& model) {
  x_batch.require_2d();
  if (x_batch.rows() < 2) throw std::invalid_argument("bn_loss needs a batch of >= 2");
  if (model.num_bn_layers() == 0)
    throw std::invalid_argument("bn_loss needs a model with BatchNorm layers");

  nn::ForwardCache cache;
  Tensor logits = model.forward(x_batch, nn::Mode::BatchStats, &cache);
  const auto& stats = model.bn_stats();

  LossWithGrad r;
  std::vector<nn::BnStatGrad> inj(stats.size());
  for (std::size_t l = 0; l < stats.size(); ++l) {
    const auto& bc = cache.bn[l];
    const auto& st = stats[l];
    const std::size_t dim = st.mean.size();
    inj[l].d_mean.assign(dim, 0.0);
    inj[l].d_var.assign(dim, 0.0);
    for (std::size_t c = 0; c < dim; ++c) {
      const double dm = bc.mean[c] - st.mean[c];
      const double dv = bc.var[c] - st.var[c];
      r.loss += dm * dm + dv * dv;
      inj[l].d_mean[c] = 2.0 * dm;
      inj[l].d_var[c] = 2.0 * dv;
    }
  }
  Tensor d_logits = Tensor::zeros({logits.rows(), logits.cols()});
  nn::Gradients g = model.backward(cache, d_logits, &inj);
  r.d_x = std::move(g.input);
  return r;
}

LossWithGrad guidance_loss(const Tensor& x_batch, std::span<const int> labels,
                           const nn::ClassifierModel& model, const GuidanceConfig& cfg) {
  x_batch.require_2d();
  LossWithGrad r;
  r.d_x = Tensor::zeros({x_batch.rows(), x_batch.cols()});
  if (cfg.lambda_ce > 0.0) {
    nn::ForwardCache cache;
    Tensor logits = model.forward(x_batch, nn::Mode::Eval, &cache);
    auto ce = nn::cross_entropy(logits, labels);
    nn::Gradients g = model.backward(cache, ce.d_logits);
    r.loss += cfg.lambda_ce * ce.loss;
    auto dst = r.d_x.data();
    const auto src = g.input.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += cfg.lambda_ce * src[i];
  }
  if (cfg.lambda_bn > 0.0) {
    LossWithGrad bn = bn_loss(x_batch, model);
    r.loss += cfg.lambda_bn * bn.loss;
    auto dst = r.d_x.data();
    const auto src = bn.d_x.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += cfg.lambda_bn * src[i];
  }
  return r;
}

double apply_guidance(double eps, double coeff, double scale, double g) {
  return eps - coeff * scale * g;
}

namespace {

Tensor guide_from_raw(const Tensor& s_t, int t, const Tensor& eps_raw,
                      std::span<const int> labels, const nn::ClassifierModel& model,
                      const diffusion::NoiseSchedule& sched, const GuidanceConfig& cfg) {
  Tensor x0 = diffusion::predict_x0(s_t, eps_raw, t, sched);
  LossWithGrad lg = guidance_loss(x0, labels, model, cfg);
  const double ab = sched.alpha_bar[t];
  const double d_x0_d_s = 1.0 / std::sqrt(ab);  // stop-gradient through the noise net
  const double coeff = std::sqrt(1.0 - ab);
  Tensor out = Tensor::zeros({s_t.rows(), s_t.cols()});
  auto ov = out.data();
  const auto ev = eps_raw.data();
  const auto gv = lg.d_x.data();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double g_loss = d_x0_d_s * gv[i];  // d loss / d s_t
    ov[i] = apply_guidance(ev[i], coeff, cfg.guide_scale, -g_loss);
  }
  return out;
}

}  // namespace

Tensor guided_eps(const Tensor& s_t, int t, std::span<const int> labels,
                  const diffusion::EpsNet& net, const nn::ClassifierModel& model,
                  const diffusion::NoiseSchedule& sched, const GuidanceConfig& cfg) {
  cfg.validate();
  s_t.require_2d();
  std::vector<int> tb(s_t.rows(), t);
  Tensor eps_raw = net.forward(s_t, tb, labels);
  if (!cfg.active()) return eps_raw;
  return guide_from_raw(s_t, t, eps_raw, labels, model, sched, cfg);
}

Tensor generate_batch(const diffusion::EpsNet& net, const nn::ClassifierModel* model,
                      const diffusion::NoiseSchedule& sched, std::span<const int> labels,
                      const GuidanceConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto steps = diffusion::make_sample_steps(sched.T, cfg.sample_steps);
  diffusion::EpsModifier modify;
  if (model != nullptr && cfg.active()) {
    std::vector<int> labels_copy(labels.begin(), labels.end());
    modify = [model, &sched, &cfg, labels_copy](const Tensor& s, int t,
                                                const Tensor& eps_raw) -> Tensor {
      return guide_from_raw(s, t, eps_raw, labels_copy, *model, sched, cfg);
    };
  }
  return diffusion::sample_loop(net, sched, labels, steps, rng, modify);
}

std::vector<GenSample> generate_labeled(const diffusion::EpsNet& net,
                                        const nn::ClassifierModel* model, int client_id,
                                        std::span<const int> labels_wanted,
                                        const diffusion::NoiseSchedule& sched,
                                        const GuidanceConfig& cfg, std::uint64_t seed,
                                        int threads) {
  cfg.validate();
  const std::size_t count = labels_wanted.size();
  if (count == 0) return {};
  const std::size_t bsz = cfg.batch_size;
  const std::size_t num_batches = (count + bsz - 1) / bsz;
  std::vector<Tensor> batches(num_batches);
  std::vector<std::vector<int>> batch_labels(num_batches);
  for (std::size_t b = 0; b < num_batches; ++b) {
    batch_labels[b].resize(bsz);
    for (std::size_t j = 0; j < bsz; ++j)
      batch_labels[b][j] = labels_wanted[(b * bsz + j) % count];  // wraparound padding
  }
  parallel_for(num_batches, threads, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    batches[b] = generate_batch(net, model, sched, batch_labels[b], cfg, rng);
  });
  std::vector<GenSample> out;
  out.reserve(count);
  for (std::size_t b = 0; b < num_batches && out.size() < count; ++b) {
    for (std::size_t j = 0; j < bsz && out.size() < count; ++j) {
      GenSample s;
      auto row = batches[b].row(j);
      s.x.assign(row.begin(), row.end());
      s.label = batch_labels[b][j];
      s.client_id = client_id;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<GenSample> generate_guided(const diffusion::EpsNet& net,
                                       const nn::ClassifierModel& model, int client_id, int y,
                                       int count, const diffusion::NoiseSchedule& sched,
                                       const GuidanceConfig& cfg, std::uint64_t seed,
                                       int threads) {
  if (count < 1) throw std::invalid_argument("generate_guided needs count >= 1");
  std::vector<int> labels(count, y);
  return generate_labeled(net, &model, client_id, labels, sched, cfg, seed, threads);
}

}  // namespace flmg::guidance
