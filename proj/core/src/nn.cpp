#include "flmg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flmg::nn {

LayerSpec LayerSpec::linear(int in, int out) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("linear layer dims must be positive");
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in_dim = in;
  s.out_dim = out;
  return s;
}

LayerSpec LayerSpec::batch_norm(int dim, double momentum, double eps) {
  if (dim <= 0) throw std::invalid_argument("batch_norm dim must be positive");
  if (!(momentum > 0.0 && momentum <= 1.0))
    throw std::invalid_argument("batch_norm momentum must be in (0, 1]");
  if (!(eps > 0.0)) throw std::invalid_argument("batch_norm eps must be positive");
  LayerSpec s;
  s.kind = LayerKind::BatchNorm;
  s.dim = dim;
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::ReLU;
  return s;
}

std::vector<LayerSpec> mlp_arch(int input_dim, const std::vector<int>& hidden, int num_classes,
                                bool with_batch_norm) {
  std::vector<LayerSpec> layers;
  int cur = input_dim;
  for (int h : hidden) {
    layers.push_back(LayerSpec::linear(cur, h));
    if (with_batch_norm) layers.push_back(LayerSpec::batch_norm(h));
    layers.push_back(LayerSpec::relu());
    cur = h;
  }
  layers.push_back(LayerSpec::linear(cur, num_classes));
  return layers;
}

namespace {

std::size_t layer_param_count(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::Linear:
      return static_cast<std::size_t>(s.in_dim) * s.out_dim + s.out_dim;
    case LayerKind::BatchNorm:
      return 2 * static_cast<std::size_t>(s.dim);
    case LayerKind::ReLU:
      return 0;
  }
  throw std::logic_error("unknown layer kind");
}

}  // namespace

ClassifierModel::ClassifierModel(std::vector<LayerSpec> layers, Rng& init_rng)
    : layers_(std::move(layers)) {
  build();
  init_params(init_rng);
}

ClassifierModel::ClassifierModel(std::vector<LayerSpec> layers, std::uint64_t init_seed)
    : layers_(std::move(layers)) {
  build();
  Rng rng(init_seed);
  init_params(rng);
}

void ClassifierModel::build() {
  validate();
  std::size_t total = 0;
  param_offsets_.reserve(layers_.size());
  for (const auto& s : layers_) {
    param_offsets_.push_back(total);
    total += layer_param_count(s);
  }
  params_.assign(total, 0.0);
  for (const auto& s : layers_) {
    if (s.kind == LayerKind::BatchNorm) {
      BnStats st;
      st.mean.assign(s.dim, 0.0);
      st.var.assign(s.dim, 1.0);
      bn_stats_.push_back(std::move(st));
    }
  }
}

void ClassifierModel::validate() {
  if (layers_.empty()) throw std::invalid_argument("model needs at least one layer");
  int cur = -1;
  for (const auto& s : layers_) {
    switch (s.kind) {
      case LayerKind::Linear:
        if (cur >= 0 && cur != s.in_dim)
          throw std::invalid_argument("linear in_dim does not match previous layer width");
        if (cur < 0) input_dim_ = s.in_dim;
        cur = s.out_dim;
        break;
      case LayerKind::BatchNorm:
        if (cur >= 0 && cur != s.dim)
          throw std::invalid_argument("batch_norm dim does not match previous layer width");
        if (cur < 0) input_dim_ = s.dim;
        cur = s.dim;
        break;
      case LayerKind::ReLU:
        if (cur < 0) throw std::invalid_argument("relu cannot be the first layer");
        break;
    }
  }
  if (layers_.back().kind != LayerKind::Linear)
    throw std::invalid_argument("model must end in a linear head");
  num_classes_ = cur;
}

void ClassifierModel::init_params(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& s = layers_[i];
    double* p = params_.data() + param_offsets_[i];
    if (s.kind == LayerKind::Linear) {
      const double bound = std::sqrt(6.0 / (s.in_dim + s.out_dim));
      const std::size_t w = static_cast<std::size_t>(s.in_dim) * s.out_dim;
      for (std::size_t k = 0; k < w; ++k) p[k] = rng.uniform(-bound, bound);
      // biases stay zero
    } else if (s.kind == LayerKind::BatchNorm) {
      for (int k = 0; k < s.dim; ++k) p[k] = 1.0;  // gamma
      // beta stays zero
    }
  }
}

std::size_t ClassifierModel::stat_count() const {
  std::size_t n = 0;
  for (const auto& st : bn_stats_) n += st.mean.size() + st.var.size();
  return n;
}

void ClassifierModel::set_bn_stats(std::vector<BnStats> stats) {
  if (stats.size() != bn_stats_.size())
    throw std::invalid_argument("bn stats count does not match model");
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (stats[i].mean.size() != bn_stats_[i].mean.size() ||
        stats[i].var.size() != bn_stats_[i].var.size())
      throw std::invalid_argument("bn stats dim does not match model");
  }
  bn_stats_ = std::move(stats);
  ++revision_;
}

std::span<const double> ClassifierModel::layer_params(std::size_t layer_index) const {
  if (layer_index >= layers_.size()) throw std::out_of_range("layer index");
  return {params_.data() + param_offsets_[layer_index], layer_param_count(layers_[layer_index])};
}

Tensor ClassifierModel::forward(const Tensor& x, Mode mode, ForwardCache* cache) {
  std::vector<BnStats>* running = (mode == Mode::Train) ? &bn_stats_ : nullptr;
  if (mode == Mode::Train) ++revision_;
  return run_forward(x, mode, cache, running);
}

Tensor ClassifierModel::forward(const Tensor& x, Mode mode, ForwardCache* cache) const {
  if (mode == Mode::Train)
    throw std::logic_error("Train-mode forward mutates running stats; model is const");
  return run_forward(x, mode, cache, nullptr);
}

Tensor ClassifierModel::run_forward(const Tensor& x, Mode mode, ForwardCache* cache,
                                    std::vector<BnStats>* running) const {
  x.require_2d();
  if (static_cast<int>(x.cols()) != input_dim_)
    throw std::invalid_argument("input width does not match model input_dim");
  const std::size_t batch = x.rows();
  if (batch == 0) throw std::invalid_argument("empty batch");
  if (mode == Mode::Train && batch < 2 && !bn_stats_.empty())
    throw std::invalid_argument("Train mode with batch_norm needs batch >= 2");

  if (cache) {
    cache->mode = mode;
    cache->layer_inputs.clear();
    cache->bn.clear();
    cache->model_identity = this;
  }

  Tensor cur = x;
  std::size_t bn_index = 0;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& s = layers_[li];
    if (cache) cache->layer_inputs.push_back(cur);
    const double* p = params_.data() + param_offsets_[li];
    switch (s.kind) {
      case LayerKind::Linear: {
        Tensor out = Tensor::zeros({batch, static_cast<std::size_t>(s.out_dim)});
        const double* bias = p + static_cast<std::size_t>(s.in_dim) * s.out_dim;
        for (std::size_t b = 0; b < batch; ++b) {
          auto xi = cur.row(b);
          auto yo = out.row(b);
          for (int j = 0; j < s.out_dim; ++j) {
            const double* w = p + static_cast<std::size_t>(j) * s.in_dim;
            double acc = bias[j];
            for (int i = 0; i < s.in_dim; ++i) acc += w[i] * xi[i];
            yo[j] = acc;
          }
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::BatchNorm: {
        const int dim = s.dim;
        std::vector<double> mean(dim, 0.0), var(dim, 0.0), inv_std(dim, 0.0);
        if (mode == Mode::Eval) {
          mean = bn_stats_[bn_index].mean;
          var = bn_stats_[bn_index].var;
        } else {
          for (std::size_t b = 0; b < batch; ++b) {
            auto xi = cur.row(b);
            for (int c = 0; c < dim; ++c) mean[c] += xi[c];
          }
          for (int c = 0; c < dim; ++c) mean[c] /= static_cast<double>(batch);
          for (std::size_t b = 0; b < batch; ++b) {
            auto xi = cur.row(b);
            for (int c = 0; c < dim; ++c) {
              const double d = xi[c] - mean[c];
              var[c] += d * d;
            }
          }
          for (int c = 0; c < dim; ++c) var[c] /= static_cast<double>(batch);
          if (running) {
            auto& st = (*running)[bn_index];
            for (int c = 0; c < dim; ++c) {
              st.mean[c] = (1.0 - s.momentum) * st.mean[c] + s.momentum * mean[c];
              st.var[c] = (1.0 - s.momentum) * st.var[c] + s.momentum * var[c];
            }
          }
        }
        for (int c = 0; c < dim; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + s.eps);
        const double* gamma = p;
        const double* beta = p + dim;
        Tensor x_hat = Tensor::zeros({batch, static_cast<std::size_t>(dim)});
        Tensor out = Tensor::zeros({batch, static_cast<std::size_t>(dim)});
        for (std::size_t b = 0; b < batch; ++b) {
          auto xi = cur.row(b);
          auto xh = x_hat.row(b);
          auto yo = out.row(b);
          for (int c = 0; c < dim; ++c) {
            xh[c] = (xi[c] - mean[c]) * inv_std[c];
            yo[c] = gamma[c] * xh[c] + beta[c];
          }
        }
        if (cache) {
          ForwardCache::BnCache bc;
          bc.mean = std::move(mean);
          bc.var = std::move(var);
          bc.inv_std = std::move(inv_std);
          bc.x_hat = x_hat;
          cache->bn.push_back(std::move(bc));
        }
        cur = std::move(out);
        ++bn_index;
        break;
      }
      case LayerKind::ReLU: {
        Tensor out = cur;
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        cur = std::move(out);
        break;
      }
    }
  }
  if (cache) cache->model_revision = revision_;
  return cur;
}

Gradients ClassifierModel::backward(const ForwardCache& cache, const Tensor& d_logits,
                                    const std::vector<BnStatGrad>* bn_stat_grads) const {
  if (cache.model_identity != this || cache.model_revision != revision_)
    throw std::logic_error("forward cache is stale or belongs to another model");
  if (cache.layer_inputs.size() != layers_.size())
    throw std::logic_error("forward cache layer count mismatch");
  if (bn_stat_grads) {
    if (cache.mode == Mode::Eval)
      throw std::logic_error("bn stat gradients need a batch-statistics forward");
    if (bn_stat_grads->size() != bn_stats_.size())
      throw std::invalid_argument("bn stat gradient count does not match model");
  }
  d_logits.require_2d();
  const std::size_t batch = cache.layer_inputs[0].rows();
  if (d_logits.rows() != batch || static_cast<int>(d_logits.cols()) != num_classes_)
    throw std::invalid_argument("d_logits shape mismatch");

  Gradients g;
  g.params.assign(params_.size(), 0.0);
  Tensor d = d_logits;
  std::size_t bn_index = bn_stats_.size();
  const bool batch_stats = cache.mode != Mode::Eval;

  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& s = layers_[li];
    const Tensor& input = cache.layer_inputs[li];
    const double* p = params_.data() + param_offsets_[li];
    double* gp = g.params.data() + param_offsets_[li];
    switch (s.kind) {
      case LayerKind::Linear: {
        Tensor dx = Tensor::zeros({batch, static_cast<std::size_t>(s.in_dim)});
        double* gb = gp + static_cast<std::size_t>(s.in_dim) * s.out_dim;
        for (std::size_t b = 0; b < batch; ++b) {
          auto db = d.row(b);
          auto xi = input.row(b);
          auto dxi = dx.row(b);
          for (int j = 0; j < s.out_dim; ++j) {
            const double dj = db[j];
            if (dj == 0.0) continue;
            const double* w = p + static_cast<std::size_t>(j) * s.in_dim;
            double* gw = gp + static_cast<std::size_t>(j) * s.in_dim;
            gb[j] += dj;
            for (int i = 0; i < s.in_dim; ++i) {
              gw[i] += dj * xi[i];
              dxi[i] += dj * w[i];
            }
          }
        }
        d = std::move(dx);
        break;
      }
      case LayerKind::BatchNorm: {
        --bn_index;
        const auto& bc = cache.bn[bn_index];
        const int dim = s.dim;
        const double* gamma = p;
        double* d_gamma = gp;
        double* d_beta = gp + dim;
        Tensor dx = Tensor::zeros({batch, static_cast<std::size_t>(dim)});
        // gamma/beta gradients are mode-independent
        for (std::size_t b = 0; b < batch; ++b) {
          auto db = d.row(b);
          auto xh = bc.x_hat.row(b);
          for (int c = 0; c < dim; ++c) {
            d_gamma[c] += db[c] * xh[c];
            d_beta[c] += db[c];
          }
        }
        if (!batch_stats) {
          // running statistics are constants for the input
          for (std::size_t b = 0; b < batch; ++b) {
            auto db = d.row(b);
            auto dxi = dx.row(b);
            for (int c = 0; c < dim; ++c) dxi[c] = db[c] * gamma[c] * bc.inv_std[c];
          }
        } else {
          const double invb = 1.0 / static_cast<double>(batch);
          std::vector<double> d_var(dim, 0.0), d_mean(dim, 0.0), sum_xc(dim, 0.0);
          for (std::size_t b = 0; b < batch; ++b) {
            auto db = d.row(b);
            auto xi = input.row(b);
            for (int c = 0; c < dim; ++c) {
              const double dxh = db[c] * gamma[c];
              const double xc = xi[c] - bc.mean[c];
              d_var[c] += dxh * xc;
              d_mean[c] -= dxh;
              sum_xc[c] += xc;
            }
          }
          for (int c = 0; c < dim; ++c) {
            const double is = bc.inv_std[c];
            d_var[c] *= -0.5 * is * is * is;
            d_mean[c] *= is;
            d_mean[c] += d_var[c] * (-2.0 * invb) * sum_xc[c];
          }
          if (bn_stat_grads) {
            const auto& inj = (*bn_stat_grads)[bn_index];
            if (!inj.d_mean.empty()) {
              if (static_cast<int>(inj.d_mean.size()) != dim ||
                  static_cast<int>(inj.d_var.size()) != dim)
                throw std::invalid_argument("bn stat gradient dim mismatch");
              for (int c = 0; c < dim; ++c) {
                d_mean[c] += inj.d_mean[c];
                d_var[c] += inj.d_var[c];
              }
            }
          }
          for (std::size_t b = 0; b < batch; ++b) {
            auto db = d.row(b);
            auto xi = input.row(b);
            auto dxi = dx.row(b);
            for (int c = 0; c < dim; ++c) {
              const double xc = xi[c] - bc.mean[c];
              dxi[c] = db[c] * gamma[c] * bc.inv_std[c] + d_var[c] * 2.0 * xc * invb +
                       d_mean[c] * invb;
            }
          }
        }
        d = std::move(dx);
        break;
      }
      case LayerKind::ReLU: {
        Tensor dx = d;
        const auto vals = input.data();
        auto dvals = dx.data();
        for (std::size_t k = 0; k < dvals.size(); ++k)
          if (vals[k] <= 0.0) dvals[k] = 0.0;
        d = std::move(dx);
        break;
      }
    }
  }
  g.input = std::move(d);
  return g;
}

CrossEntropyResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  logits.require_2d();
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != batch) throw std::invalid_argument("labels size does not match batch");
  CrossEntropyResult r;
  r.d_logits = Tensor::zeros({batch, classes});
  double total = 0.0;
  const double invb = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::invalid_argument("label out of range");
    auto z = logits.row(b);
    double zmax = z[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
    total += std::log(denom) - (z[y] - zmax);
    auto dz = r.d_logits.row(b);
    for (std::size_t c = 0; c < classes; ++c) {
      const double pc = std::exp(z[c] - zmax) / denom;
      dz[c] = (pc - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * invb;
    }
  }
  r.loss = total * invb;
  return r;
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
  logits.require_2d();
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  Tensor out = Tensor::zeros({logits.rows(), logits.cols()});
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    auto o = out.row(b);
    double zmax = z[0];
    for (std::size_t c = 1; c < logits.cols(); ++c) zmax = std::max(zmax, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      o[c] = std::exp((z[c] - zmax) / temperature);
      denom += o[c];
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) o[c] /= denom;
  }
  return out;
}

void sgd_step(std::span<double> params, std::span<const double> grads,
              std::vector<double>& velocity, double lr, double momentum_coeff) {
  if (params.size() != grads.size()) throw std::invalid_argument("param/grad size mismatch");
  if (velocity.empty()) velocity.assign(params.size(), 0.0);
  if (velocity.size() != params.size())
    throw std::invalid_argument("velocity buffer size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum_coeff * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

void SgdOptimizer::step(ClassifierModel& model, std::span<const double> grads) {
  sgd_step(model.mutable_params(), grads, velocity_, lr_, momentum_);
}

void SgdOptimizer::step(std::span<double> params, std::span<const double> grads) {
  sgd_step(params, grads, velocity_, lr_, momentum_);
}

std::vector<BnStats> extract_bn_stats(const ClassifierModel& model) { return model.bn_stats(); }

}  // namespace flmg::nn
