#include "flmg/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "flmg/rng.hpp"

namespace flmg::data {

Tensor Dataset::to_tensor() const {
  Tensor t = Tensor::zeros({samples.size(), static_cast<std::size_t>(dim)});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<int>(samples[i].x.size()) != dim)
      throw std::logic_error("dataset sample dim mismatch");
    auto row = t.row(i);
    std::copy(samples[i].x.begin(), samples[i].x.end(), row.begin());
  }
  return t;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> y(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) y[i] = samples[i].label;
  return y;
}

std::vector<int> Dataset::label_set() const {
  std::set<int> s;
  for (const auto& sm : samples) s.insert(sm.label);
  return {s.begin(), s.end()};
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(num_classes, 0);
  for (const auto& sm : samples) {
    if (sm.label < 0 || sm.label >= num_classes)
      throw std::logic_error("dataset label outside num_classes");
    ++counts[sm.label];
  }
  return counts;
}

void ToyCorpusConfig::validate() const {
  if (image_side < 4) throw std::invalid_argument("image_side must be >= 4");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (num_contexts < 1) throw std::invalid_argument("num_contexts must be >= 1");
  if (per_cell < 1) throw std::invalid_argument("per_cell must be >= 1");
  if (noise < 0.0) throw std::invalid_argument("noise must be non-negative");
}

namespace {

struct ContextStyle {
  double base;      // background brightness
  double ramp;      // ramp strength
  bool horizontal;  // ramp direction
  double tex_freq;  // texture cycles across the image
  double tex_phase;
  double contrast;
};

ContextStyle context_style(int k) {
  ContextStyle st;
  st.base = -0.50 + 0.30 * (k % 4);
  st.ramp = 0.25 + 0.10 * (k % 3);
  st.horizontal = (k % 2) == 0;
  st.tex_freq = 1.0 + (k % 4);
  st.tex_phase = 0.7 * k;
  st.contrast = 0.70 + 0.15 * (k % 3);
  return st;
}

// Foreground glyph: additive brightness mask, positioned by class and
// shifted by a per-sample integer jitter.
void draw_glyph(std::vector<double>& img, int side, int label, int jx, int jy) {
  const double amp = 1.5;
  const int kind = label % 3;
  const int variant = label / 3;
  auto put = [&](int r, int c) {
    r += jy;
    c += jx;
    if (r >= 0 && r < side && c >= 0 && c < side) img[r * side + c] += amp;
  };
  if (kind == 0) {  // two thick horizontal bars
    const int r0 = 2 + (3 * variant) % std::max(1, side - 7);
    for (int c = 1; c < side - 1; ++c)
      for (int dr : {0, 1, 4, 5}) put(r0 + dr, c);
  } else if (kind == 1) {  // plus-shaped cross
    const int cx = side / 2 - 1 + (2 * variant) % std::max(1, side / 2 - 2);
    const int cy = side / 2 - 1 - (2 * variant) % std::max(1, side / 2 - 2);
    for (int d = -3; d <= 3; ++d) {
      put(cx + d, cy);
      put(cx + d, cy + 1);
      put(cx, cy + d);
      put(cx + 1, cy + d);
    }
  } else {  // two gaussian blobs on opposite corners
    const double sg = 1.4;
    const double ax = 3.0 + (variant % 3);
    const double ay = 3.0;
    const double bx = side - 4.0 - (variant % 3);
    const double by = side - 4.0;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const double rr = r - jy, cc = c - jx;
        const double d1 = (rr - ay) * (rr - ay) + (cc - ax) * (cc - ax);
        const double d2 = (rr - by) * (rr - by) + (cc - bx) * (cc - bx);
        img[r * side + c] +=
            amp * (std::exp(-d1 / (2 * sg * sg)) + std::exp(-d2 / (2 * sg * sg)));
      }
  }
}

std::vector<double> render(int side, int label, int context, int jx, int jy, double noise,
                           Rng& rng) {
  const ContextStyle st = context_style(context);
  std::vector<double> img(static_cast<std::size_t>(side) * side, 0.0);
  constexpr double two_pi = 6.283185307179586;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const double coord = st.horizontal ? c : r;
      const double ramp = st.ramp * (2.0 * coord / (side - 1) - 1.0);
      const double tex =
          0.12 * std::sin(two_pi * st.tex_freq * (r + c) / side + st.tex_phase);
      img[r * side + c] = st.base + ramp + tex;
    }
  draw_glyph(img, side, label, jx, jy);
  for (double& v : img) {
    v = st.contrast * v + noise * rng.normal();
    v = std::clamp(v, -1.0, 1.0);
  }
  return img;
}

}  // namespace

Dataset make_corpus(const ToyCorpusConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.dim = cfg.dim();
  ds.num_classes = cfg.num_classes;
  ds.num_contexts = cfg.num_contexts;
  ds.samples.reserve(static_cast<std::size_t>(cfg.num_classes) * cfg.num_contexts *
                     cfg.per_cell);
  Rng rng(cfg.seed);
  for (int k = 0; k < cfg.num_contexts; ++k)
    for (int c = 0; c < cfg.num_classes; ++c)
      for (int i = 0; i < cfg.per_cell; ++i) {
        const int jx = static_cast<int>(rng.uniform_int(-1, 1));
        const int jy = static_cast<int>(rng.uniform_int(-1, 1));
        Sample s;
        s.label = c;
        s.context = k;
        s.x = render(cfg.image_side, c, k, jx, jy, cfg.noise, rng);
        ds.samples.push_back(std::move(s));
      }
  return ds;
}

namespace {

Dataset empty_like(const Dataset& src) {
  Dataset d;
  d.dim = src.dim;
  d.num_classes = src.num_classes;
  d.num_contexts = src.num_contexts;
  return d;
}

/// 80/20 stratified split of the given sample indices (by class).
ClientData split_client(const Dataset& corpus, int client_id,
                        const std::vector<std::size_t>& indices, Rng& rng) {
  ClientData cd;
  cd.client_id = client_id;
  cd.train = empty_like(corpus);
  cd.test = empty_like(corpus);
  std::vector<std::vector<std::size_t>> by_class(corpus.num_classes);
  for (std::size_t idx : indices) by_class[corpus.samples[idx].label].push_back(idx);
  for (auto& cls : by_class) {
    if (cls.empty()) continue;
    rng.shuffle(cls);
    const std::size_t n_train = std::max<std::size_t>(1, cls.size() * 4 / 5);
    for (std::size_t i = 0; i < cls.size(); ++i) {
      auto& dst = (i < n_train) ? cd.train : cd.test;
      dst.samples.push_back(corpus.samples[cls[i]]);
    }
  }
  return cd;
}

}  // namespace

std::vector<ClientData> partition_feature_skew(const Dataset& corpus, int K,
                                               std::uint64_t seed) {
  if (K < 1) throw std::invalid_argument("need at least one client");
  if (K > corpus.num_contexts)
    throw std::invalid_argument("feature-skew partition needs K <= num_contexts");
  std::vector<ClientData> clients;
  clients.reserve(K);
  for (int k = 0; k < K; ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i)
      if (corpus.samples[i].context == k) idx.push_back(i);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    clients.push_back(split_client(corpus, k, idx, rng));
  }
  return clients;
}

std::vector<ClientData> partition_label_skew(const Dataset& corpus, int K, double alpha,
                                             std::uint64_t seed) {
  if (K < 1) throw std::invalid_argument("need at least one client");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (corpus.empty()) throw std::invalid_argument("empty corpus");

  constexpr int kMaxRetries = 20;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    std::vector<std::vector<std::size_t>> assigned(K);
    for (int c = 0; c < corpus.num_classes; ++c) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < corpus.samples.size(); ++i)
        if (corpus.samples[i].label == c) idx.push_back(i);
      if (idx.empty()) continue;
      rng.shuffle(idx);
      const std::vector<double> w = rng.dirichlet(alpha, K);
      // largest-remainder rounding: counts sum exactly to idx.size()
      std::vector<std::size_t> counts(K);
      std::vector<std::pair<double, int>> rema(K);
      std::size_t used = 0;
      for (int k = 0; k < K; ++k) {
        const double exact = w[k] * static_cast<double>(idx.size());
        counts[k] = static_cast<std::size_t>(exact);
        used += counts[k];
        rema[k] = {exact - static_cast<double>(counts[k]), k};
      }
      std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
      });
      for (std::size_t r = 0; r < idx.size() - used; ++r) ++counts[rema[r].second];
      std::size_t pos = 0;
      for (int k = 0; k < K; ++k)
        for (std::size_t j = 0; j < counts[k]; ++j) assigned[k].push_back(idx[pos++]);
    }
    const bool any_empty =
        std::any_of(assigned.begin(), assigned.end(), [](const auto& v) { return v.empty(); });
    if (any_empty) continue;
    std::vector<ClientData> clients;
    clients.reserve(K);
    for (int k = 0; k < K; ++k) {
      Rng srng(derive_seed(seed, static_cast<std::uint64_t>(attempt),
                           static_cast<std::uint64_t>(k) + 1000));
      clients.push_back(split_client(corpus, k, assigned[k], srng));
    }
    return clients;
  }
  throw std::runtime_error("label-skew partition kept producing empty clients");
}

Dataset server_corpus(const ToyCorpusConfig& cfg, double overlap) {
  cfg.validate();
  if (!(overlap >= 0.0 && overlap <= 1.0))
    throw std::invalid_argument("overlap must lie in [0, 1]");
  const int m = std::clamp(static_cast<int>(std::lround(overlap * cfg.num_contexts)), 1,
                           cfg.num_contexts);
  std::vector<int> order(cfg.num_contexts);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, 0x5ec7u));
  shuffle_rng.shuffle(order);
  order.resize(m);

  ToyCorpusConfig server_cfg = cfg;
  server_cfg.seed = derive_seed(cfg.seed, 0x5e12u);
  Dataset full = make_corpus(server_cfg);
  Dataset out = empty_like(full);
  for (auto& s : full.samples)
    if (std::find(order.begin(), order.end(), s.context) != order.end())
      out.samples.push_back(std::move(s));
  return out;
}

}  // namespace flmg::data
