#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "flmg/data.hpp"
#include "flmg/nn.hpp"
#include "flmg/rng.hpp"
#include "flmg/tensor.hpp"

using namespace flmg;
using data::ClientData;
using data::Dataset;
using data::ToyCorpusConfig;

namespace {

ToyCorpusConfig small_cfg() {
  ToyCorpusConfig cfg;
  cfg.image_side = 8;
  cfg.num_classes = 3;
  cfg.num_contexts = 4;
  cfg.per_cell = 10;
  cfg.noise = 0.05;
  cfg.seed = 11;
  return cfg;
}

// Plain full-batch softmax-regression trainer, used as a probing tool.
double train_probe_accuracy(const Tensor& x_train, const std::vector<int>& y_train,
                            const Tensor& x_eval, const std::vector<int>& y_eval,
                            int num_classes, int steps) {
  nn::ClassifierModel probe(nn::mlp_arch(static_cast<int>(x_train.cols()), {}, num_classes),
                            123);
  nn::SgdOptimizer opt(0.5, 0.9);
  for (int it = 0; it < steps; ++it) {
    nn::ForwardCache cache;
    Tensor logits = probe.forward(x_train, nn::Mode::Eval, &cache);
    auto ce = nn::cross_entropy(logits, y_train);
    auto g = probe.backward(cache, ce.d_logits);
    opt.step(probe, g.params);
  }
  Tensor logits = probe.forward(x_eval, nn::Mode::Eval);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    if (static_cast<int>(best) == y_eval[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

}  // namespace

TEST_CASE("corpus config validation") {
  ToyCorpusConfig cfg = small_cfg();
  cfg.image_side = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.num_contexts = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.noise = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(small_cfg().dim() == 64);
}

TEST_CASE("make_corpus is deterministic and exactly counted") {
  auto cfg = small_cfg();
  Dataset a = data::make_corpus(cfg);
  Dataset b = data::make_corpus(cfg);
  REQUIRE(a.size() == b.size());
  CHECK(a.size() == 3u * 4u * 10u);
  CHECK(a.dim == 64);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].x == b.samples[i].x);
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].context == b.samples[i].context);
  }

  cfg.seed = 12;
  Dataset c = data::make_corpus(cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.size() && !differs; ++i) differs = a.samples[i].x != c.samples[i].x;
  CHECK(differs);

  std::map<std::pair<int, int>, int> cells;
  for (const auto& s : a.samples) {
    cells[{s.label, s.context}]++;
    CHECK(s.x.size() == 64);
    for (double v : s.x) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
  REQUIRE(cells.size() == 12);
  for (const auto& [cell, n] : cells) CHECK(n == 10);
}

TEST_CASE("dataset bookkeeping helpers") {
  auto ds = data::make_corpus(small_cfg());
  CHECK(ds.labels().size() == ds.size());
  CHECK(ds.label_set() == std::vector<int>({0, 1, 2}));
  auto counts = ds.class_counts();
  REQUIRE(counts.size() == 3);
  for (int c : counts) CHECK(c == 40);
  Tensor t = ds.to_tensor();
  CHECK(t.rows() == ds.size());
  CHECK(t.cols() == 64);
}

TEST_CASE("feature-skew partition is an exact stratified split by context") {
  auto cfg = small_cfg();
  auto corpus = data::make_corpus(cfg);
  auto clients = data::partition_feature_skew(corpus, 4, 5);
  REQUIRE(clients.size() == 4);

  std::size_t total = 0;
  for (const auto& cd : clients) {
    for (const auto& s : cd.train.samples) CHECK(s.context == cd.client_id);
    for (const auto& s : cd.test.samples) CHECK(s.context == cd.client_id);
    CHECK(cd.train.label_set() == std::vector<int>({0, 1, 2}));
    // per class: 10 samples split 8/2
    auto tr = cd.train.class_counts();
    auto te = cd.test.class_counts();
    for (int c = 0; c < 3; ++c) {
      CHECK(tr[c] == 8);
      CHECK(te[c] == 2);
    }
    total += cd.train.size() + cd.test.size();
  }
  CHECK(total == corpus.size());

  CHECK_THROWS_AS(data::partition_feature_skew(corpus, 5, 5), std::invalid_argument);
  CHECK_THROWS_AS(data::partition_feature_skew(corpus, 0, 5), std::invalid_argument);
}

TEST_CASE("near-infinite alpha makes label skew uniform") {
  auto cfg = small_cfg();
  cfg.num_contexts = 1;
  cfg.per_cell = 200;  // 600 samples
  auto corpus = data::make_corpus(cfg);
  auto clients = data::partition_label_skew(corpus, 3, 1e6, 9);
  REQUIRE(clients.size() == 3);
  std::size_t total = 0;
  for (const auto& cd : clients) {
    const double n = static_cast<double>(cd.train.size() + cd.test.size());
    auto tr = cd.train.class_counts();
    auto te = cd.test.class_counts();
    for (int c = 0; c < 3; ++c) {
      const double share = (tr[c] + te[c]) / n;
      CHECK(share == doctest::Approx(1.0 / 3).epsilon(0.05));
    }
    total += cd.train.size() + cd.test.size();
  }
  CHECK(total == corpus.size());
}

TEST_CASE("strong label skew concentrates classes") {
  auto cfg = small_cfg();
  cfg.num_contexts = 1;
  cfg.per_cell = 120;
  auto corpus = data::make_corpus(cfg);
  bool concentrated = false;
  for (std::uint64_t seed = 1; seed <= 5 && !concentrated; ++seed) {
    auto clients = data::partition_label_skew(corpus, 3, 0.1, seed);
    std::size_t total = 0;
    for (const auto& cd : clients) {
      auto tr = cd.train.class_counts();
      auto te = cd.test.class_counts();
      const double n = static_cast<double>(cd.train.size() + cd.test.size());
      total += cd.train.size() + cd.test.size();
      for (int c = 0; c < 3; ++c)
        if ((tr[c] + te[c]) / n >= 0.6) concentrated = true;
    }
    CHECK(total == corpus.size());  // conservation under every draw
  }
  CHECK(concentrated);
  CHECK_THROWS_AS(data::partition_label_skew(corpus, 3, 0.0, 1), std::invalid_argument);
}

TEST_CASE("server corpus honors the overlap knob with nested contexts") {
  auto cfg = small_cfg();
  auto full = data::server_corpus(cfg, 1.0);
  std::set<int> all_ctx;
  for (const auto& s : full.samples) all_ctx.insert(s.context);
  CHECK(all_ctx == std::set<int>({0, 1, 2, 3}));
  CHECK(full.size() == 3u * 4u * 10u);

  auto get_ctx = [&](double overlap) {
    std::set<int> ctx;
    for (const auto& s : data::server_corpus(cfg, overlap).samples) ctx.insert(s.context);
    return ctx;
  };
  auto low = get_ctx(0.0);  // clamps to one kept context
  CHECK(low.size() == 1);
  auto third = get_ctx(0.33);
  auto two_thirds = get_ctx(0.66);
  CHECK(third.size() <= two_thirds.size());
  CHECK(std::includes(two_thirds.begin(), two_thirds.end(), third.begin(), third.end()));
  CHECK(std::includes(all_ctx.begin(), all_ctx.end(), two_thirds.begin(), two_thirds.end()));

  CHECK_THROWS_AS(data::server_corpus(cfg, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(data::server_corpus(cfg, -0.1), std::invalid_argument);

  // fresh draw, not a copy of the client corpus
  auto client_corpus = data::make_corpus(cfg);
  bool same = full.samples[0].x == client_corpus.samples[0].x;
  CHECK_FALSE(same);
}

TEST_CASE("contexts are linearly separable styles") {
  ToyCorpusConfig cfg;  // default 12x12, 4 classes, 4 contexts, 50 per cell
  auto corpus = data::make_corpus(cfg);
  Tensor x = corpus.to_tensor();
  std::vector<int> ctx(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) ctx[i] = corpus.samples[i].context;
  const double acc = train_probe_accuracy(x, ctx, x, ctx, cfg.num_contexts, 250);
  CHECK(acc >= 0.90);
}

TEST_CASE("classifiers trained in one context degrade out of context") {
  ToyCorpusConfig cfg;  // default config
  auto corpus = data::make_corpus(cfg);
  auto clients = data::partition_feature_skew(corpus, 4, 3);
  const auto& home = clients[0];
  Tensor x_train = home.train.to_tensor();
  auto y_train = home.train.labels();

  Tensor x_home = home.test.to_tensor();
  auto y_home = home.test.labels();
  const double in_ctx =
      train_probe_accuracy(x_train, y_train, x_home, y_home, cfg.num_classes, 250);

  double cross = 0.0;
  for (int k = 1; k < 4; ++k) {
    Tensor x_away = clients[static_cast<std::size_t>(k)].test.to_tensor();
    auto y_away = clients[static_cast<std::size_t>(k)].test.labels();
    cross += train_probe_accuracy(x_train, y_train, x_away, y_away, cfg.num_classes, 250);
  }
  cross /= 3.0;
  CHECK(in_ctx - cross >= 0.10);
}
