#include "flmg/federation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "flmg/checkpoint.hpp"
#include "flmg/parallel.hpp"
#include "flmg/rng.hpp"

namespace flmg::fed {

namespace {

constexpr std::uint64_t kInitStream = 0x1217;
constexpr std::uint64_t kShuffleStream = 0x5483;

void check_train_knobs(int epochs, double lr, double momentum, int batch_size) {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
}

struct DistillSpec {
  StrategyKind kind = StrategyKind::MultiTeacher;
  const std::vector<ClientUpdate>* teachers = nullptr;
  double lambda = 0.0;
  double tau = 1.0;
  std::unordered_map<int, const nn::ClassifierModel*> by_id;  // SpecificTeacher lookup
};

/// Mean teacher probability rows for the batch at the configured temperature.
Tensor teacher_probs(const Tensor& xb, std::span<const int> batch_ids, const DistillSpec& spec) {
  const std::size_t m = xb.rows();
  const std::size_t c = static_cast<std::size_t>((*spec.teachers)[0].model.num_classes());
  Tensor q = Tensor::matrix(m, c);
  if (spec.kind == StrategyKind::MultiTeacher) {
    for (const auto& t : *spec.teachers) {
      const Tensor probs = nn::softmax_rows(t.model.forward(xb, nn::Mode::Eval), spec.tau);
      auto qd = q.data();
      const auto pd = probs.data();
      for (std::size_t i = 0; i < qd.size(); ++i) qd[i] += pd[i];
    }
    auto qd = q.data();
    for (auto& v : qd) v /= static_cast<double>(spec.teachers->size());
    return q;
  }
  // SpecificTeacher: group rows by originating client
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m; ++i) groups[batch_ids[i]].push_back(i);
  const std::size_t d = xb.cols();
  for (const auto& [id, rows] : groups) {
    const auto it = spec.by_id.find(id);
    if (it == spec.by_id.end())
      throw std::invalid_argument("no teacher for client " + std::to_string(id));
    Tensor sub = Tensor::matrix(rows.size(), d);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto src = xb.row(rows[j]);
      auto dst = sub.row(j);
      std::copy(src.begin(), src.end(), dst.begin());
    }
    const Tensor probs = nn::softmax_rows(it->second->forward(sub, nn::Mode::Eval), spec.tau);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto src = probs.row(j);
      auto dst = q.row(rows[j]);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return q;
}

/// Shared SGD loop for local training, centralized training, and all three
/// aggregation strategies. Returns the mean per-sample train loss per epoch.
/// distill == nullptr is the pure-CE path; a distilling run with lambda 0
/// must pass nullptr so the trajectory matches pure CE bit-exactly.
std::vector<double> run_training(nn::ClassifierModel& model, const Tensor& X,
                                 std::span<const int> y, std::span<const int> ids, int epochs,
                                 int batch_size, double lr, double momentum,
                                 std::uint64_t shuffle_seed, const DistillSpec* distill) {
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  if (n == 0) throw std::invalid_argument("empty training set");
  Rng rng(derive_seed(shuffle_seed, kShuffleStream));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  nn::SgdOptimizer opt(lr, momentum);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(epochs));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(perm);
    std::vector<std::pair<std::size_t, std::size_t>> batches;  // [begin, end) into perm
    for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch_size))
      batches.emplace_back(s, std::min(s + static_cast<std::size_t>(batch_size), n));
    if (batches.size() >= 2 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = n;  // BN needs >= 2 rows per step
      batches.pop_back();
    }

    double epoch_loss = 0.0;
    for (const auto& [b0, b1] : batches) {
      const std::size_t m = b1 - b0;
      Tensor xb = Tensor::matrix(m, d);
      std::vector<int> yb(m);
      std::vector<int> idb(distill && distill->kind == StrategyKind::SpecificTeacher ? m : 0);
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t src = perm[b0 + j];
        const auto sr = X.row(src);
        auto dr = xb.row(j);
        std::copy(sr.begin(), sr.end(), dr.begin());
        yb[j] = y[src];
        if (!idb.empty()) idb[j] = ids[src];
      }

      nn::ForwardCache cache;
      const Tensor logits = model.forward(xb, nn::Mode::Train, &cache);
      auto ce = nn::cross_entropy(logits, yb);
      double batch_loss = ce.loss;

      if (distill) {
        const Tensor p = nn::softmax_rows(logits, distill->tau);
        const Tensor q = teacher_probs(xb, idb, *distill);
        const std::size_t c = p.cols();
        auto dl = ce.d_logits.data();
        const auto pd = p.data();
        const auto qd = q.data();
        double kl_sum = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          double kl = 0.0;
          for (std::size_t k = 0; k < c; ++k) {
            const double pi = pd[i * c + k];
            if (pi > 0.0) kl += pi * std::log(pi / std::max(qd[i * c + k], 1e-300));
          }
          kl_sum += kl;
          const double w = distill->lambda / static_cast<double>(m);
          for (std::size_t k = 0; k < c; ++k) {
            const double pi = pd[i * c + k];
            if (pi <= 0.0) continue;
            const double lr_term = std::log(pi / std::max(qd[i * c + k], 1e-300));
            dl[i * c + k] += w * (pi / distill->tau) * (lr_term - kl);
          }
        }
        batch_loss += distill->lambda * kl_sum / static_cast<double>(m);
      }

      const nn::Gradients grads = model.backward(cache, ce.d_logits);
      opt.step(model, grads.params);
      epoch_loss += batch_loss * static_cast<double>(m);
    }
    curve.push_back(epoch_loss / static_cast<double>(n));
  }
  return curve;
}

nn::ClassifierModel average_models(const std::vector<nn::ClassifierModel>& locals,
                                   std::span<const double> weights) {
  nn::ClassifierModel avg = locals[0];
  auto pd = avg.mutable_params();
  std::fill(pd.begin(), pd.end(), 0.0);
  for (std::size_t k = 0; k < locals.size(); ++k) {
    const auto src = locals[k].params();
    for (std::size_t i = 0; i < pd.size(); ++i) pd[i] += weights[k] * src[i];
  }
  if (avg.num_bn_layers() > 0) {
    std::vector<nn::BnStats> stats = locals[0].bn_stats();
    for (auto& st : stats) {
      std::fill(st.mean.begin(), st.mean.end(), 0.0);
      std::fill(st.var.begin(), st.var.end(), 0.0);
    }
    for (std::size_t k = 0; k < locals.size(); ++k) {
      const auto& src = locals[k].bn_stats();
      for (std::size_t l = 0; l < stats.size(); ++l) {
        for (std::size_t i = 0; i < stats[l].mean.size(); ++i) {
          stats[l].mean[i] += weights[k] * src[l].mean[i];
          stats[l].var[i] += weights[k] * src[l].var[i];
        }
      }
    }
    avg.set_bn_stats(std::move(stats));
  }
  return avg;
}

}  // namespace

void TrainConfig::validate() const { check_train_knobs(epochs, lr, momentum, batch_size); }

void AggregationStrategy::validate() const {
  check_train_knobs(epochs, lr, momentum, batch_size);
  if (lambda_distill < 0.0) throw std::invalid_argument("lambda_distill must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

void FedAvgConfig::validate() const {
  check_train_knobs(local_epochs, lr, momentum, batch_size);
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
}

LedgerReport ledger_report(const CostLedger& ledger) {
  LedgerReport r;
  for (const auto& e : ledger.uploads) {
    r.upload_scalars += e.scalars;
    r.upload_bytes += e.bytes;
  }
  for (const auto& e : ledger.downloads) {
    r.download_scalars += e.scalars;
    r.download_bytes += e.bytes;
  }
  r.total_scalars = r.upload_scalars + r.download_scalars;
  r.total_bytes = r.upload_bytes + r.download_bytes;
  r.client_train_flops = ledger.client_train_flops;
  r.rounds = ledger.rounds;
  return r;
}

double forward_flops(const std::vector<nn::LayerSpec>& layers) {
  double f = 0.0;
  for (const auto& s : layers) {
    switch (s.kind) {
      case nn::LayerKind::Linear:
        f += 2.0 * s.in_dim * s.out_dim + s.out_dim;
        break;
      case nn::LayerKind::BatchNorm:
        f += 8.0 * s.dim;
        break;
      case nn::LayerKind::ReLU:
        // dim of a ReLU is whatever flows through; negligible either way
        break;
    }
  }
  return f;
}

double training_flops(const std::vector<nn::LayerSpec>& layers, std::size_t samples, int epochs) {
  return 3.0 * forward_flops(layers) * static_cast<double>(samples) *
         static_cast<double>(epochs);
}

ClientUpdate local_train(const data::ClientData& client, const std::vector<nn::LayerSpec>& arch,
                         const TrainConfig& cfg, CostLedger* ledger) {
  cfg.validate();
  if (client.train.empty()) throw std::invalid_argument("client train split is empty");
  const Tensor X = client.train.to_tensor();
  const std::vector<int> y = client.train.labels();
  nn::ClassifierModel model(arch, derive_seed(cfg.seed, kInitStream));
  std::vector<double> curve = run_training(model, X, y, {}, cfg.epochs, cfg.batch_size, cfg.lr,
                                           cfg.momentum, cfg.seed, nullptr);
  ClientUpdate update{client.client_id, std::move(model), client.train.size(),
                      client.train.class_counts(), client.train.label_set(), std::move(curve)};
  if (ledger) {
    ledger->uploads.push_back({update.client_id, update.model.total_scalars(),
                               io::classifier_checkpoint_bytes(update.model)});
    ledger->client_train_flops += training_flops(arch, update.train_size, cfg.epochs);
  }
  return update;
}

Tensor SyntheticDataset::to_tensor() const {
  Tensor t = Tensor::matrix(records.size(), static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto dst = t.row(i);
    std::copy(records[i].x.begin(), records[i].x.end(), dst.begin());
  }
  return t;
}

std::vector<int> SyntheticDataset::labels() const {
  std::vector<int> y(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) y[i] = records[i].label;
  return y;
}

std::vector<int> SyntheticDataset::client_ids() const {
  std::vector<int> ids(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) ids[i] = records[i].client_id;
  return ids;
}

int SyntheticDataset::count_for(int client_id, int label) const {
  int n = 0;
  for (const auto& r : records) n += (r.client_id == client_id && r.label == label) ? 1 : 0;
  return n;
}

void SyntheticDataset::validate() const {
  for (const auto& r : records) {
    if (static_cast<int>(r.x.size()) != dim) throw std::invalid_argument("record dim mismatch");
    if (r.label < 0 || r.label >= num_classes) throw std::invalid_argument("record label range");
    if (r.client_id < -1) throw std::invalid_argument("record client id");
  }
}

SyntheticDataset build_synthetic(const diffusion::EpsNet& net,
                                 const std::vector<ClientUpdate>& updates,
                                 const diffusion::NoiseSchedule& sched,
                                 const SynthesisConfig& cfg, int threads) {
  if (updates.empty()) throw std::invalid_argument("need at least one client update");
  cfg.guidance.validate();
  const int c = net.config().num_classes;
  struct Task {
    std::size_t update_idx;
    int y;
    int count;
  };
  std::vector<Task> tasks;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const auto& u = updates[k];
    if (u.model.input_dim() != net.config().data_dim)
      throw std::invalid_argument("client model input dim does not match the generator");
    for (int y : u.label_set) {
      if (y < 0 || y >= c) throw std::invalid_argument("client label outside generator classes");
      const int n = cfg.per_class_count > 0 ? cfg.per_class_count
                                            : u.class_counts[static_cast<std::size_t>(y)];
      if (n > 0) tasks.push_back({k, y, n});
    }
  }

  std::vector<std::vector<guidance::GenSample>> slots(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    const Task& t = tasks[i];
    const auto& u = updates[t.update_idx];
    slots[i] = guidance::generate_guided(
        net, u.model, u.client_id, t.y, t.count, sched, cfg.guidance,
        derive_seed(cfg.seed, static_cast<std::uint64_t>(u.client_id),
                    static_cast<std::uint64_t>(t.y)),
        1);
  });

  SyntheticDataset ds;
  ds.dim = net.config().data_dim;
  ds.num_classes = c;
  ds.gen_config = cfg.guidance;
  ds.gen_seed = cfg.seed;
  for (auto& slot : slots)
    for (auto& s : slot) ds.records.push_back({std::move(s.x), s.label, s.client_id});
  ds.validate();
  return ds;
}

nn::ClassifierModel aggregate(const SyntheticDataset& synth,
                              const std::vector<ClientUpdate>& teachers,
                              const std::vector<nn::LayerSpec>& arch,
                              const AggregationStrategy& strat) {
  strat.validate();
  if (synth.empty()) throw std::invalid_argument("synthetic dataset is empty");
  synth.validate();

  DistillSpec spec;
  const DistillSpec* spec_ptr = nullptr;
  std::vector<int> ids;
  if (strat.kind != StrategyKind::FineTune && strat.lambda_distill > 0.0) {
    if (teachers.empty()) throw std::invalid_argument("distillation needs teachers");
    for (const auto& t : teachers) {
      if (t.model.input_dim() != synth.dim || t.model.num_classes() != synth.num_classes)
        throw std::invalid_argument("teacher dimensions do not match the synthetic set");
    }
    spec.kind = strat.kind;
    spec.teachers = &teachers;
    spec.lambda = strat.lambda_distill;
    spec.tau = strat.temperature;
    if (strat.kind == StrategyKind::SpecificTeacher) {
      for (const auto& t : teachers) spec.by_id[t.client_id] = &t.model;
      for (const auto& r : synth.records)
        if (!spec.by_id.count(r.client_id))
          throw std::invalid_argument("no teacher for client " + std::to_string(r.client_id));
      ids = synth.client_ids();
    }
    spec_ptr = &spec;
  }

  const Tensor X = synth.to_tensor();
  const std::vector<int> y = synth.labels();
  nn::ClassifierModel model(arch, derive_seed(strat.seed, kInitStream));
  run_training(model, X, y, ids, strat.epochs, strat.batch_size, strat.lr, strat.momentum,
               strat.seed, spec_ptr);
  return model;
}

nn::ClassifierModel aggregate_finetune(const SyntheticDataset& synth,
                                       const std::vector<nn::LayerSpec>& arch,
                                       const TrainConfig& cfg) {
  AggregationStrategy strat;
  strat.kind = StrategyKind::FineTune;
  strat.lambda_distill = 0.0;
  strat.epochs = cfg.epochs;
  strat.lr = cfg.lr;
  strat.momentum = cfg.momentum;
  strat.batch_size = cfg.batch_size;
  strat.seed = cfg.seed;
  return aggregate(synth, {}, arch, strat);
}

nn::ClassifierModel aggregate_multi_teacher(const SyntheticDataset& synth,
                                            const std::vector<ClientUpdate>& teachers,
                                            const std::vector<nn::LayerSpec>& arch,
                                            AggregationStrategy strat) {
  strat.kind = StrategyKind::MultiTeacher;
  return aggregate(synth, teachers, arch, strat);
}

nn::ClassifierModel aggregate_specific_teacher(const SyntheticDataset& synth,
                                               const std::vector<ClientUpdate>& teachers,
                                               const std::vector<nn::LayerSpec>& arch,
                                               AggregationStrategy strat) {
  strat.kind = StrategyKind::SpecificTeacher;
  return aggregate(synth, teachers, arch, strat);
}

double accuracy(const nn::ClassifierModel& model, const data::Dataset& ds) {
  if (ds.empty()) throw std::invalid_argument("empty evaluation set");
  const Tensor logits = model.forward(ds.to_tensor(), nn::Mode::Eval);
  const std::vector<int> y = ds.labels();
  const std::size_t c = logits.cols();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (r[k] > r[best]) best = k;
    hits += (static_cast<int>(best) == y[i]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

EvalResult evaluate_global(const nn::ClassifierModel& model,
                           const std::vector<data::ClientData>& clients) {
  if (clients.empty()) throw std::invalid_argument("no clients to evaluate");
  EvalResult res;
  for (const auto& c : clients) res.per_client.push_back(accuracy(model, c.test));
  double sum = 0.0;
  for (double a : res.per_client) sum += a;
  res.average = sum / static_cast<double>(res.per_client.size());
  return res;
}

FedAvgResult fedavg_baseline(const std::vector<data::ClientData>& clients,
                             const std::vector<nn::LayerSpec>& arch, const FedAvgConfig& cfg) {
  cfg.validate();
  if (clients.empty()) throw std::invalid_argument("no clients");
  std::vector<Tensor> xs;
  std::vector<std::vector<int>> ys;
  double total = 0.0;
  for (const auto& c : clients) {
    if (c.train.empty()) throw std::invalid_argument("client train split is empty");
    xs.push_back(c.train.to_tensor());
    ys.push_back(c.train.labels());
    total += static_cast<double>(c.train.size());
  }

  nn::ClassifierModel global(arch, derive_seed(cfg.seed, kInitStream));
  CostLedger ledger;
  const std::size_t ckpt_bytes = io::classifier_checkpoint_bytes(global);
  const std::size_t scalars = global.total_scalars();

  for (int r = 0; r < cfg.rounds; ++r) {
    const std::uint64_t round_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r) + 1);
    std::vector<nn::ClassifierModel> locals;
    std::vector<double> weights;
    locals.reserve(clients.size());
    for (std::size_t k = 0; k < clients.size(); ++k) {
      ledger.downloads.push_back({clients[k].client_id, scalars, ckpt_bytes});
      nn::ClassifierModel local = global;
      run_training(local, xs[k], ys[k], {}, cfg.local_epochs, cfg.batch_size, cfg.lr,
                   cfg.momentum, round_seed, nullptr);
      ledger.uploads.push_back({clients[k].client_id, scalars, ckpt_bytes});
      ledger.client_train_flops +=
          training_flops(arch, clients[k].train.size(), cfg.local_epochs);
      weights.push_back(static_cast<double>(clients[k].train.size()) / total);
      locals.push_back(std::move(local));
    }
    global = average_models(locals, weights);
    ++ledger.rounds;
  }
  return FedAvgResult{std::move(global), std::move(ledger)};
}

SyntheticDataset prompts_only_baseline(const diffusion::EpsNet& net, std::span<const int> classes,
                                       int per_class_count, const diffusion::NoiseSchedule& sched,
                                       const guidance::GuidanceConfig& base_cfg,
                                       std::uint64_t seed, int threads) {
  if (per_class_count < 1) throw std::invalid_argument("per_class_count must be >= 1");
  guidance::GuidanceConfig cfg = base_cfg;
  cfg.guide_scale = 0.0;  // class conditioning only; no client model consulted
  cfg.validate();
  SyntheticDataset ds;
  ds.dim = net.config().data_dim;
  ds.num_classes = net.config().num_classes;
  ds.gen_config = cfg;
  ds.gen_seed = seed;
  for (int y : classes) {
    if (y < 0 || y >= ds.num_classes) throw std::invalid_argument("class outside generator range");
    const std::vector<int> wanted(static_cast<std::size_t>(per_class_count), y);
    auto samples = guidance::generate_labeled(net, nullptr, -1, wanted, sched, cfg,
                                              derive_seed(seed, static_cast<std::uint64_t>(y)),
                                              threads);
    for (auto& s : samples) ds.records.push_back({std::move(s.x), s.label, s.client_id});
  }
  ds.validate();
  return ds;
}

CeilingResult ceiling_baseline(const std::vector<data::ClientData>& clients,
                               const std::vector<nn::LayerSpec>& arch, const TrainConfig& cfg) {
  cfg.validate();
  if (clients.empty()) throw std::invalid_argument("no clients");
  data::Dataset pooled;
  pooled.dim = clients[0].train.dim;
  pooled.num_classes = clients[0].train.num_classes;
  pooled.num_contexts = clients[0].train.num_contexts;
  CostLedger ledger;
  for (const auto& c : clients) {
    if (c.train.empty()) throw std::invalid_argument("client train split is empty");
    pooled.samples.insert(pooled.samples.end(), c.train.samples.begin(), c.train.samples.end());
    const std::size_t n = c.train.size();
    const std::size_t d = static_cast<std::size_t>(c.train.dim);
    ledger.uploads.push_back({c.client_id, n * (d + 1), n * (d * 8 + 8)});
  }
  const Tensor X = pooled.to_tensor();
  const std::vector<int> y = pooled.labels();
  nn::ClassifierModel model(arch, derive_seed(cfg.seed, kInitStream));
  run_training(model, X, y, {}, cfg.epochs, cfg.batch_size, cfg.lr, cfg.momentum, cfg.seed,
               nullptr);
  return CeilingResult{std::move(model), std::move(ledger)};
}

}  // namespace flmg::fed
