#include "flmg/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "flmg/checkpoint.hpp"
#include "flmg/dataset_io.hpp"
#include "flmg/diffusion.hpp"
#include "flmg/federation.hpp"
#include "flmg/parallel.hpp"
#include "flmg/rng.hpp"
#include "json.hpp"

namespace flmg::run {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamCorpus = 1;
constexpr std::uint64_t kStreamPartition = 2;
constexpr std::uint64_t kStreamClient = 3;  // + client id
constexpr std::uint64_t kStreamDiffInit = 4;
constexpr std::uint64_t kStreamDiffTrain = 5;
constexpr std::uint64_t kStreamSynth = 6;
constexpr std::uint64_t kStreamPromptsOnly = 7;
constexpr std::uint64_t kStreamAggregate = 8;
constexpr std::uint64_t kStreamFedAvg = 9;

struct RunState {
  const io::ExperimentConfig& cfg;
  fs::path dir;
  int threads = 1;
  std::optional<std::vector<data::ClientData>> clients;
  std::optional<data::Dataset> server;
  std::optional<std::vector<fed::ClientUpdate>> updates;
  std::optional<diffusion::EpsNet> net;
  std::optional<fed::SyntheticDataset> synth;
  std::optional<fed::SyntheticDataset> po;
};

data::ToyCorpusConfig corpus_config(const io::ExperimentConfig& cfg) {
  data::ToyCorpusConfig c = cfg.corpus;
  c.seed = derive_seed(cfg.seed, kStreamCorpus);
  return c;
}

diffusion::NoiseSchedule schedule(const io::ExperimentConfig& cfg) {
  return diffusion::make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_min,
                                  cfg.diffusion.beta_max, cfg.diffusion.eta);
}

std::vector<nn::LayerSpec> client_arch(const io::ExperimentConfig& cfg) {
  return nn::mlp_arch(cfg.corpus.dim(), cfg.client.hidden, cfg.corpus.num_classes);
}

std::vector<nn::LayerSpec> server_arch(const io::ExperimentConfig& cfg) {
  return nn::mlp_arch(cfg.corpus.dim(), cfg.aggregation.hidden, cfg.corpus.num_classes);
}

fs::path client_train_path(const RunState& st, int k) {
  return st.dir / "data" / ("client_" + std::to_string(k) + "_train.flmd");
}
fs::path client_test_path(const RunState& st, int k) {
  return st.dir / "data" / ("client_" + std::to_string(k) + "_test.flmd");
}
fs::path client_ckpt_path(const RunState& st, int k) {
  return st.dir / "checkpoints" / ("client_" + std::to_string(k) + ".flmg");
}
fs::path global_ckpt_path(const RunState& st, const std::string& name) {
  return st.dir / "checkpoints" / ("global_" + name + ".flmg");
}

void require_file(const fs::path& p, const std::string& stage, const std::string& producer) {
  if (!fs::exists(p))
    throw StageError(stage, "missing " + p.string() + "; run " + producer + " first");
}

void ensure_data(RunState& st, const std::string& stage) {
  if (st.clients) return;
  std::vector<data::ClientData> clients;
  for (int k = 0; k < st.cfg.partition.clients; ++k) {
    require_file(client_train_path(st, k), stage, "make-data");
    require_file(client_test_path(st, k), stage, "make-data");
    data::ClientData c{k, io::load_dataset(client_train_path(st, k).string()),
                       io::load_dataset(client_test_path(st, k).string())};
    clients.push_back(std::move(c));
  }
  st.clients = std::move(clients);
}

void ensure_server(RunState& st, const std::string& stage) {
  if (st.server) return;
  const fs::path p = st.dir / "data" / "server.flmd";
  require_file(p, stage, "make-data");
  st.server = io::load_dataset(p.string());
}

void ensure_updates(RunState& st, const std::string& stage) {
  if (st.updates) return;
  ensure_data(st, stage);
  std::vector<fed::ClientUpdate> updates;
  for (int k = 0; k < st.cfg.partition.clients; ++k) {
    const fs::path p = client_ckpt_path(st, k);
    require_file(p, stage, "client-train");
    nn::ClassifierModel model = io::load_classifier(p.string());
    const auto& train = (*st.clients)[static_cast<std::size_t>(k)].train;
    updates.push_back({k, std::move(model), train.size(), train.class_counts(),
                       train.label_set(), {}});
  }
  st.updates = std::move(updates);
}

void ensure_net(RunState& st, const std::string& stage) {
  if (st.net) return;
  const fs::path p = st.dir / "checkpoints" / "epsnet.flmg";
  require_file(p, stage, "pretrain-diffusion");
  st.net = io::load_epsnet(p.string());
}

void ensure_synth(RunState& st, const std::string& stage) {
  if (st.synth) return;
  const fs::path p = st.dir / "synth" / "synth.flmd";
  require_file(p, stage, "generate");
  st.synth = io::load_synthetic(p.string());
}

void ensure_po(RunState& st, const std::string& stage) {
  if (st.po) return;
  const fs::path p = st.dir / "synth" / "prompts_only.flmd";
  require_file(p, stage, "generate");
  st.po = io::load_synthetic(p.string());
}

void stage_make_data(RunState& st) {
  const auto ccfg = corpus_config(st.cfg);
  const data::Dataset corpus = data::make_corpus(ccfg);
  const std::uint64_t pseed = derive_seed(st.cfg.seed, kStreamPartition);
  std::vector<data::ClientData> clients =
      st.cfg.partition.kind == "feature_skew"
          ? data::partition_feature_skew(corpus, st.cfg.partition.clients, pseed)
          : data::partition_label_skew(corpus, st.cfg.partition.clients,
                                       st.cfg.partition.alpha, pseed);
  data::Dataset server = data::server_corpus(ccfg, st.cfg.server_overlap);
  io::save_dataset(server, (st.dir / "data" / "server.flmd").string());
  for (const auto& c : clients) {
    io::save_dataset(c.train, client_train_path(st, c.client_id).string());
    io::save_dataset(c.test, client_test_path(st, c.client_id).string());
  }
  st.clients = std::move(clients);
  st.server = std::move(server);
}

void stage_client_train(RunState& st) {
  ensure_data(st, "client-train");
  const auto arch = client_arch(st.cfg);
  const std::size_t k_total = st.clients->size();
  std::vector<std::optional<fed::ClientUpdate>> slots(k_total);
  parallel_for(k_total, st.threads, [&](std::size_t k) {
    fed::TrainConfig tc;
    tc.epochs = st.cfg.client.epochs;
    tc.lr = st.cfg.client.lr;
    tc.momentum = st.cfg.client.momentum;
    tc.batch_size = st.cfg.client.batch_size;
    tc.seed = derive_seed(st.cfg.seed, kStreamClient, static_cast<std::uint64_t>(k));
    slots[k] = fed::local_train((*st.clients)[k], arch, tc);
  });
  std::vector<fed::ClientUpdate> updates;
  for (auto& s : slots) {
    io::CheckpointMeta meta;
    meta.client_id = s->client_id;
    meta.seed = derive_seed(st.cfg.seed, kStreamClient,
                            static_cast<std::uint64_t>(s->client_id));
    meta.train_epochs = st.cfg.client.epochs;
    io::save_classifier(s->model, meta, client_ckpt_path(st, s->client_id).string());
    updates.push_back(std::move(*s));
  }
  st.updates = std::move(updates);
}

void stage_pretrain_diffusion(RunState& st) {
  ensure_server(st, "pretrain-diffusion");
  diffusion::EpsNetConfig nc;
  nc.data_dim = st.server->dim;
  nc.num_classes = st.server->num_classes;
  nc.emb_dim = st.cfg.diffusion.emb_dim;
  nc.hidden = st.cfg.diffusion.hidden;
  diffusion::EpsNet net(nc, derive_seed(st.cfg.seed, kStreamDiffInit));
  const auto sched = schedule(st.cfg);
  diffusion::EpsTrainConfig tc;
  tc.epochs = st.cfg.diffusion.epochs;
  tc.lr = st.cfg.diffusion.lr;
  tc.momentum = st.cfg.diffusion.momentum;
  tc.batch_size = st.cfg.diffusion.batch_size;
  tc.cond_dropout = st.cfg.diffusion.cond_dropout;
  Rng rng(derive_seed(st.cfg.seed, kStreamDiffTrain));
  diffusion::train_epsnet(net, st.server->to_tensor(), st.server->labels(), sched, tc, rng);
  io::CheckpointMeta meta;
  meta.seed = derive_seed(st.cfg.seed, kStreamDiffTrain);
  meta.train_epochs = st.cfg.diffusion.epochs;
  io::save_epsnet(net, meta, (st.dir / "checkpoints" / "epsnet.flmg").string());
  st.net = std::move(net);
}

void stage_generate(RunState& st) {
  ensure_updates(st, "generate");
  ensure_net(st, "generate");
  const auto sched = schedule(st.cfg);
  fed::SynthesisConfig sc;
  sc.guidance = st.cfg.guidance;
  sc.per_class_count = st.cfg.synthesis.per_class_count;
  sc.seed = derive_seed(st.cfg.seed, kStreamSynth);
  fed::SyntheticDataset synth = fed::build_synthetic(*st.net, *st.updates, sched, sc, st.threads);
  io::save_synthetic(synth, (st.dir / "synth" / "synth.flmd").string());

  if (st.cfg.baselines.prompts_only) {
    std::vector<int> classes(static_cast<std::size_t>(st.cfg.corpus.num_classes));
    for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int>(i);
    const int n_po = std::max<int>(
        1, static_cast<int>(synth.size() / static_cast<std::size_t>(classes.size())));
    fed::SyntheticDataset po = fed::prompts_only_baseline(
        *st.net, classes, n_po, sched, st.cfg.guidance,
        derive_seed(st.cfg.seed, kStreamPromptsOnly), st.threads);
    io::save_synthetic(po, (st.dir / "synth" / "prompts_only.flmd").string());
    st.po = std::move(po);
  }
  st.synth = std::move(synth);
}

fed::StrategyKind strategy_kind(const std::string& tok) {
  if (tok == "ft") return fed::StrategyKind::FineTune;
  if (tok == "md") return fed::StrategyKind::MultiTeacher;
  return fed::StrategyKind::SpecificTeacher;
}

json ledger_json(const std::string& name, const fed::CostLedger& ledger) {
  const fed::LedgerReport r = fed::ledger_report(ledger);
  return json{{"name", name},
              {"upload_scalars", r.upload_scalars},
              {"upload_bytes", r.upload_bytes},
              {"download_scalars", r.download_scalars},
              {"download_bytes", r.download_bytes},
              {"rounds", r.rounds},
              {"client_train_flops", r.client_train_flops}};
}

void stage_aggregate(RunState& st) {
  ensure_updates(st, "aggregate");
  ensure_synth(st, "aggregate");
  const auto arch = server_arch(st.cfg);
  const std::uint64_t agg_seed = derive_seed(st.cfg.seed, kStreamAggregate);
  const auto& a = st.cfg.aggregation;

  io::CheckpointMeta meta;
  meta.seed = agg_seed;
  meta.train_epochs = a.epochs;

  for (const auto& tok : a.strategies) {
    fed::AggregationStrategy strat;
    strat.kind = strategy_kind(tok);
    strat.lambda_distill = tok == "ft" ? 0.0 : a.lambda_distill;
    strat.temperature = a.temperature;
    strat.epochs = a.epochs;
    strat.lr = a.lr;
    strat.momentum = a.momentum;
    strat.batch_size = a.batch_size;
    strat.seed = agg_seed;
    nn::ClassifierModel model = fed::aggregate(*st.synth, *st.updates, arch, strat);
    io::save_classifier(model, meta, global_ckpt_path(st, tok).string());
  }

  fed::TrainConfig server_tc;
  server_tc.epochs = a.epochs;
  server_tc.lr = a.lr;
  server_tc.momentum = a.momentum;
  server_tc.batch_size = a.batch_size;
  server_tc.seed = agg_seed;

  json ledgers = json::array();
  {
    fed::CostLedger fedlmg;
    fedlmg.rounds = 1;
    for (const auto& u : *st.updates) {
      fedlmg.uploads.push_back({u.client_id, u.model.total_scalars(),
                                io::classifier_checkpoint_bytes(u.model)});
      fedlmg.client_train_flops +=
          fed::training_flops(u.model.layers(), u.train_size, st.cfg.client.epochs);
    }
    ledgers.push_back(ledger_json("fedlmg", fedlmg));
  }

  if (st.cfg.baselines.prompts_only) {
    ensure_po(st, "aggregate");
    nn::ClassifierModel model = fed::aggregate_finetune(*st.po, arch, server_tc);
    io::save_classifier(model, meta, global_ckpt_path(st, "prompts_only").string());
    ledgers.push_back(ledger_json("prompts_only", fed::CostLedger{}));
  }

  if (st.cfg.baselines.ceiling) {
    ensure_data(st, "aggregate");
    fed::CeilingResult res = fed::ceiling_baseline(*st.clients, arch, server_tc);
    io::save_classifier(res.model, meta, global_ckpt_path(st, "ceiling").string());
    ledgers.push_back(ledger_json("ceiling", res.ledger));
  }

  if (st.cfg.baselines.fedavg) {
    ensure_data(st, "aggregate");
    fed::FedAvgConfig fc;
    fc.rounds = st.cfg.baselines.fedavg_rounds;
    fc.local_epochs = st.cfg.baselines.fedavg_local_epochs;
    fc.lr = st.cfg.client.lr;
    fc.momentum = st.cfg.client.momentum;
    fc.batch_size = st.cfg.client.batch_size;
    fc.seed = derive_seed(st.cfg.seed, kStreamFedAvg);
    fed::FedAvgResult res = fed::fedavg_baseline(*st.clients, client_arch(st.cfg), fc);
    io::CheckpointMeta fmeta;
    fmeta.seed = fc.seed;
    fmeta.train_epochs = fc.rounds * fc.local_epochs;
    io::save_classifier(res.model, fmeta, global_ckpt_path(st, "fedavg").string());
    ledgers.push_back(ledger_json("fedavg", res.ledger));
  }

  std::ofstream f(st.dir / "ledger.json");
  f << json{{"methods", ledgers}}.dump(2) << "\n";
  if (!f) throw StageError("aggregate", "cannot write ledger.json");
}

void stage_evaluate(RunState& st) {
  ensure_data(st, "evaluate");
  std::vector<std::pair<std::string, std::string>> wanted;  // metric name, checkpoint tag
  for (const auto& tok : st.cfg.aggregation.strategies) wanted.emplace_back("fedlmg_" + tok, tok);
  if (st.cfg.baselines.prompts_only) wanted.emplace_back("prompts_only", "prompts_only");
  if (st.cfg.baselines.ceiling) wanted.emplace_back("ceiling", "ceiling");
  if (st.cfg.baselines.fedavg) wanted.emplace_back("fedavg", "fedavg");

  json methods = json::array();
  std::ostringstream csv;
  csv << "method";
  for (std::size_t k = 0; k < st.clients->size(); ++k) csv << ",client_" << k;
  csv << ",average\n";
  csv << std::setprecision(17);

  for (const auto& [name, tag] : wanted) {
    const fs::path p = global_ckpt_path(st, tag);
    require_file(p, "evaluate", "aggregate");
    const nn::ClassifierModel model = io::load_classifier(p.string());
    const fed::EvalResult res = fed::evaluate_global(model, *st.clients);
    methods.push_back(
        json{{"name", name}, {"per_client", res.per_client}, {"average", res.average}});
    csv << name;
    for (double a : res.per_client) csv << "," << a;
    csv << "," << res.average << "\n";
  }

  std::ofstream jf(st.dir / "metrics.json");
  jf << json{{"clients", st.clients->size()}, {"methods", methods}}.dump(2) << "\n";
  if (!jf) throw StageError("evaluate", "cannot write metrics.json");
  std::ofstream cf(st.dir / "metrics.csv");
  cf << csv.str();
  if (!cf) throw StageError("evaluate", "cannot write metrics.csv");
}

void stage_report(RunState& st) {
  const std::string text = emit_report(st.dir.string());
  std::ofstream f(st.dir / "report.txt");
  f << text;
  if (!f) throw StageError("report", "cannot write report.txt");
}

}  // namespace

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> order = {Stage::MakeData,  Stage::ClientTrain,
                                           Stage::PretrainDiffusion, Stage::Generate,
                                           Stage::Aggregate, Stage::Evaluate,
                                           Stage::Report};
  return order;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::MakeData: return "make-data";
    case Stage::ClientTrain: return "client-train";
    case Stage::PretrainDiffusion: return "pretrain-diffusion";
    case Stage::Generate: return "generate";
    case Stage::Aggregate: return "aggregate";
    case Stage::Evaluate: return "evaluate";
    case Stage::Report: return "report";
  }
  return "?";
}

std::vector<Stage> parse_stages(const std::string& csv) {
  std::vector<Stage> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto b = tok.find_first_not_of(" \t");
    const auto e = tok.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    tok = tok.substr(b, e - b + 1);
    bool found = false;
    for (Stage s : all_stages()) {
      if (stage_name(s) == tok) {
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
        found = true;
        break;
      }
    }
    if (!found) throw io::ConfigError("unknown stage \"" + tok + "\"");
  }
  if (out.empty()) throw io::ConfigError("no stages requested");
  return out;
}

void run_experiment(const io::ExperimentConfig& cfg, const std::vector<Stage>& stages,
                    int threads) {
  cfg.validate();
  RunState st{cfg, fs::path(cfg.out_dir), threads < 1 ? 1 : threads};
  std::error_code ec;
  fs::create_directories(st.dir / "data", ec);
  fs::create_directories(st.dir / "checkpoints", ec);
  fs::create_directories(st.dir / "synth", ec);
  {
    std::ofstream f(st.dir / "config.json");
    f << io::config_to_json(cfg);
    if (!f) throw StageError("setup", "cannot write into " + st.dir.string());
  }
  for (Stage s : all_stages()) {
    if (std::find(stages.begin(), stages.end(), s) == stages.end()) continue;
    try {
      switch (s) {
        case Stage::MakeData: stage_make_data(st); break;
        case Stage::ClientTrain: stage_client_train(st); break;
        case Stage::PretrainDiffusion: stage_pretrain_diffusion(st); break;
        case Stage::Generate: stage_generate(st); break;
        case Stage::Aggregate: stage_aggregate(st); break;
        case Stage::Evaluate: stage_evaluate(st); break;
        case Stage::Report: stage_report(st); break;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage_name(s), e.what());
    }
  }
}

std::string emit_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  auto read_json = [&](const char* name) {
    const fs::path p = dir / name;
    std::ifstream f(p);
    if (!f) throw StageError("report", "missing " + p.string());
    try {
      return json::parse(f);
    } catch (const json::exception& e) {
      throw StageError("report", std::string(name) + ": " + e.what());
    }
  };
  const json metrics = read_json("metrics.json");
  const json ledger = read_json("ledger.json");

  std::ostringstream out;
  out << "Per-client test accuracy (%)\n";
  const std::size_t clients = metrics.at("clients").get<std::size_t>();
  out << std::left << std::setw(16) << "method";
  for (std::size_t k = 0; k < clients; ++k)
    out << std::right << std::setw(10) << ("client_" + std::to_string(k));
  out << std::right << std::setw(10) << "Avg" << "\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& m : metrics.at("methods")) {
    out << std::left << std::setw(16) << m.at("name").get<std::string>();
    for (const auto& a : m.at("per_client")) out << std::right << std::setw(10) << a.get<double>() * 100.0;
    out << std::right << std::setw(10) << m.at("average").get<double>() * 100.0 << "\n";
  }

  out << "\nCommunication and compute\n";
  out << std::left << std::setw(16) << "method" << std::right << std::setw(16) << "up_scalars"
      << std::setw(16) << "up_bytes" << std::setw(16) << "down_scalars" << std::setw(16)
      << "down_bytes" << std::setw(8) << "rounds" << std::setw(16) << "train_flops" << "\n";
  for (const auto& m : ledger.at("methods")) {
    out << std::left << std::setw(16) << m.at("name").get<std::string>() << std::right
        << std::setw(16) << m.at("upload_scalars").get<std::uint64_t>() << std::setw(16)
        << m.at("upload_bytes").get<std::uint64_t>() << std::setw(16)
        << m.at("download_scalars").get<std::uint64_t>() << std::setw(16)
        << m.at("download_bytes").get<std::uint64_t>() << std::setw(8)
        << m.at("rounds").get<int>() << std::setw(16) << std::setprecision(0)
        << m.at("client_train_flops").get<double>() << "\n";
    out << std::setprecision(2);
  }
  return out.str();
}

}  // namespace flmg::run
