#include "flmg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace flmg::io {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
void opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

void fail(const std::string& msg) { throw ConfigError(msg); }

void check_training(const std::string& where, int epochs, double lr, double momentum,
                    int batch_size, int min_batch) {
  if (epochs < 0) fail(where + ".epochs must be >= 0");
  if (!(lr > 0.0)) fail(where + ".lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) fail(where + ".momentum must be in [0,1)");
  if (batch_size < min_batch)
    fail(where + ".batch_size must be >= " + std::to_string(min_batch));
}

void check_hidden(const std::string& where, const std::vector<int>& hidden) {
  for (int h : hidden)
    if (h <= 0) fail(where + ".hidden entries must be positive");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (out_dir.empty()) fail("out_dir must not be empty");
  if (threads < 0) fail("threads must be >= 0");
  if (server_overlap < 0.0 || server_overlap > 1.0) fail("server_overlap must be in [0,1]");
  try {
    corpus.validate();
    guidance.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }

  if (partition.kind != "feature_skew" && partition.kind != "label_skew")
    fail("partition.kind must be \"feature_skew\" or \"label_skew\"");
  if (partition.clients < 1) fail("partition.clients must be >= 1");
  if (partition.kind == "feature_skew" && partition.clients > corpus.num_contexts)
    fail("feature_skew needs clients <= contexts");
  if (partition.kind == "label_skew" && !(partition.alpha > 0.0))
    fail("partition.alpha must be positive");

  check_hidden("client", client.hidden);
  check_training("client", client.epochs, client.lr, client.momentum, client.batch_size, 2);

  if (diffusion.timesteps < 1) fail("diffusion.timesteps must be >= 1");
  if (!(diffusion.beta_min > 0.0) || diffusion.beta_min > diffusion.beta_max ||
      diffusion.beta_max >= 1.0)
    fail("diffusion betas need 0 < beta_min <= beta_max < 1");
  if (diffusion.eta < 0.0 || diffusion.eta > 1.0) fail("diffusion.eta must be in [0,1]");
  if (diffusion.emb_dim < 2 || diffusion.emb_dim % 2 != 0)
    fail("diffusion.emb_dim must be even and >= 2");
  if (diffusion.hidden.empty()) fail("diffusion.hidden must not be empty");
  check_hidden("diffusion", diffusion.hidden);
  check_training("diffusion", diffusion.epochs, diffusion.lr, diffusion.momentum,
                 diffusion.batch_size, 1);
  if (diffusion.cond_dropout < 0.0 || diffusion.cond_dropout > 1.0)
    fail("diffusion.cond_dropout must be in [0,1]");
  if (guidance.sample_steps > diffusion.timesteps)
    fail("guidance.sample_steps cannot exceed diffusion.timesteps");

  if (aggregation.strategies.empty()) fail("aggregation.strategies must not be empty");
  std::set<std::string> seen;
  for (const auto& s : aggregation.strategies) {
    if (s != "ft" && s != "md" && s != "sd")
      fail("aggregation.strategies entries must be \"ft\", \"md\", or \"sd\"");
    if (!seen.insert(s).second) fail("duplicate aggregation strategy \"" + s + "\"");
  }
  if (aggregation.lambda_distill < 0.0) fail("aggregation.lambda_distill must be >= 0");
  if (!(aggregation.temperature > 0.0)) fail("aggregation.temperature must be positive");
  check_hidden("aggregation", aggregation.hidden);
  check_training("aggregation", aggregation.epochs, aggregation.lr, aggregation.momentum,
                 aggregation.batch_size, 2);

  if (baselines.fedavg_rounds < 1) fail("baselines.fedavg_rounds must be >= 1");
  if (baselines.fedavg_local_epochs < 1) fail("baselines.fedavg_local_epochs must be >= 1");
}

ExperimentConfig parse_config(const std::string& json_text) {
  ExperimentConfig cfg;
  try {
    const json j = json::parse(json_text);
    check_keys(j, "config",
               {"seed", "out_dir", "threads", "server_overlap", "data", "client", "diffusion",
                "guidance", "synthesis", "aggregation", "baselines"});
    opt(j, "seed", cfg.seed);
    opt(j, "out_dir", cfg.out_dir);
    opt(j, "threads", cfg.threads);
    opt(j, "server_overlap", cfg.server_overlap);

    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"image_side", "classes", "contexts", "per_cell", "noise",
                             "partition"});
      opt(d, "image_side", cfg.corpus.image_side);
      opt(d, "classes", cfg.corpus.num_classes);
      opt(d, "contexts", cfg.corpus.num_contexts);
      opt(d, "per_cell", cfg.corpus.per_cell);
      opt(d, "noise", cfg.corpus.noise);
      if (d.contains("partition")) {
        const json& p = d.at("partition");
        check_keys(p, "data.partition", {"kind", "clients", "alpha"});
        opt(p, "kind", cfg.partition.kind);
        opt(p, "clients", cfg.partition.clients);
        opt(p, "alpha", cfg.partition.alpha);
      }
    }

    if (j.contains("client")) {
      const json& c = j.at("client");
      check_keys(c, "client", {"hidden", "epochs", "lr", "momentum", "batch_size"});
      opt(c, "hidden", cfg.client.hidden);
      opt(c, "epochs", cfg.client.epochs);
      opt(c, "lr", cfg.client.lr);
      opt(c, "momentum", cfg.client.momentum);
      opt(c, "batch_size", cfg.client.batch_size);
    }

    if (j.contains("diffusion")) {
      const json& d = j.at("diffusion");
      check_keys(d, "diffusion",
                 {"timesteps", "beta_min", "beta_max", "eta", "emb_dim", "hidden", "epochs",
                  "lr", "momentum", "batch_size", "cond_dropout"});
      opt(d, "timesteps", cfg.diffusion.timesteps);
      opt(d, "beta_min", cfg.diffusion.beta_min);
      opt(d, "beta_max", cfg.diffusion.beta_max);
      opt(d, "eta", cfg.diffusion.eta);
      opt(d, "emb_dim", cfg.diffusion.emb_dim);
      opt(d, "hidden", cfg.diffusion.hidden);
      opt(d, "epochs", cfg.diffusion.epochs);
      opt(d, "lr", cfg.diffusion.lr);
      opt(d, "momentum", cfg.diffusion.momentum);
      opt(d, "batch_size", cfg.diffusion.batch_size);
      opt(d, "cond_dropout", cfg.diffusion.cond_dropout);
    }

    if (j.contains("guidance")) {
      const json& g = j.at("guidance");
      check_keys(g, "guidance",
                 {"lambda_bn", "lambda_ce", "guide_scale", "batch_size", "sample_steps"});
      opt(g, "lambda_bn", cfg.guidance.lambda_bn);
      opt(g, "lambda_ce", cfg.guidance.lambda_ce);
      opt(g, "guide_scale", cfg.guidance.guide_scale);
      opt(g, "batch_size", cfg.guidance.batch_size);
      opt(g, "sample_steps", cfg.guidance.sample_steps);
    }

    if (j.contains("synthesis")) {
      const json& s = j.at("synthesis");
      check_keys(s, "synthesis", {"per_class_count"});
      opt(s, "per_class_count", cfg.synthesis.per_class_count);
    }

    if (j.contains("aggregation")) {
      const json& a = j.at("aggregation");
      check_keys(a, "aggregation",
                 {"strategies", "lambda_distill", "temperature", "epochs", "lr", "momentum",
                  "batch_size", "hidden"});
      opt(a, "strategies", cfg.aggregation.strategies);
      opt(a, "lambda_distill", cfg.aggregation.lambda_distill);
      opt(a, "temperature", cfg.aggregation.temperature);
      opt(a, "epochs", cfg.aggregation.epochs);
      opt(a, "lr", cfg.aggregation.lr);
      opt(a, "momentum", cfg.aggregation.momentum);
      opt(a, "batch_size", cfg.aggregation.batch_size);
      opt(a, "hidden", cfg.aggregation.hidden);
    }

    if (j.contains("baselines")) {
      const json& b = j.at("baselines");
      check_keys(b, "baselines",
                 {"prompts_only", "ceiling", "fedavg", "fedavg_rounds", "fedavg_local_epochs"});
      opt(b, "prompts_only", cfg.baselines.prompts_only);
      opt(b, "ceiling", cfg.baselines.ceiling);
      opt(b, "fedavg", cfg.baselines.fedavg);
      opt(b, "fedavg_rounds", cfg.baselines.fedavg_rounds);
      opt(b, "fedavg_local_epochs", cfg.baselines.fedavg_local_epochs);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["threads"] = cfg.threads;
  j["server_overlap"] = cfg.server_overlap;
  j["data"] = {{"image_side", cfg.corpus.image_side},
               {"classes", cfg.corpus.num_classes},
               {"contexts", cfg.corpus.num_contexts},
               {"per_cell", cfg.corpus.per_cell},
               {"noise", cfg.corpus.noise},
               {"partition",
                {{"kind", cfg.partition.kind},
                 {"clients", cfg.partition.clients},
                 {"alpha", cfg.partition.alpha}}}};
  j["client"] = {{"hidden", cfg.client.hidden},
                 {"epochs", cfg.client.epochs},
                 {"lr", cfg.client.lr},
                 {"momentum", cfg.client.momentum},
                 {"batch_size", cfg.client.batch_size}};
  j["diffusion"] = {{"timesteps", cfg.diffusion.timesteps},
                    {"beta_min", cfg.diffusion.beta_min},
                    {"beta_max", cfg.diffusion.beta_max},
                    {"eta", cfg.diffusion.eta},
                    {"emb_dim", cfg.diffusion.emb_dim},
                    {"hidden", cfg.diffusion.hidden},
                    {"epochs", cfg.diffusion.epochs},
                    {"lr", cfg.diffusion.lr},
                    {"momentum", cfg.diffusion.momentum},
                    {"batch_size", cfg.diffusion.batch_size},
                    {"cond_dropout", cfg.diffusion.cond_dropout}};
  j["guidance"] = {{"lambda_bn", cfg.guidance.lambda_bn},
                   {"lambda_ce", cfg.guidance.lambda_ce},
                   {"guide_scale", cfg.guidance.guide_scale},
                   {"batch_size", cfg.guidance.batch_size},
                   {"sample_steps", cfg.guidance.sample_steps}};
  j["synthesis"] = {{"per_class_count", cfg.synthesis.per_class_count}};
  j["aggregation"] = {{"strategies", cfg.aggregation.strategies},
                      {"lambda_distill", cfg.aggregation.lambda_distill},
                      {"temperature", cfg.aggregation.temperature},
                      {"epochs", cfg.aggregation.epochs},
                      {"lr", cfg.aggregation.lr},
                      {"momentum", cfg.aggregation.momentum},
                      {"batch_size", cfg.aggregation.batch_size},
                      {"hidden", cfg.aggregation.hidden}};
  j["baselines"] = {{"prompts_only", cfg.baselines.prompts_only},
                    {"ceiling", cfg.baselines.ceiling},
                    {"fedavg", cfg.baselines.fedavg},
                    {"fedavg_rounds", cfg.baselines.fedavg_rounds},
                    {"fedavg_local_epochs", cfg.baselines.fedavg_local_epochs}};
  return j.dump(2) + "\n";
}

}  // namespace flmg::io
