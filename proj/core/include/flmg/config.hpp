#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flmg/data.hpp"
#include "flmg/guidance.hpp"

namespace flmg::io {

/// Malformed or inconsistent experiment configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PartitionConfig {
  std::string kind = "feature_skew";  // or "label_skew"
  int clients = 4;
  double alpha = 0.5;  // label_skew Dirichlet concentration
};

struct ClientTrainSection {
  std::vector<int> hidden = {64};
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
};

struct DiffusionSection {
  int timesteps = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  double eta = 0.0;
  int emb_dim = 32;
  std::vector<int> hidden = {128, 128};
  int epochs = 40;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  double cond_dropout = 0.1;
};

struct SynthesisSection {
  int per_class_count = 0;  // <= 0: match each client's per-class train count
};

struct AggregationSection {
  std::vector<std::string> strategies = {"sd"};  // subset of {"ft","md","sd"}
  double lambda_distill = 1.0;
  double temperature = 1.0;
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  std::vector<int> hidden = {64};  // server model; independent of client archs
};

struct BaselineSection {
  bool prompts_only = true;
  bool ceiling = true;
  bool fedavg = false;
  int fedavg_rounds = 20;
  int fedavg_local_epochs = 1;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  int threads = 0;  // 0: resolve from FLMG_THREADS or hardware
  data::ToyCorpusConfig corpus;
  double server_overlap = 1.0;  // fraction of client contexts in the server corpus
  PartitionConfig partition;
  ClientTrainSection client;
  DiffusionSection diffusion;
  guidance::GuidanceConfig guidance;
  SynthesisSection synthesis;
  AggregationSection aggregation;
  BaselineSection baselines;

  void validate() const;  // throws ConfigError
};

/// Strict parse: every section rejects unknown keys; all keys are optional
/// and default as above. Throws ConfigError on malformed input.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

/// Full resolved snapshot (every field, defaults included); parses back to
/// an identical config.
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace flmg::io
