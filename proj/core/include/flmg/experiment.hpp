#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "flmg/config.hpp"

namespace flmg::run {

/// A pipeline stage failed (CLI exit code 3). `stage` names the offender.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& msg)
      : std::runtime_error("[" + stage_name + "] " + msg), stage(std::move(stage_name)) {}
};

enum class Stage {
  MakeData,
  ClientTrain,
  PretrainDiffusion,
  Generate,
  Aggregate,
  Evaluate,
  Report,
};

const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);
/// Comma-separated stage names (the CLI subcommand spellings); throws
/// io::ConfigError on an unknown name.
std::vector<Stage> parse_stages(const std::string& csv);

/// Runs the requested stages in canonical order inside cfg.out_dir. Every
/// stage persists its outputs, and later stages reload whatever an earlier
/// invocation left behind, so subsets can be run across processes. The
/// resolved config snapshot is written first.
void run_experiment(const io::ExperimentConfig& cfg, const std::vector<Stage>& stages,
                    int threads);

/// Renders the accuracy table and the communication/compute ledger of a
/// completed run directory as text.
std::string emit_report(const std::string& run_dir);

}  // namespace flmg::run
