#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flmg/config.hpp"
#include "flmg/experiment.hpp"
#include "flmg/parallel.hpp"
#include "flmg/rng.hpp"
#include "flmg/theory.hpp"
#include "json.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int threads = 0;
};

void add_common(CLI::App* sub, CommonOpts& opts, bool needs_config) {
  auto* c = sub->add_option("--config", opts.config_path, "experiment config (JSON)");
  c->check(CLI::ExistingFile);
  if (needs_config) c->required();
  sub->add_option("--seed", opts.seed, "override the config seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  sub->add_option("--out", opts.out_dir, "override the config output directory");
  sub->add_option("--threads", opts.threads,
                  "worker threads (0: FLMG_THREADS env, then hardware)");
}

flmg::io::ExperimentConfig resolve_config(const CommonOpts& opts) {
  flmg::io::ExperimentConfig cfg = flmg::io::load_config_file(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  cfg.validate();
  return cfg;
}

int run_stages(const CommonOpts& opts, const std::vector<flmg::run::Stage>& stages) {
  const auto cfg = resolve_config(opts);
  const int threads = flmg::resolve_threads(opts.threads > 0 ? opts.threads : cfg.threads);
  flmg::run::run_experiment(cfg, stages, threads);
  return kExitOk;
}

int run_verify_theory(std::uint64_t seed, int worlds, int max_size, const std::string& out_dir) {
  if (worlds < 1 || max_size < 2) throw flmg::io::ConfigError("need worlds >= 1, max-size >= 2");
  int violations = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < worlds; ++i) {
    const auto world =
        flmg::theory::random_world(flmg::derive_seed(seed, static_cast<std::uint64_t>(i)),
                                   static_cast<std::size_t>(max_size));
    const auto res = flmg::theory::check_divergence_bound(world);
    min_margin = std::min(min_margin, res.margin);
    if (!res.holds) {
      ++violations;
      std::cerr << "violation at world " << i << ": lhs=" << res.lhs << " rhs=" << res.rhs
                << " margin=" << res.margin << "\n";
    }
  }
  std::cout << "checked " << worlds << " random discrete worlds (support size <= " << max_size
            << "): " << violations << " bound violations, min margin " << min_margin << "\n";
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(std::filesystem::path(out_dir) / "theory.json");
    f << nlohmann::json{{"worlds", worlds},
                        {"max_size", max_size},
                        {"seed", seed},
                        {"violations", violations},
                        {"min_margin", min_margin}}
             .dump(2)
      << "\n";
    if (!f) throw flmg::run::StageError("verify-theory", "cannot write theory.json");
  }
  return violations == 0 ? kExitOk : kExitStage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"one-shot federated learning simulator with a guided diffusion generator"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string stages_csv;

  const std::vector<std::pair<std::string, flmg::run::Stage>> stage_cmds = {
      {"make-data", flmg::run::Stage::MakeData},
      {"client-train", flmg::run::Stage::ClientTrain},
      {"pretrain-diffusion", flmg::run::Stage::PretrainDiffusion},
      {"generate", flmg::run::Stage::Generate},
      {"aggregate", flmg::run::Stage::Aggregate},
      {"evaluate", flmg::run::Stage::Evaluate},
  };
  for (const auto& [name, stage] : stage_cmds) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    add_common(sub, opts, true);
    (void)stage;
  }

  auto* run_sub = app.add_subcommand("run-experiment", "run the pipeline end to end");
  add_common(run_sub, opts, true);
  run_sub->add_option("--stages", stages_csv,
                      "comma-separated stage subset (default: all stages)");

  auto* report_sub = app.add_subcommand("report", "render the report for a finished run");
  add_common(report_sub, opts, false);

  auto* theory_sub =
      app.add_subcommand("verify-theory", "check the divergence bound by exact enumeration");
  int worlds = 1000;
  int max_size = 64;
  std::uint64_t theory_seed = 1;
  std::string theory_out;
  theory_sub->add_option("--worlds", worlds, "number of random discrete worlds");
  theory_sub->add_option("--max-size", max_size, "largest support size");
  theory_sub->add_option("--seed", theory_seed, "base seed");
  theory_sub->add_option("--out", theory_out, "directory for theory.json (optional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    if (name == "verify-theory") return run_verify_theory(theory_seed, worlds, max_size, theory_out);

    if (name == "report") {
      std::string dir = opts.out_dir;
      if (dir.empty()) {
        if (opts.config_path.empty())
          throw flmg::io::ConfigError("report needs --out or --config to locate the run");
        dir = resolve_config(opts).out_dir;
      }
      std::cout << flmg::run::emit_report(dir);
      return kExitOk;
    }

    if (name == "run-experiment") {
      const auto stages =
          stages_csv.empty() ? flmg::run::all_stages() : flmg::run::parse_stages(stages_csv);
      return run_stages(opts, stages);
    }

    for (const auto& [cmd, stage] : stage_cmds) {
      if (name == cmd) return run_stages(opts, {stage});
    }
    throw flmg::io::ConfigError("unknown subcommand " + name);
  } catch (const flmg::io::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const flmg::run::StageError& e) {
    std::cerr << "stage failure " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
}
