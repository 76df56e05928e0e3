#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "overtrain/harness/config.h"
#include "overtrain/harness/experiment.h"

namespace {

using namespace overtrain::harness;

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitInvalid = 2;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool mc = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Experiment config (JSON) or a manifest.json from an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", flags.out, "Output directory (default: config output_dir, else out/<name>)");
  cmd->add_option("--seed", flags.seed, "Parent seed, overrides the config");
  cmd->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--mc", flags.mc, "Add closed-form vs Monte-Carlo checks to the verification suite");
}

int execute(const std::string& command, unsigned phases, const CommonFlags& flags) {
  ExperimentConfig config;
  try {
    config = load_config(flags.config);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  if (flags.seed) config.seed = *flags.seed;
  if (!flags.out.empty()) config.output_dir = flags.out;
  if (config.output_dir.empty()) config.output_dir = "out/" + config.name;

  RunOptions options;
  options.jobs = flags.jobs;
  options.mc = flags.mc;

  RunOutput output = run_phases(config, phases, options);
  write_outputs(config.output_dir, config, command, phases, options, output);

  std::size_t failed = 0, na = 0;
  for (const auto& r : output.reports) {
    if (r.failed()) {
      ++failed;
      std::cerr << "FAIL " << r.claim << " [" << r.scale << "] margin=" << r.margin << ": " << r.detail << "\n";
    }
    if (!r.applicable()) ++na;
  }
  for (const auto& f : output.failures) std::cerr << "grid failure (" << f.phase << ") " << f.coordinates << ": " << f.error << "\n";

  std::cout << command << ": " << output.checkpoints.size() << " checkpoints, " << output.rows.size() << " rows, "
            << output.reports.size() << " reports (" << failed << " failed, " << na << " not applicable), "
            << output.failures.size() << " grid failures -> " << config.output_dir << "\n";
  return output.ok() ? kExitOk : kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical experiments on progressive sensitivity in two-layer linear networks"};
  app.require_subcommand(1);

  CommonFlags flags;
  struct Sub {
    const char* name;
    const char* help;
    unsigned phases;
  };
  const Sub subs[] = {
      {"pretrain", "Integrate pre-training and write checkpoints.csv", kPhasePretrain},
      {"perturb", "Gaussian perturbation sweep (rows.csv)", kPhaseGaussian},
      {"finetune", "Fine-tuning sweep (rows.csv)", kPhaseFinetune},
      {"verify", "Run the verification suite (reports.csv)", kPhaseVerify},
      {"run", "All phases", kPhaseAll},
  };
  for (const Sub& s : subs) add_common(app.add_subcommand(s.name, s.help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  for (const Sub& s : subs) {
    if (app.got_subcommand(s.name)) {
      try {
        return execute(s.name, s.phases, flags);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailed;
      }
    }
  }
  return kExitInvalid;
}
