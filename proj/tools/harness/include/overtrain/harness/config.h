#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "overtrain/errors.h"
#include "overtrain/finetune.h"
#include "overtrain/pretrain.h"
#include "overtrain/spectral.h"
#include "overtrain/verify.h"

namespace overtrain::harness {

struct TaskSection {
  int d = 0;
  std::vector<double> spectrum_pre;
  std::vector<double> spectrum_ft;
  /// Seed of the orthogonal factors; derived from the parent seed when absent.
  std::optional<std::uint64_t> seed;
};

struct PretrainSection {
  /// +infinity selects the ideal checkpoints.
  std::vector<double> tau;
  std::optional<double> step;
  std::optional<double> horizon;
  double eps_ckpt = 1e-3;
};

struct PerturbSection {
  std::vector<double> gamma;
  long mc_samples = 100000;
  bool mc_enabled = false;
};

struct FinetuneSection {
  std::vector<double> eta;
  std::vector<double> lambda;
  int K = 0;
  std::vector<BatchSize> batch;
  std::vector<std::uint64_t> seeds;
};

struct VerifySection {
  double epsilon = 1e-3;
  double delta_prob = 0.01;
  std::optional<double> tolerance;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  TaskSection task;
  PretrainSection pretrain;
  PerturbSection perturb;
  FinetuneSection finetune;
  VerifySection verify;
  std::string output_dir;

  std::uint64_t task_seed() const;
  std::pair<LinearTask, LinearTask> tasks() const;
  PretrainConfig pretrain_config(double tau) const;
  VerifyOptions verify_options() const;
};

/// Raised with one diagnostic per offending field.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

/// Parses and validates a config. A manifest written by this tool is also
/// accepted: its "config" member is used.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Normalized echo; parse_config(to_json(c)) reproduces c.
nlohmann::ordered_json to_json(const ExperimentConfig& config);

}  // namespace overtrain::harness
