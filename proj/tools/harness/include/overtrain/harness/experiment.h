#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "overtrain/harness/config.h"
#include "overtrain/verify.h"

namespace overtrain::harness {

inline constexpr const char* kToolName = "overtrain";
inline constexpr const char* kToolVersion = "0.1.0";

/// One CSV record. `batch` is 0 for gaussian rows and +infinity for the
/// infinite-batch limit; `tau` is +infinity for ideal checkpoints.
struct MeasurementRow {
  std::string experiment;
  std::string phase;
  int d = 0;
  int stage = 0;
  double t_n = 0.0;
  double tau = 0.0;
  double gamma = 0.0;
  double eta = 0.0;
  double lambda = 0.0;
  double batch = 0.0;
  int K = 0;
  std::uint64_t seed = 0;
  double loss_pre_before = 0.0;
  double loss_pre_after = 0.0;
  double loss_ft_unreg = 0.0;
  double delta_pre = 0.0;
  double offdiag_norm = 0.0;
  double residual = 0.0;
};

/// Frozen header of rows.csv.
const std::vector<std::string>& row_columns();

struct CheckpointRow {
  std::string experiment;
  int d = 0;
  int stage = 0;
  double t_n = 0.0;
  double tau = 0.0;
  double loss_pre = 0.0;
  double offdiag_norm = 0.0;
  double residual = 0.0;
  double half_time = 0.0;  ///< NaN when never reached
};

/// A grid point that raised instead of producing rows.
struct FailureRow {
  std::string phase;
  std::string coordinates;
  std::string error;
};

enum Phase : unsigned {
  kPhasePretrain = 1u << 0,
  kPhaseGaussian = 1u << 1,
  kPhaseFinetune = 1u << 2,
  kPhaseVerify = 1u << 3,
  kPhaseAll = kPhasePretrain | kPhaseGaussian | kPhaseFinetune | kPhaseVerify,
};

struct RunOptions {
  int jobs = 1;
  /// Adds closed-form vs Monte-Carlo rows to the verification suite.
  bool mc = false;
};

struct RunOutput {
  std::vector<CheckpointRow> checkpoints;
  std::vector<MeasurementRow> rows;
  std::vector<FailureRow> failures;
  std::vector<VerificationReport> reports;

  /// Failed grid points or failed applicable claims.
  bool ok() const;
};

/// Runs the selected phases. Pre-training happens once per tau and is shared.
RunOutput run_phases(const ExperimentConfig& config, unsigned phases, const RunOptions& options);

/// All phases.
RunOutput run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Verification claims only. Ideal checkpoints are always included next to
/// the configured tau values.
std::vector<VerificationReport> run_verification_suite(const ExperimentConfig& config, const RunOptions& options);

std::string rows_csv(const std::vector<MeasurementRow>& rows);
std::string reports_csv(const std::vector<VerificationReport>& reports);
std::string failures_csv(const std::vector<FailureRow>& failures);
std::string checkpoints_csv(const std::vector<CheckpointRow>& rows);
std::string manifest_json(const ExperimentConfig& config, const std::string& command, unsigned phases,
                          const RunOptions& options, const RunOutput& output);

/// Writes the files belonging to `phases` into `dir` (created if missing).
void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& config, const std::string& command,
                   unsigned phases, const RunOptions& options, const RunOutput& output);

}  // namespace overtrain::harness
