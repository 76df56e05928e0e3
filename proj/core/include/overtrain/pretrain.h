#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "overtrain/spectral.h"

namespace overtrain {

/// Explicit-Euler discretization of the population gradient flow
///   dW1/dt = -2 (theta - A) W2^T,   dW2/dt = -2 W1^T (theta - A)
/// started from W1 = W2 = exp(-tau) I.
struct PretrainConfig {
  double tau = 10.0;
  double step = 1e-3;
  double horizon = 100.0;
  double eps_ckpt = 1e-3;
  // Number of times the step is halved and the run restarted when the loss
  // increases between two integrator steps.
  int max_halvings = 3;
};

/// Config with a horizon long enough for the smallest feature to be learned.
PretrainConfig default_pretrain_config(const Spectrum& spectrum, double tau);

struct PretrainCheckpoint {
  int stage = 0;
  double time = 0.0;
  TwoLayerModel model;
  /// ||theta(t_n) - U Sigma_{:n} V^T||_F
  double residual = 0.0;
};

struct PretrainTrace {
  std::vector<PretrainCheckpoint> checkpoints;
  TwoLayerModel final_model;
  /// First time diag coordinate i of U^T theta V exceeds sigma_i / 2 (0-based i).
  std::vector<std::optional<double>> half_times;
  double step_used = 0.0;
  long steps_taken = 0;
};

/// W1 = W2 = exp(-tau) I.
TwoLayerModel init_model(int d, double tau);

/// Integrates the flow and emits one checkpoint per stage n = 1..d.
///
/// Stage n is entered at the first time the residual to U Sigma_{:n} V^T drops
/// below eps_ckpt. For n < d the checkpoint is then advanced along the plateau
/// while the residual keeps decreasing, so it lands at the plateau's best
/// approximation; the last stage is recorded at its first crossing.
///
/// Throws InvalidParameterError when step >= 1/(8 sigma_1), InstabilityError
/// when the loss increases even after max_halvings retries, and
/// IncompleteTraceError when stage d is not reached within the horizon.
PretrainTrace pretrain_flow(const LinearTask& task, const PretrainConfig& config);

/// W1 = U (Sigma_{:n})^{1/2}, W2 = (Sigma_{:n})^{1/2} V^T.
TwoLayerModel ideal_checkpoint(const LinearTask& task, int n);

/// Checkpoints 1..d for either an integrated run (finite tau) or the ideal
/// factorizations (tau = +infinity; time and residual are reported as 0).
struct StageCheckpoints {
  double tau = std::numeric_limits<double>::infinity();
  std::vector<PretrainCheckpoint> checkpoints;

  bool ideal() const { return tau == std::numeric_limits<double>::infinity(); }
  const PretrainCheckpoint& stage(int n) const { return checkpoints.at(static_cast<std::size_t>(n - 1)); }
};

StageCheckpoints ideal_stage_checkpoints(const LinearTask& task);
StageCheckpoints stage_checkpoints(const LinearTask& task, const PretrainConfig& config);
/// Ideal checkpoints when tau is +infinity, otherwise default_pretrain_config(tau).
StageCheckpoints stage_checkpoints(const LinearTask& task, double tau);

}  // namespace overtrain
