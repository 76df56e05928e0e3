#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "overtrain/finetune.h"
#include "overtrain/perturb.h"
#include "overtrain/pretrain.h"
#include "overtrain/spectral.h"

namespace overtrain {

enum class CurveLabel { kPerturbedPreLoss, kFinalPreLoss, kDeltaPre, kFinalFtLossUnreg };

std::string_view to_string(CurveLabel label);

struct CurvePoint {
  int stage = 0;
  double value = 0.0;
};

/// A metric measured at consecutive pre-training stages.
struct SensitivityCurve {
  std::vector<CurvePoint> points;
  CurveLabel label = CurveLabel::kPerturbedPreLoss;
  /// Sweep coordinate the curve belongs to (gamma, lambda, ...); 0 when unused.
  double parameter = 0.0;
};

/// Smallest stage r with value(r) < value(r+1); nullopt when the curve never
/// strictly rises. Throws InsufficientDataError for fewer than two points.
std::optional<int> inflection_point(const SensitivityCurve& curve);

/// L_pre(final) - L_pre(anchor). The trace must be anchored at the checkpoint's model.
double delta_pre(const PretrainCheckpoint& checkpoint, const FinetuneTrace& trace, const LinearTask& task_pre);

/// Per gamma: the perturbed-loss curve followed by its delta-over-unperturbed
/// curve (labelled kDeltaPre). Closed form unless `use_mc`, in which case
/// spec.samples and spec.seed drive the estimate (gamma comes from `gammas`).
std::vector<SensitivityCurve> gaussian_sensitivity_sweep(const LinearTask& task,
                                                         const std::vector<PretrainCheckpoint>& checkpoints,
                                                         const std::vector<double>& gammas, bool use_mc,
                                                         const PerturbSpec& spec);

/// Result of fine-tuning from one stage checkpoint.
struct StageOutcome {
  int stage = 0;
  double loss_pre_before = 0.0;
  double loss_pre_after = 0.0;
  double loss_ft_unreg = 0.0;
  double delta_pre = 0.0;
  double offdiag_norm = 0.0;
  double residual = 0.0;
  double time = 0.0;
};

/// Fine-tunes from every checkpoint with the same config; Gamma comes from the task pair.
std::vector<StageOutcome> finetune_stage_sweep(const LinearTask& task_pre, const LinearTask& task_ft,
                                               const StageCheckpoints& checkpoints, const FinetuneConfig& config);

SensitivityCurve curve_from(const std::vector<StageOutcome>& outcomes, CurveLabel label, double parameter = 0.0);

/// Trace of the Hessian of L_pre over all 2 d^2 entries of (W1, W2):
/// 2 d (||W1||_F^2 + ||W2||_F^2).
double hessian_trace(const TwoLayerModel& model, const LinearTask& task);

struct QuadraticGap {
  double quadratic = 0.0;  ///< gamma^2 / 2 * Tr H
  double exact = 0.0;      ///< expected perturbed loss minus unperturbed loss
  double gap = 0.0;        ///< exact - quadratic
};

QuadraticGap quadratic_sensitivity_gap(const TwoLayerModel& model, const LinearTask& task, double gamma);

/// max over k of ||theta_m(k) - theta_inf(k)||_F: the config's finite batch
/// against the infinite-batch run from the same anchor.
double batch_gap(const TwoLayerModel& anchor, const LinearTask& task_ft, const FinetuneConfig& config, double gamma);

/// ||theta_real(K) - theta_ideal(K)||_F after fine-tuning both anchors with one config.
double init_gap(const TwoLayerModel& real_anchor, const TwoLayerModel& ideal_anchor, const LinearTask& task_ft,
                const FinetuneConfig& config, double gamma);

}  // namespace overtrain
