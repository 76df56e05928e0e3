#include "overtrain/sensitivity.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "overtrain/errors.h"
#include "overtrain/seeding.h"

namespace overtrain {

std::string_view to_string(CurveLabel label) {
  switch (label) {
    case CurveLabel::kPerturbedPreLoss:
      return "perturbed_pre_loss";
    case CurveLabel::kFinalPreLoss:
      return "final_pre_loss";
    case CurveLabel::kDeltaPre:
      return "delta_pre";
    case CurveLabel::kFinalFtLossUnreg:
      return "final_ft_loss_unreg";
  }
  return "unknown";
}

std::optional<int> inflection_point(const SensitivityCurve& curve) {
  if (curve.points.size() < 2) throw InsufficientDataError("inflection point needs at least two stages");
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
    if (curve.points[i].value < curve.points[i + 1].value) return curve.points[i].stage;
  }
  return std::nullopt;
}

double delta_pre(const PretrainCheckpoint& checkpoint, const FinetuneTrace& trace, const LinearTask& task_pre) {
  if (!(trace.anchor == checkpoint.model)) {
    throw InconsistentInputsError("fine-tuning trace is not anchored at the checkpoint model");
  }
  return loss_pre(trace.final_model(), task_pre) - loss_pre(trace.anchor, task_pre);
}

std::vector<SensitivityCurve> gaussian_sensitivity_sweep(const LinearTask& task,
                                                         const std::vector<PretrainCheckpoint>& checkpoints,
                                                         const std::vector<double>& gammas, bool use_mc,
                                                         const PerturbSpec& spec) {
  if (static_cast<int>(checkpoints.size()) != task.dim()) {
    std::ostringstream os;
    os << "gaussian sweep needs checkpoints for stages 1.." << task.dim() << ", got " << checkpoints.size();
    throw InsufficientDataError(os.str());
  }
  std::vector<SensitivityCurve> curves;
  for (std::size_t g = 0; g < gammas.size(); ++g) {
    SensitivityCurve perturbed{{}, CurveLabel::kPerturbedPreLoss, gammas[g]};
    SensitivityCurve delta{{}, CurveLabel::kDeltaPre, gammas[g]};
    for (const PretrainCheckpoint& c : checkpoints) {
      double value = 0.0;
      double base = 0.0;
      if (use_mc) {
        PerturbSpec local = spec;
        local.gamma = gammas[g];
        local.seed = derive_seed(spec.seed, {g, static_cast<std::uint64_t>(c.stage)});
        value = perturbed_loss_mc(c.model, task, local).mean;
        base = loss_pre(c.model, task);
        delta.points.push_back({c.stage, value - base});
      } else {
        const PerturbationTerms terms = perturbation_terms(c.model, task, gammas[g]);
        value = terms.total();
        delta.points.push_back({c.stage, terms.degradation()});
      }
      perturbed.points.push_back({c.stage, value});
    }
    curves.push_back(std::move(perturbed));
    curves.push_back(std::move(delta));
  }
  return curves;
}

std::vector<StageOutcome> finetune_stage_sweep(const LinearTask& task_pre, const LinearTask& task_ft,
                                               const StageCheckpoints& checkpoints, const FinetuneConfig& config) {
  const double gamma = gamma_bound(task_pre, task_ft);
  std::vector<StageOutcome> out;
  out.reserve(checkpoints.checkpoints.size());
  for (const PretrainCheckpoint& c : checkpoints.checkpoints) {
    const FinetuneTrace trace = finetune(c.model, task_ft, config, gamma);
    const TwoLayerModel& last = trace.final_model();
    StageOutcome o;
    o.stage = c.stage;
    o.loss_pre_before = loss_pre(c.model, task_pre);
    o.loss_pre_after = loss_pre(last, task_pre);
    o.loss_ft_unreg = trace.per_step_losses.back().loss_ft_unreg;
    o.delta_pre = delta_pre(c, trace, task_pre);
    o.offdiag_norm = spectral_coordinates(last, task_pre).offdiag_norm;
    o.residual = c.residual;
    o.time = c.time;
    out.push_back(o);
  }
  return out;
}

SensitivityCurve curve_from(const std::vector<StageOutcome>& outcomes, CurveLabel label, double parameter) {
  SensitivityCurve curve{{}, label, parameter};
  for (const StageOutcome& o : outcomes) {
    double value = 0.0;
    switch (label) {
      case CurveLabel::kPerturbedPreLoss:
        throw InvalidParameterError("fine-tuning outcomes carry no perturbed loss");
      case CurveLabel::kFinalPreLoss:
        value = o.loss_pre_after;
        break;
      case CurveLabel::kDeltaPre:
        value = o.delta_pre;
        break;
      case CurveLabel::kFinalFtLossUnreg:
        value = o.loss_ft_unreg;
        break;
    }
    curve.points.push_back({o.stage, value});
  }
  return curve;
}

double hessian_trace(const TwoLayerModel& model, const LinearTask& task) {
  if (model.dim() != task.dim()) throw InvalidDimensionError("model/task dimension mismatch");
  const double d = static_cast<double>(model.dim());
  return 2.0 * d * (model.w1().squaredNorm() + model.w2().squaredNorm());
}

QuadraticGap quadratic_sensitivity_gap(const TwoLayerModel& model, const LinearTask& task, double gamma) {
  const PerturbationTerms terms = perturbation_terms(model, task, gamma);
  QuadraticGap out;
  out.quadratic = 0.5 * gamma * gamma * hessian_trace(model, task);
  // The base loss cancels exactly; taking the degradation term directly avoids
  // losing the small quartic term to cancellation against a large base loss.
  out.exact = terms.degradation();
  out.gap = out.exact - out.quadratic;
  return out;
}

double batch_gap(const TwoLayerModel& anchor, const LinearTask& task_ft, const FinetuneConfig& config, double gamma) {
  if (config.batch.is_infinite()) throw InvalidParameterError("batch gap needs a finite batch size");
  FinetuneConfig finite = config;
  finite.snapshot_stride = 1;
  FinetuneConfig ideal = finite;
  ideal.batch = BatchSize::infinite();
  const FinetuneTrace a = finetune(anchor, task_ft, finite, gamma);
  const FinetuneTrace b = finetune(anchor, task_ft, ideal, gamma);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    worst = std::max(worst, (a.snapshots[i].model.product() - b.snapshots[i].model.product()).norm());
  }
  return worst;
}

double init_gap(const TwoLayerModel& real_anchor, const TwoLayerModel& ideal_anchor, const LinearTask& task_ft,
                const FinetuneConfig& config, double gamma) {
  const FinetuneTrace a = finetune(real_anchor, task_ft, config, gamma);
  const FinetuneTrace b = finetune(ideal_anchor, task_ft, config, gamma);
  return (a.final_model().product() - b.final_model().product()).norm();
}

}  // namespace overtrain
