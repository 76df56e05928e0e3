#include "overtrain/verify.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "overtrain/errors.h"
#include "overtrain/format.h"
#include "overtrain/perturb.h"
#include "overtrain/seeding.h"

namespace overtrain {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double x) { return format_double(x); }

std::string describe_finetune(const FinetuneConfig& c) {
  std::ostringstream os;
  os << " eta=" << fmt(c.eta) << " lambda=" << fmt(c.lambda) << " K=" << c.steps << " batch=" << c.batch.to_string();
  return os.str();
}

std::string describe_tau(double tau) { return " tau=" + fmt(tau); }

// Fills verdict and margin from the items: margin is the smallest slack.
void conclude(VerificationReport& report) {
  report.margin = kInf;
  bool ok = true;
  for (const CheckItem& item : report.items) {
    report.margin = std::min(report.margin, item.slack);
    ok = ok && item.ok;
  }
  if (report.items.empty()) report.margin = 0.0;
  report.verdict = ok ? Verdict::kPassed : Verdict::kFailed;
}

VerificationReport not_applicable(std::string claim, std::string scale, std::string detail) {
  VerificationReport r;
  r.claim = std::move(claim);
  r.scale = std::move(scale);
  r.verdict = Verdict::kNotApplicable;
  r.margin = 0.0;
  r.detail = std::move(detail);
  return r;
}

void require_full(const LinearTask& task, const StageCheckpoints& checkpoints) {
  if (static_cast<int>(checkpoints.checkpoints.size()) != task.dim()) {
    std::ostringstream os;
    os << "need checkpoints for stages 1.." << task.dim() << ", got " << checkpoints.checkpoints.size();
    throw InsufficientDataError(os.str());
  }
}

// exp(-C tau) <= min{sigma_1 / 2, 1/4, sigma_d^2 / (16 d sigma_1 (2 sigma_1 + gamma^2))}
CheckItem small_init(const LinearTask& task, double gamma, double tau) {
  const double s1 = task.spectrum().feature(1);
  const double sd = task.spectrum().feature(task.dim());
  const double d = task.dim();
  const double ceiling = std::min({s1 / 2.0, 0.25, sd * sd / (16.0 * d * s1 * (2.0 * s1 + gamma * gamma))});
  CheckItem item;
  item.name = "small_init";
  if (std::isinf(tau)) {
    item.ok = true;
    item.slack = kInf;
    item.detail = "ideal checkpoints";
    return item;
  }
  const double lhs = std::exp(-kSurrogateC * tau);
  item.ok = lhs <= ceiling;
  item.slack = std::log(ceiling) + kSurrogateC * tau;
  item.detail = "exp(-C tau)=" + fmt(lhs) + " ceiling=" + fmt(ceiling);
  return item;
}

std::vector<double> perturbed_curve(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints) {
  std::vector<double> out;
  for (const PretrainCheckpoint& c : checkpoints.checkpoints) out.push_back(perturbed_loss_closed(c.model, task, gamma));
  return out;
}

std::string curve_text(const std::vector<double>& values) { return format_list(values); }

std::string inflection_text(const std::optional<int>& r) { return r ? std::to_string(*r) : "none"; }

// Runs the tech check for a config and turns a failure into a not-applicable report.
std::optional<VerificationReport> gate_tech(const std::string& claim, const std::string& scale,
                                            const LinearTask& pre, const LinearTask& ft,
                                            const FinetuneConfig& config, double tau, const VerifyOptions& options) {
  const VerificationReport tech = check_assumption_tech(pre, ft, config, tau, options.epsilon, options.delta_prob);
  if (tech.passed()) return std::nullopt;
  return not_applicable(claim, scale, "regularity bundle not met: " + tech.detail);
}

}  // namespace

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kPassed:
      return "true";
    case Verdict::kFailed:
      return "false";
    case Verdict::kNotApplicable:
      return "n/a";
  }
  return "n/a";
}

std::string describe_tasks(const LinearTask& task_pre, const LinearTask* task_ft) {
  std::string out = "d=" + std::to_string(task_pre.dim()) + " pre=" + format_list(task_pre.spectrum().values());
  if (task_ft) out += " ft=" + format_list(task_ft->spectrum().values());
  return out;
}

VerificationReport check_assumption_tech(const LinearTask& task_pre, const LinearTask& task_ft,
                                         const FinetuneConfig& config, double tau, double epsilon,
                                         double delta_prob) {
  if (task_pre.dim() != task_ft.dim()) throw InvalidDimensionError("task dimension mismatch");
  VerificationReport r;
  r.claim = "assumption_tech";
  r.scale = describe_tasks(task_pre, &task_ft) + describe_finetune(config) + describe_tau(tau) +
            " epsilon=" + fmt(epsilon) + " delta=" + fmt(delta_prob);

  const int d = task_pre.dim();
  const double gamma = gamma_bound(task_pre, task_ft);
  const double eta = config.eta;
  const double lambda = config.lambda;
  const double k = static_cast<double>(config.steps);
  const double growth = std::log1p(32.0 * eta * gamma);

  CheckItem lam{"lambda_range", std::isfinite(lambda) && lambda >= 0.0, 0.0, "lambda=" + fmt(lambda)};
  lam.slack = lam.ok ? kInf : std::min(lambda, -1.0);
  r.items.push_back(lam);

  // lambda_0 can be any constant above lambda; its infimum is lambda.
  const double load = 4.0 * eta * (lambda + 2.0) * gamma;
  r.items.push_back({"learning_rate", load < 1.0, 1.0 - load, "4 eta (lambda+2) Gamma=" + fmt(load)});

  double min_feature = kInf;
  for (int i = 1; i <= d; ++i) {
    min_feature = std::min({min_feature, task_pre.spectrum().feature(i), task_ft.spectrum().feature(i)});
  }
  const double k_floor = std::log(100.0 * gamma / epsilon) / (eta * min_feature);
  r.items.push_back({"step_count", k >= k_floor, k / k_floor - 1.0, "K=" + fmt(k) + " floor=" + fmt(k_floor)});

  CheckItem batch{"batch_size", true, kInf, ""};
  if (config.batch.is_infinite()) {
    batch.detail = "infinite batch";
  } else {
    // Union bound over the d K covariance draws: d + log(10 d K / delta).
    const double head = d + std::log(10.0 * d * std::max(k, 1.0) / delta_prob);
    const double m = config.batch.size();
    const double log_floor = 2.0 * std::log(kSurrogateC1) + std::log(head) - 2.0 * std::log(epsilon) + 2.0 * k * growth;
    batch.slack = std::log(m) - log_floor;
    batch.ok = batch.slack >= 0.0;
    batch.detail = "m=" + fmt(m) + " log floor=" + fmt(log_floor);
  }
  r.items.push_back(batch);

  CheckItem init{"init_scale", true, kInf, ""};
  if (std::isinf(tau) && tau > 0) {
    init.detail = "ideal initialization";
  } else {
    const double log_rhs = 0.5 * std::log(gamma) + std::log(epsilon) - k * growth;
    init.slack = log_rhs + kSurrogateC * tau;
    init.ok = init.slack >= 0.0;
    init.detail = "log exp(-C tau)=" + fmt(-kSurrogateC * tau) + " log ceiling=" + fmt(log_rhs);
  }
  r.items.push_back(init);

  conclude(r);

  double min_gap = kInf;
  for (int i = 1; i <= d; ++i) {
    const double g = task_pre.spectrum().feature(i) - task_ft.spectrum().feature(i);
    min_gap = std::min(min_gap, g * g);
  }
  const double eps_ceiling = min_gap / (4000.0 * d * (lambda + 1.0) * (lambda + 1.0) * gamma * gamma);

  std::ostringstream os;
  const CheckItem* binding = &r.items.front();
  for (const CheckItem& item : r.items) {
    if (item.slack < binding->slack) binding = &item;
    os << item.name << "=" << (item.ok ? "ok" : "fail") << " [" << item.detail << "]; ";
  }
  os << "binding=" << binding->name << "; epsilon ceiling " << fmt(eps_ceiling) << " (informational, "
     << (epsilon < eps_ceiling ? "met" : "not met") << ")";
  r.detail = os.str();
  return r;
}

VerificationReport verify_staged_learning(const LinearTask& task, const PretrainConfig& config) {
  VerificationReport r;
  r.claim = "staged_learning";
  r.scale = describe_tasks(task) + describe_tau(config.tau) + " step=" + fmt(config.step) +
            " eps_ckpt=" + fmt(config.eps_ckpt);
  const int d = task.dim();
  std::optional<PretrainTrace> run;
  try {
    run = pretrain_flow(task, config);
  } catch (const IncompleteTraceError& e) {
    r.items.push_back({"checkpoint_count", false, -kInf, e.what()});
    conclude(r);
    r.detail = e.what();
    return r;
  }
  const PretrainTrace& trace = *run;

  r.items.push_back({"checkpoint_count", static_cast<int>(trace.checkpoints.size()) == d,
                     static_cast<int>(trace.checkpoints.size()) == d ? kInf : -1.0,
                     std::to_string(trace.checkpoints.size()) + " checkpoints"});
  for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) {
    const PretrainCheckpoint& c = trace.checkpoints[i];
    const double slack = config.eps_ckpt - c.residual;
    r.items.push_back({"residual_" + std::to_string(c.stage), slack >= 0.0, slack,
                       "t=" + fmt(c.time) + " residual=" + fmt(c.residual)});
    if (i > 0) {
      const double gap = c.time - trace.checkpoints[i - 1].time;
      r.items.push_back({"time_order_" + std::to_string(c.stage), gap > 0.0, gap, ""});
    }
  }
  for (std::size_t i = 1; i < trace.half_times.size(); ++i) {
    const auto& a = trace.half_times[i - 1];
    const auto& b = trace.half_times[i];
    CheckItem item{"half_time_order_" + std::to_string(i + 1), false, -kInf, ""};
    if (a && b) {
      item.slack = *b - *a;
      item.ok = item.slack > 0.0;
      item.detail = fmt(*a) + " < " + fmt(*b);
    } else {
      item.detail = "coordinate never reached half its target";
    }
    r.items.push_back(item);
  }
  conclude(r);

  std::ostringstream os;
  os << "times=(";
  for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) os << (i ? "," : "") << fmt(trace.checkpoints[i].time);
  os << ") residuals=(";
  for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) {
    os << (i ? "," : "") << fmt(trace.checkpoints[i].residual);
  }
  os << ") half_times=(";
  for (std::size_t i = 0; i < trace.half_times.size(); ++i) {
    os << (i ? "," : "") << (trace.half_times[i] ? fmt(*trace.half_times[i]) : "none");
  }
  os << ") step_used=" << fmt(trace.step_used);
  r.detail = os.str();
  return r;
}

VerificationReport verify_gaussian_increment(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints) {
  require_full(task, checkpoints);
  const std::string scale = describe_tasks(task) + " gamma=" + fmt(gamma) + describe_tau(checkpoints.tau);
  const CheckItem init = small_init(task, gamma, checkpoints.tau);
  if (!init.ok) return not_applicable("gaussian_increment", scale, "small-initialization condition fails: " + init.detail);

  VerificationReport r;
  r.claim = "gaussian_increment";
  r.scale = scale;
  const int d = task.dim();
  const double sd = task.spectrum().feature(d);
  const std::vector<double> curve = perturbed_curve(task, gamma, checkpoints);
  std::ostringstream os;
  os << "curve=" << curve_text(curve) << " raw slack (increment - bound):";
  for (int n = 2; n <= d; ++n) {
    const double sn = task.spectrum().feature(n);
    const double inc = curve[n - 1] - curve[n - 2];
    const double bound = (2.0 * d * gamma * gamma - sn) * sn;
    const double slack = inc - bound;
    const double allowance =
        checkpoints.ideal() ? 1e-10 * (1.0 + std::abs(curve[n - 1]) + std::abs(curve[n - 2])) : sd * sd;
    r.items.push_back({"increment_" + std::to_string(n), slack >= -allowance, slack + allowance,
                       "increment=" + fmt(inc) + " bound=" + fmt(bound)});
    os << " " << fmt(slack);
  }
  conclude(r);
  os << "; allowance " << (checkpoints.ideal() ? "roundoff" : "sigma_d^2=" + fmt(sd * sd));
  r.detail = os.str();
  return r;
}

VerificationReport verify_gaussian_increment(const LinearTask& task, double gamma, double tau) {
  return verify_gaussian_increment(task, gamma, stage_checkpoints(task, tau));
}

VerificationReport verify_gaussian_ushape(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints) {
  require_full(task, checkpoints);
  const int d = task.dim();
  const double g2 = gamma * gamma;
  const std::string scale = describe_tasks(task) + " gamma=" + fmt(gamma) + describe_tau(checkpoints.tau);
  if (!(g2 > task.spectrum().feature(d) / d)) {
    return not_applicable("gaussian_ushape", scale,
                          "gamma^2=" + fmt(g2) + " <= sigma_d/d=" + fmt(task.spectrum().feature(d) / d));
  }
  const CheckItem init = small_init(task, gamma, checkpoints.tau);
  if (!init.ok) return not_applicable("gaussian_ushape", scale, "small-initialization condition fails: " + init.detail);

  int s = d;
  for (int i = 1; i <= d; ++i) {
    if (g2 > task.spectrum().feature(i) / d) {
      s = i;
      break;
    }
  }
  int predicted = 0;
  for (int i = 1; i <= d; ++i) {
    if (2.0 * d * g2 > task.spectrum().feature(i)) {
      predicted = i;
      break;
    }
  }

  VerificationReport r;
  r.claim = "gaussian_ushape";
  r.scale = scale;
  const std::vector<double> curve = perturbed_curve(task, gamma, checkpoints);
  for (int n = std::max(s, 2); n <= d; ++n) {
    const double inc = curve[n - 1] - curve[n - 2];
    r.items.push_back({"rise_into_" + std::to_string(n), inc > 0.0, inc, ""});
  }
  conclude(r);
  SensitivityCurve sc{{}, CurveLabel::kPerturbedPreLoss, gamma};
  for (int n = 1; n <= d; ++n) sc.points.push_back({n, curve[n - 1]});
  std::ostringstream os;
  os << "curve=" << curve_text(curve) << " s=" << s << " measured inflection=" << inflection_text(inflection_point(sc))
     << " predicted (smallest n with 2 d gamma^2 > sigma_n)=" << (predicted ? std::to_string(predicted) : "none");
  r.detail = os.str();
  return r;
}

VerificationReport verify_gaussian_ushape(const LinearTask& task, double gamma, double tau) {
  return verify_gaussian_ushape(task, gamma, stage_checkpoints(task, tau));
}

VerificationReport verify_progressive_sensitivity(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const FinetuneConfig& config, const StageCheckpoints& checkpoints,
                                                  const VerifyOptions& options) {
  require_full(task_pre, checkpoints);
  const std::string scale = describe_tasks(task_pre, &task_ft) + describe_finetune(config) + describe_tau(checkpoints.tau);
  if (auto na = gate_tech("progressive_sensitivity", scale, task_pre, task_ft, config, checkpoints.tau, options)) {
    return *na;
  }
  const double tol = options.tol();
  const std::vector<StageOutcome> outcomes = finetune_stage_sweep(task_pre, task_ft, checkpoints, config);

  VerificationReport r;
  r.claim = "progressive_sensitivity";
  r.scale = scale;
  std::vector<double> deltas;
  std::vector<double> increments;
  double previous = 0.0;
  for (const StageOutcome& o : outcomes) {
    const int n = o.stage;
    const double gap = (task_ft.spectrum().feature(n) - task_pre.spectrum().feature(n)) / (1.0 + config.lambda);
    const double expected = gap * gap;
    const double inc = o.delta_pre - previous;
    deltas.push_back(o.delta_pre);
    increments.push_back(inc);
    r.items.push_back({"nonnegative_" + std::to_string(n), o.delta_pre >= -tol, o.delta_pre + tol, ""});
    r.items.push_back({"monotone_" + std::to_string(n), inc >= -tol, inc + tol, ""});
    const double err = std::abs(inc - expected);
    r.items.push_back({"increment_" + std::to_string(n), err <= tol, tol - err,
                       "increment=" + fmt(inc) + " expected=" + fmt(expected)});
    previous = o.delta_pre;
  }
  conclude(r);
  r.detail = "delta_pre=" + curve_text(deltas) + " increments=" + curve_text(increments) + " tol=" + fmt(tol);
  return r;
}

VerificationReport verify_progressive_sensitivity(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const FinetuneConfig& config, double tau,
                                                  const VerifyOptions& options) {
  return verify_progressive_sensitivity(task_pre, task_ft, config, stage_checkpoints(task_pre, tau), options);
}

VerificationReport verify_catastrophic_unregularized(const LinearTask& task_pre, const LinearTask& task_ft,
                                                     const FinetuneConfig& config,
                                                     const StageCheckpoints& checkpoints,
                                                     const VerifyOptions& options) {
  if (config.lambda != 0.0) throw InvalidParameterError("catastrophic-overtraining check needs lambda = 0");
  require_full(task_pre, checkpoints);
  const int d = task_pre.dim();
  const std::string scale = describe_tasks(task_pre, &task_ft) + describe_finetune(config) + describe_tau(checkpoints.tau);
  const int r_mis = misalignment_rank(task_pre, task_ft, 4.0);
  if (auto na = gate_tech("catastrophic_unregularized", scale, task_pre, task_ft, config, checkpoints.tau, options)) {
    return *na;
  }

  const std::vector<StageOutcome> outcomes = finetune_stage_sweep(task_pre, task_ft, checkpoints, config);
  const SensitivityCurve curve = curve_from(outcomes, CurveLabel::kFinalPreLoss);
  std::vector<double> values;
  for (const CurvePoint& p : curve.points) values.push_back(p.value);
  std::ostringstream os;
  os << "final_pre_loss=" << curve_text(values) << " r=" << r_mis
     << " measured inflection=" << inflection_text(inflection_point(curve));

  if (r_mis >= d) {
    VerificationReport na = not_applicable("catastrophic_unregularized", scale, "");
    os << "; not (4, r)-misaligned for any r < d; increments (informative):";
    for (int n = 2; n <= d; ++n) os << " " << fmt(values[n - 1] - values[n - 2]);
    na.detail = os.str();
    return na;
  }

  VerificationReport r;
  r.claim = "catastrophic_unregularized";
  r.scale = scale;
  for (int n = std::max(r_mis + 1, 2); n <= d; ++n) {
    const double inc = values[n - 1] - values[n - 2];
    r.items.push_back({"rise_into_" + std::to_string(n), inc > 0.0, inc, "increment=" + fmt(inc)});
  }
  if (r.items.empty()) {
    VerificationReport na = not_applicable("catastrophic_unregularized", scale, os.str() + "; no stage transition beyond r");
    return na;
  }
  conclude(r);
  r.detail = os.str();
  return r;
}

VerificationReport verify_catastrophic_unregularized(const LinearTask& task_pre, const LinearTask& task_ft,
                                                     const FinetuneConfig& config, double tau,
                                                     const VerifyOptions& options) {
  return verify_catastrophic_unregularized(task_pre, task_ft, config, stage_checkpoints(task_pre, tau), options);
}

VerificationReport verify_regularization_tradeoff(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const std::vector<double>& lambdas,
                                                  const FinetuneConfig& base_config,
                                                  const StageCheckpoints& checkpoints,
                                                  const VerifyOptions& options) {
  if (lambdas.empty()) throw InvalidParameterError("lambda sweep is empty");
  for (std::size_t j = 0; j < lambdas.size(); ++j) {
    if (!(lambdas[j] >= 0.0)) throw InvalidParameterError("lambda must be nonnegative");
    if (j > 0 && !(lambdas[j] > lambdas[j - 1])) throw InvalidParameterError("lambdas must be strictly increasing");
  }
  require_full(task_pre, checkpoints);
  const int d = task_pre.dim();
  std::string scale = describe_tasks(task_pre, &task_ft) + " lambdas=" + format_list(lambdas);
  {
    FinetuneConfig shown = base_config;
    shown.lambda = lambdas.front();
    std::ostringstream os;
    os << " eta=" << fmt(shown.eta) << " K=" << shown.steps << " batch=" << shown.batch.to_string();
    scale += os.str() + describe_tau(checkpoints.tau);
  }
  for (double lambda : lambdas) {
    FinetuneConfig c = base_config;
    c.lambda = lambda;
    const double load = learning_rate_load(c, gamma_bound(task_pre, task_ft));
    if (!(load < 1.0)) {
      throw RejectedConfigError("learning-rate bound violated at lambda=" + fmt(lambda) + ": load " + fmt(load));
    }
    if (auto na = gate_tech("regularization_tradeoff", scale, task_pre, task_ft, c, checkpoints.tau, options)) {
      return *na;
    }
  }

  const double tol = options.tol();
  std::vector<int> inflections;
  std::vector<std::vector<double>> ft_losses;
  for (double lambda : lambdas) {
    FinetuneConfig c = base_config;
    c.lambda = lambda;
    const std::vector<StageOutcome> outcomes = finetune_stage_sweep(task_pre, task_ft, checkpoints, c);
    const auto r = inflection_point(curve_from(outcomes, CurveLabel::kFinalPreLoss, lambda));
    inflections.push_back(r.value_or(d));
    std::vector<double> ft;
    for (const StageOutcome& o : outcomes) ft.push_back(o.loss_ft_unreg);
    ft_losses.push_back(std::move(ft));
  }

  VerificationReport rep;
  rep.claim = "regularization_tradeoff";
  rep.scale = scale;
  for (std::size_t j = 1; j < lambdas.size(); ++j) {
    const double step = inflections[j] - inflections[j - 1];
    rep.items.push_back({"inflection_" + fmt(lambdas[j - 1]) + "_" + fmt(lambdas[j]), step >= 0.0, step, ""});
    for (int n = 1; n <= d; ++n) {
      const double diff = ft_losses[j][n - 1] - ft_losses[j - 1][n - 1];
      rep.items.push_back({"ft_loss_" + std::to_string(n) + "_" + fmt(lambdas[j]), diff >= -tol, diff + tol, ""});
    }
  }
  conclude(rep);
  if (lambdas.size() == 1) rep.margin = 0.0;

  std::ostringstream os;
  os << "inflection per lambda=(";
  for (std::size_t j = 0; j < lambdas.size(); ++j) {
    os << (j ? "," : "") << (inflections[j] >= d ? std::string("none") : std::to_string(inflections[j]));
  }
  os << ") ft_loss_unreg per lambda=";
  for (std::size_t j = 0; j < lambdas.size(); ++j) os << (j ? "," : "") << curve_text(ft_losses[j]);
  os << " tol=" << fmt(tol)
     << "; checked direction: inflection non-decreasing in lambda (the reverse ordering would show as negative inflection steps)";
  rep.detail = os.str();
  return rep;
}

VerificationReport verify_regularization_tradeoff(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const std::vector<double>& lambdas,
                                                  const FinetuneConfig& base_config, double tau,
                                                  const VerifyOptions& options) {
  return verify_regularization_tradeoff(task_pre, task_ft, lambdas, base_config, stage_checkpoints(task_pre, tau),
                                        options);
}

VerificationReport verify_quadratic_gap(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints) {
  VerificationReport r;
  r.claim = "quadratic_gap";
  r.scale = describe_tasks(task) + " gamma=" + fmt(gamma) + describe_tau(checkpoints.tau);
  const double d = task.dim();
  const double expected = d * d * d * gamma * gamma * gamma * gamma;
  std::ostringstream os;
  os << "expected gap=" << fmt(expected) << " measured:";
  for (const PretrainCheckpoint& c : checkpoints.checkpoints) {
    const QuadraticGap g = quadratic_sensitivity_gap(c.model, task, gamma);
    const double err = std::abs(g.gap - expected);
    const double allowed = 1e-12 * std::max(expected, 1e-300);
    r.items.push_back({"stage_" + std::to_string(c.stage), err <= allowed || err == 0.0, allowed - err, ""});
    os << " " << fmt(g.gap);
  }
  conclude(r);
  r.detail = os.str();
  return r;
}

VerificationReport verify_closed_vs_mc(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints,
                                       long samples, std::uint64_t seed) {
  VerificationReport r;
  r.claim = "closed_vs_mc";
  r.scale = describe_tasks(task) + " gamma=" + fmt(gamma) + describe_tau(checkpoints.tau) +
            " samples=" + std::to_string(samples);
  std::ostringstream os;
  for (const PretrainCheckpoint& c : checkpoints.checkpoints) {
    const double closed = perturbed_loss_closed(c.model, task, gamma);
    PerturbSpec spec{gamma, samples, derive_seed(seed, {static_cast<std::uint64_t>(c.stage)})};
    const McEstimate mc = perturbed_loss_mc(c.model, task, spec);
    const double err = std::abs(closed - mc.mean);
    const double allowed = 3.0 * mc.std_error;
    r.items.push_back({"stage_" + std::to_string(c.stage), err <= allowed, allowed - err, ""});
    os << "n=" << c.stage << " closed=" << fmt(closed) << " mc=" << fmt(mc.mean) << "+-" << fmt(mc.std_error) << "; ";
  }
  conclude(r);
  r.detail = os.str();
  return r;
}

}  // namespace overtrain
