#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "overtrain/finetune.h"
#include "overtrain/pretrain.h"
#include "overtrain/sensitivity.h"
#include "overtrain/spectral.h"

namespace overtrain {

enum class Verdict { kPassed, kFailed, kNotApplicable };

std::string_view to_string(Verdict verdict);

/// One checked inequality inside a report.
struct CheckItem {
  std::string name;
  bool ok = false;
  double slack = 0.0;
  std::string detail;
};

/// Outcome of checking one claim at one configuration.
///
/// `margin` is the worst signed slack of the checked inequalities; a negative
/// margin always comes with a failed verdict. Configurations outside a claim's
/// hypotheses get kNotApplicable and never count as failures.
struct VerificationReport {
  std::string claim;
  std::string scale;
  Verdict verdict = Verdict::kNotApplicable;
  double margin = 0.0;
  std::string detail;
  std::vector<CheckItem> items;

  bool passed() const { return verdict == Verdict::kPassed; }
  bool failed() const { return verdict == Verdict::kFailed; }
  bool applicable() const { return verdict != Verdict::kNotApplicable; }
};

struct VerifyOptions {
  /// Accuracy parameter of the Assumption-tech bundle.
  double epsilon = 1e-3;
  /// Failure probability used in the batch-size floor.
  double delta_prob = 0.01;
  /// Overrides the default tolerance of 10 * epsilon.
  std::optional<double> tolerance;

  double tol() const { return tolerance.value_or(10.0 * epsilon); }
};

/// Surrogate values for the unknown constants of the initialization bound
/// exp(-C tau) and of the covariance concentration constant C1.
inline constexpr double kSurrogateC = 1.0;
inline constexpr double kSurrogateC1 = 2.0;

/// "d=2 pre=(2,1) ft=(3,2.5)" plus optional extra coordinates.
std::string describe_tasks(const LinearTask& task_pre, const LinearTask* task_ft = nullptr);

/// Items 1-5 of the regularity bundle: lambda finite and nonnegative, learning
/// rate bound, step-count floor, batch-size floor, initialization ceiling.
/// tau = +infinity stands for ideal initialization.
VerificationReport check_assumption_tech(const LinearTask& task_pre, const LinearTask& task_ft,
                                         const FinetuneConfig& config, double tau, double epsilon,
                                         double delta_prob);

/// Integrated checkpoints: exactly d of them, increasing times, residuals within
/// eps_ckpt, and diag coordinates first reaching half their target in index order.
VerificationReport verify_staged_learning(const LinearTask& task, const PretrainConfig& config);

/// L~(n) - L~(n-1) >= (2 d gamma^2 - sigma_n) sigma_n for n = 2..d, allowing the
/// initialization slack sigma_d^2 on integrated checkpoints.
VerificationReport verify_gaussian_increment(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints);
VerificationReport verify_gaussian_increment(const LinearTask& task, double gamma, double tau);

/// Requires gamma^2 > sigma_d / d; with s the smallest index where gamma^2 >
/// sigma_s / d, the perturbed loss must strictly increase into every stage n >= s.
VerificationReport verify_gaussian_ushape(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints);
VerificationReport verify_gaussian_ushape(const LinearTask& task, double gamma, double tau);

/// Delta_pre(n) >= -tol, non-decreasing, with increments within tol of
/// ((sigma_ft_n - sigma_pre_n) / (1 + lambda))^2.
VerificationReport verify_progressive_sensitivity(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const FinetuneConfig& config, const StageCheckpoints& checkpoints,
                                                  const VerifyOptions& options = {});
VerificationReport verify_progressive_sensitivity(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const FinetuneConfig& config, double tau,
                                                  const VerifyOptions& options = {});

/// lambda = 0 and (4, r)-misaligned tasks: the final pre-training loss strictly
/// increases into every stage n > r.
VerificationReport verify_catastrophic_unregularized(const LinearTask& task_pre, const LinearTask& task_ft,
                                                     const FinetuneConfig& config,
                                                     const StageCheckpoints& checkpoints,
                                                     const VerifyOptions& options = {});
VerificationReport verify_catastrophic_unregularized(const LinearTask& task_pre, const LinearTask& task_ft,
                                                     const FinetuneConfig& config, double tau,
                                                     const VerifyOptions& options = {});

/// Over increasing lambdas: the measured inflection point of the final
/// pre-training loss curve and the unregularized fine-tuning loss at every
/// stage are both non-decreasing (within tol). A curve without inflection
/// counts as inflection d.
VerificationReport verify_regularization_tradeoff(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const std::vector<double>& lambdas,
                                                  const FinetuneConfig& base_config,
                                                  const StageCheckpoints& checkpoints,
                                                  const VerifyOptions& options = {});
VerificationReport verify_regularization_tradeoff(const LinearTask& task_pre, const LinearTask& task_ft,
                                                  const std::vector<double>& lambdas,
                                                  const FinetuneConfig& base_config, double tau,
                                                  const VerifyOptions& options = {});

/// exact - quadratic equals d^3 gamma^4 to relative 1e-12 at every checkpoint.
VerificationReport verify_quadratic_gap(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints);

/// |closed - MC mean| <= 3 stderr at every checkpoint.
VerificationReport verify_closed_vs_mc(const LinearTask& task, double gamma, const StageCheckpoints& checkpoints,
                                       long samples, std::uint64_t seed);

}  // namespace overtrain
