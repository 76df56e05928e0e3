#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "overtrain/errors.h"
#include "overtrain/sensitivity.h"
#include "overtrain/verify.h"
#include "support.h"

namespace overtrain {
namespace {

constexpr double kIdeal = std::numeric_limits<double>::infinity();

SensitivityCurve curve_of(std::vector<double> values) {
  SensitivityCurve c;
  for (std::size_t i = 0; i < values.size(); ++i) c.points.push_back({static_cast<int>(i) + 1, values[i]});
  return c;
}

FinetuneConfig make_config(double eta, double lambda, int steps) {
  FinetuneConfig c;
  c.eta = eta;
  c.lambda = lambda;
  c.steps = steps;
  return c;
}

const CheckItem* find_item(const VerificationReport& r, const std::string& name) {
  for (const auto& item : r.items) {
    if (item.name == name) return &item;
  }
  return nullptr;
}

// Central second differences of L_pre along every parameter.
double finite_difference_trace(const TwoLayerModel& model, const LinearTask& task, double h) {
  double trace = 0.0;
  const Matrix w1 = model.w1();
  const Matrix w2 = model.w2();
  const double center = loss_pre(model, task);
  for (int which = 0; which < 2; ++which) {
    for (Eigen::Index i = 0; i < w1.size(); ++i) {
      Matrix plus1 = w1, minus1 = w1, plus2 = w2, minus2 = w2;
      if (which == 0) {
        plus1(i) += h;
        minus1(i) -= h;
      } else {
        plus2(i) += h;
        minus2(i) -= h;
      }
      const double up = loss_pre(TwoLayerModel(plus1, plus2), task);
      const double down = loss_pre(TwoLayerModel(minus1, minus2), task);
      trace += (up - 2.0 * center + down) / (h * h);
    }
  }
  return trace;
}

TEST(InflectionPoint, Examples) {
  EXPECT_EQ(inflection_point(curve_of({5, 4, 4.5, 6})), 2);
  EXPECT_EQ(inflection_point(curve_of({4, 3, 2, 1})), std::nullopt);
  EXPECT_EQ(inflection_point(curve_of({3, 3, 4})), 2);
  EXPECT_THROW(inflection_point(curve_of({1})), InsufficientDataError);
}

TEST(DeltaPre, ZeroStepsAndMismatch) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const StageCheckpoints cps = ideal_stage_checkpoints(pre);
  const FinetuneTrace trace = finetune(cps.stage(1).model, ft, make_config(0.02, 0.0, 0), 3.0);
  EXPECT_EQ(delta_pre(cps.stage(1), trace, pre), 0.0);
  EXPECT_THROW(delta_pre(cps.stage(2), trace, pre), InconsistentInputsError);
}

TEST(DeltaPre, IdenticalTasksDoNotDegrade) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {2, 1}, 2, 1);
  const StageCheckpoints cps = ideal_stage_checkpoints(pre);
  for (double lambda : {0.0, 1.0}) {
    for (int n = 1; n <= 2; ++n) {
      const FinetuneTrace trace = finetune(cps.stage(n).model, ft, make_config(0.02, lambda, 500), 2.0);
      EXPECT_NEAR(delta_pre(cps.stage(n), trace, pre), 0.0, 4e-3);
    }
  }
}

TEST(DeltaPre, FullStageMatchesGapSquares) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const StageCheckpoints cps = ideal_stage_checkpoints(pre);
  const FinetuneConfig config = make_config(0.02, 0.0, 1000);
  const FinetuneTrace trace = finetune(cps.stage(2).model, ft, config, 3.0);
  const double delta = delta_pre(cps.stage(2), trace, pre);
  EXPECT_NEAR(delta, 3.25, 1e-2);

  const SpectralCoordinates diag = diagonal_finetune_exact(pre, ft, 2, config);
  const double oracle = std::pow(diag.diag[0] - 2.0, 2) + std::pow(diag.diag[1] - 1.0, 2);
  EXPECT_NEAR(delta, oracle, 1e-9);
}

TEST(GaussianSweep, ClosedFormValues) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1, 0.2}), {1, 1, 1}, 3, 1);
  const StageCheckpoints cps = ideal_stage_checkpoints(pre);
  const auto curves = gaussian_sensitivity_sweep(pre, cps.checkpoints, {0.0, 0.3}, false, {});
  ASSERT_EQ(curves.size(), 4u);
  for (const auto& p : curves[1].points) EXPECT_EQ(p.value, 0.0);
  EXPECT_EQ(curves[1].label, CurveLabel::kDeltaPre);

  const double quartic = 27.0 * std::pow(0.3, 4);
  const std::vector<double> expected = {2.12, 1.66, 1.728};
  for (int n = 0; n < 3; ++n) EXPECT_NEAR(curves[2].points[n].value - quartic, expected[n], 1e-12);
  EXPECT_EQ(inflection_point(curves[2]), 2);
  EXPECT_EQ(curves[2].parameter, 0.3);
}

TEST(GaussianSweep, MonteCarloTracksClosedForm) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {1, 1}, 2, 1);
  const StageCheckpoints cps = ideal_stage_checkpoints(pre);
  PerturbSpec spec{0.0, 200000, 17};
  const auto mc = gaussian_sensitivity_sweep(pre, cps.checkpoints, {1.0}, true, spec);
  EXPECT_NEAR(mc[0].points[0].value, 17.0, 0.2);
  EXPECT_NEAR(mc[0].points[1].value, 20.0, 0.2);
  const auto again = gaussian_sensitivity_sweep(pre, cps.checkpoints, {1.0}, true, spec);
  EXPECT_EQ(mc[0].points[1].value, again[0].points[1].value);
  EXPECT_THROW(gaussian_sensitivity_sweep(pre, {cps.stage(1)}, {1.0}, false, spec), InsufficientDataError);
}

TEST(HessianTrace, MatchesFiniteDifferences) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {1, 1}, 2, 1);
  const TwoLayerModel eye(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  EXPECT_DOUBLE_EQ(hessian_trace(eye, pre), 16.0);
  EXPECT_NEAR(finite_difference_trace(eye, pre, 1e-4), 16.0, 16.0 * 1e-4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TwoLayerModel m = testing::random_model(2, seed);
    const double closed = hessian_trace(m, pre);
    EXPECT_NEAR(finite_difference_trace(m, pre, 1e-4), closed, 1e-4 * closed);
  }
  const TwoLayerModel zero(Matrix::Zero(2, 2), Matrix::Zero(2, 2));
  EXPECT_EQ(hessian_trace(zero, pre), 0.0);
  const TwoLayerModel m = testing::random_model(2, 3);
  const TwoLayerModel scaled(3.0 * m.w1(), 3.0 * m.w2());
  EXPECT_NEAR(hessian_trace(scaled, pre), 9.0 * hessian_trace(m, pre), 1e-10);
}

TEST(QuadraticGap, Examples) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {1, 1}, 2, 1);
  const TwoLayerModel m = testing::random_model(2, 4);
  const QuadraticGap zero = quadratic_sensitivity_gap(m, pre, 0.0);
  EXPECT_EQ(zero.quadratic, 0.0);
  EXPECT_EQ(zero.exact, 0.0);
  EXPECT_EQ(zero.gap, 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_NEAR(quadratic_sensitivity_gap(testing::random_model(2, seed), pre, 1.0).gap, 8.0, 8e-12);
  }
  const auto [pre3, ft3] = make_task_pair(Spectrum::Decreasing({2, 1, 0.5}), {1, 1, 1}, 3, 1);
  const QuadraticGap small = quadratic_sensitivity_gap(testing::random_model(3, 1), pre3, 0.1);
  EXPECT_NEAR(small.gap, 0.0027, 0.0027 * 1e-12);
  EXPECT_LT(small.gap, 0.1 * small.quadratic);
}

TEST(InvarianceUnderSharedRotation, AnalysisScalars) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1, 0.5}), {3, 0.5, 2}, 3, 4);
  const OrthogonalPair rot = random_orthogonal_pair(3, 99);
  auto rotated = std::make_shared<OrthogonalPair>();
  rotated->u = rot.u * pre.factors().u;
  rotated->v = rot.v * pre.factors().v;
  const LinearTask pre_r(rotated, pre.spectrum());
  const LinearTask ft_r(rotated, ft.spectrum());
  const FinetuneConfig config = make_config(0.02, 0.5, 200);
  for (int n = 1; n <= 3; ++n) {
    const TwoLayerModel a = ideal_checkpoint(pre, n);
    const TwoLayerModel b = ideal_checkpoint(pre_r, n);
    EXPECT_NEAR(perturbed_loss_closed(a, pre, 0.4), perturbed_loss_closed(b, pre_r, 0.4), 1e-8);
    EXPECT_NEAR(hessian_trace(a, pre), hessian_trace(b, pre_r), 1e-8);
    const FinetuneTrace ta = finetune(a, ft, config, 3.0);
    const FinetuneTrace tb = finetune(b, ft_r, config, 3.0);
    EXPECT_NEAR(loss_pre(ta.final_model(), pre), loss_pre(tb.final_model(), pre_r), 1e-8);
    EXPECT_NEAR(ta.per_step_losses.back().loss_ft_unreg, tb.per_step_losses.back().loss_ft_unreg, 1e-8);
  }
}

TEST(AssumptionTech, PassesWithMarginAsSmallestSlack) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const VerificationReport r = check_assumption_tech(pre, ft, make_config(0.02, 0.0, 1000), kIdeal, 1e-3, 0.01);
  EXPECT_TRUE(r.passed());
  ASSERT_EQ(r.items.size(), 5u);
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& item : r.items) smallest = std::min(smallest, item.slack);
  EXPECT_EQ(r.margin, smallest);
  EXPECT_NE(r.detail.find("binding="), std::string::npos);
}

TEST(AssumptionTech, LearningRateItemFails) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const VerificationReport r = check_assumption_tech(pre, ft, make_config(1.0, 0.0, 1000), kIdeal, 1e-3, 0.01);
  EXPECT_TRUE(r.failed());
  const CheckItem* item = find_item(r, "learning_rate");
  ASSERT_NE(item, nullptr);
  EXPECT_FALSE(item->ok);
  EXPECT_NEAR(item->slack, 1.0 - 24.0, 1e-12);
  EXPECT_LT(r.margin, 0.0);
}

TEST(AssumptionTech, StepCountFloor) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const double floor_k = std::log(100.0 * 3.0 / 1e-3) / (0.02 * 1.0);
  const VerificationReport below = check_assumption_tech(pre, ft, make_config(0.02, 0.0, 600), kIdeal, 1e-3, 0.01);
  const CheckItem* item = find_item(below, "step_count");
  ASSERT_NE(item, nullptr);
  EXPECT_FALSE(item->ok);
  EXPECT_NEAR(item->slack, 600.0 / floor_k - 1.0, 1e-12);
  EXPECT_NE(item->detail.find("floor="), std::string::npos);
  const VerificationReport above = check_assumption_tech(pre, ft, make_config(0.02, 0.0, 631), kIdeal, 1e-3, 0.01);
  EXPECT_TRUE(find_item(above, "step_count")->ok);
}

TEST(AssumptionTech, FiniteBatchAndInitialization) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  FinetuneConfig config = make_config(0.02, 0.0, 1000);
  config.batch = BatchSize::of(256);
  const VerificationReport r = check_assumption_tech(pre, ft, config, kIdeal, 1e-3, 0.01);
  EXPECT_FALSE(find_item(r, "batch_size")->ok);
  EXPECT_TRUE(find_item(r, "init_scale")->ok);

  const VerificationReport finite_tau = check_assumption_tech(pre, ft, make_config(0.02, 0.0, 1000), 10.0, 1e-3, 0.01);
  EXPECT_FALSE(find_item(finite_tau, "init_scale")->ok);
  const VerificationReport huge_tau = check_assumption_tech(pre, ft, make_config(0.02, 0.0, 1000), 1e4, 1e-3, 0.01);
  EXPECT_TRUE(find_item(huge_tau, "init_scale")->ok);
}

TEST(StagedLearning, PassesAndReportsIncomplete) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {1, 1}, 2, 1);
  PretrainConfig config = default_pretrain_config(pre.spectrum(), 10.0);
  const VerificationReport ok = verify_staged_learning(pre, config);
  EXPECT_TRUE(ok.passed()) << ok.detail;
  EXPECT_GE(ok.margin, 0.0);
  config.horizon = 1.0;
  const VerificationReport bad = verify_staged_learning(pre, config);
  EXPECT_TRUE(bad.failed());
  EXPECT_EQ(bad.margin, -std::numeric_limits<double>::infinity());
}

TEST(GaussianIncrement, IdealEquality) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {1, 1}, 2, 1);
  const VerificationReport r = verify_gaussian_increment(pre, 1.0, kIdeal);
  ASSERT_TRUE(r.passed()) << r.detail;
  const CheckItem* item = find_item(r, "increment_2");
  ASSERT_NE(item, nullptr);
  EXPECT_NE(item->detail.find("increment=3 "), std::string::npos) << item->detail;
  EXPECT_NE(item->detail.find("bound=3"), std::string::npos);
  EXPECT_GE(r.margin, 0.0);
  EXPECT_LE(r.margin, 1e-8);

  const VerificationReport zero = verify_gaussian_increment(pre, 0.0, kIdeal);
  EXPECT_TRUE(zero.passed());
  EXPECT_LE(zero.margin, 1e-8);
}

TEST(GaussianIncrement, NotApplicableWithoutSmallInit) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {1, 1}, 2, 1);
  StageCheckpoints cps = ideal_stage_checkpoints(pre);
  cps.tau = 1.0;
  EXPECT_FALSE(verify_gaussian_increment(pre, 1.0, cps).applicable());
}

TEST(GaussianUshape, Examples) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1, 0.2}), {1, 1, 1}, 3, 1);
  const VerificationReport r = verify_gaussian_ushape(pre, 0.3, kIdeal);
  ASSERT_TRUE(r.passed()) << r.detail;
  EXPECT_NE(r.detail.find("s=3"), std::string::npos);
  EXPECT_NE(r.detail.find("measured inflection=2"), std::string::npos);
  EXPECT_NE(find_item(r, "rise_into_3"), nullptr);

  const VerificationReport large = verify_gaussian_ushape(pre, 1.0, kIdeal);
  ASSERT_TRUE(large.passed());
  EXPECT_NE(large.detail.find("measured inflection=1"), std::string::npos);

  const VerificationReport small = verify_gaussian_ushape(pre, 0.2, kIdeal);
  EXPECT_FALSE(small.applicable());
}

TEST(ProgressiveSensitivity, Examples) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const FinetuneConfig c0 = make_config(0.02, 0.0, 1000);
  const VerificationReport r0 = verify_progressive_sensitivity(pre, ft, c0, kIdeal);
  EXPECT_TRUE(r0.passed()) << r0.detail;
  EXPECT_NE(find_item(r0, "increment_2")->detail.find("expected=2.25"), std::string::npos);

  const VerificationReport r1 = verify_progressive_sensitivity(pre, ft, make_config(0.02, 1.0, 1000), kIdeal);
  EXPECT_TRUE(r1.passed()) << r1.detail;
  EXPECT_NE(find_item(r1, "increment_1")->detail.find("expected=0.25"), std::string::npos);
  EXPECT_NE(find_item(r1, "increment_2")->detail.find("expected=0.5625"), std::string::npos);

  const auto [same_pre, same_ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {2, 1}, 2, 1);
  const VerificationReport same = verify_progressive_sensitivity(same_pre, same_ft, make_config(0.02, 0.0, 1000), kIdeal);
  EXPECT_TRUE(same.passed()) << same.detail;
}

TEST(ProgressiveSensitivity, ZeroToleranceFails) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  VerifyOptions strict;
  strict.tolerance = 0.0;
  const VerificationReport r = verify_progressive_sensitivity(pre, ft, make_config(0.02, 0.0, 1000), kIdeal, strict);
  EXPECT_TRUE(r.failed());
  EXPECT_LT(r.margin, 0.0);
}

TEST(ProgressiveSensitivity, NotApplicableOutsideRegularity) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const VerificationReport r = verify_progressive_sensitivity(pre, ft, make_config(0.02, 0.0, 100), kIdeal);
  EXPECT_FALSE(r.applicable());
}

TEST(CatastrophicUnregularized, Examples) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 0.5}), {2.2, 2.5}, 2, 1);
  const FinetuneConfig config = make_config(0.04, 0.0, 2000);
  const VerificationReport r = verify_catastrophic_unregularized(pre, ft, config, kIdeal);
  ASSERT_TRUE(r.passed()) << r.detail;
  EXPECT_NEAR(r.margin, 3.75, 1e-2);

  const auto [same_pre, same_ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {2, 1}, 2, 1);
  const VerificationReport same =
      verify_catastrophic_unregularized(same_pre, same_ft, make_config(0.02, 0.0, 1000), kIdeal);
  EXPECT_FALSE(same.applicable());

  const auto [pre2, ft2] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const VerificationReport informative =
      verify_catastrophic_unregularized(pre2, ft2, make_config(0.02, 0.0, 1000), kIdeal);
  EXPECT_FALSE(informative.applicable());
  const std::string marker = "increments (informative): ";
  const std::size_t at = informative.detail.find(marker);
  ASSERT_NE(at, std::string::npos) << informative.detail;
  EXPECT_NEAR(std::stod(informative.detail.substr(at + marker.size())), 1.25, 1e-9);

  EXPECT_THROW(verify_catastrophic_unregularized(pre, ft, make_config(0.04, 0.5, 2000), kIdeal), InvalidParameterError);
}

TEST(RegularizationTradeoff, Examples) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {3, 2.5}, 2, 1);
  const FinetuneConfig base = make_config(0.02, 0.0, 1000);
  const VerificationReport r = verify_regularization_tradeoff(pre, ft, {0.0, 1.0}, base, kIdeal);
  ASSERT_TRUE(r.passed()) << r.detail;
  const CheckItem* item = find_item(r, "ft_loss_2_1");
  ASSERT_NE(item, nullptr);
  EXPECT_NEAR(item->slack - 1e-2, 0.8125, 1e-2);

  const auto [same_pre, same_ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {2, 1}, 2, 1);
  const VerificationReport flat = verify_regularization_tradeoff(same_pre, same_ft, {0.0, 1.0}, base, kIdeal);
  EXPECT_TRUE(flat.passed()) << flat.detail;

  EXPECT_THROW(verify_regularization_tradeoff(pre, ft, {1.0, 0.5}, base, kIdeal), InvalidParameterError);
  EXPECT_THROW(verify_regularization_tradeoff(pre, ft, {0.0, 5.0}, base, kIdeal), RejectedConfigError);
}

TEST(QuadraticGapReport, PassesOnCheckpoints) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1, 0.2}), {1, 1, 1}, 3, 1);
  const VerificationReport r = verify_quadratic_gap(pre, 0.3, ideal_stage_checkpoints(pre));
  EXPECT_TRUE(r.passed()) << r.detail;
}

TEST(ClosedVsMc, PassesAndIsDeterministic) {
  const auto [pre, ft] = make_task_pair(Spectrum::Decreasing({2, 1}), {1, 1}, 2, 1);
  const StageCheckpoints cps = ideal_stage_checkpoints(pre);
  const VerificationReport a = verify_closed_vs_mc(pre, 0.5, cps, 100000, 3);
  const VerificationReport b = verify_closed_vs_mc(pre, 0.5, cps, 100000, 3);
  EXPECT_TRUE(a.passed()) << a.detail;
  EXPECT_EQ(a.margin, b.margin);
  EXPECT_EQ(a.detail, b.detail);
}

TEST(Verdict, Strings) {
  EXPECT_EQ(to_string(Verdict::kPassed), "true");
  EXPECT_EQ(to_string(Verdict::kFailed), "false");
  EXPECT_EQ(to_string(Verdict::kNotApplicable), "n/a");
}

}  // namespace
}  // namespace overtrain
