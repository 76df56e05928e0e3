#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "overtrain/format.h"
#include "overtrain/harness/config.h"
#include "overtrain/harness/experiment.h"

namespace overtrain::harness {
namespace {

using nlohmann::json;

json minimal_doc() {
  return json::parse(R"({
    "name": "minimal",
    "seed": 1,
    "task": {"d": 2, "spectrum_pre": [2.0, 1.0], "spectrum_ft": [3.0, 2.5], "seed": 1},
    "pretrain": {"tau": ["inf"]},
    "perturb": {"gamma": [1.0]},
    "finetune": {"eta": [0.02], "lambda": [0], "K": 1000, "batch": ["infinite"], "seeds": [0]}
  })");
}

std::vector<std::string> diagnostics_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.diagnostics();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& lines, const std::string& needle) {
  return std::any_of(lines.begin(), lines.end(), [&](const std::string& l) { return l.find(needle) != std::string::npos; });
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_EQ(format_double(0.0), "0");
  EXPECT_EQ(format_double(1e-300), "1e-300");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(x)), x);
  const std::vector<double> v = {1.0, 2.5};
  EXPECT_EQ(format_list(v), "(1,2.5)");
}

TEST(Config, ParsesMinimal) {
  const ExperimentConfig c = parse_config(minimal_doc());
  EXPECT_EQ(c.name, "minimal");
  EXPECT_EQ(c.task.d, 2);
  ASSERT_EQ(c.pretrain.tau.size(), 1u);
  EXPECT_TRUE(std::isinf(c.pretrain.tau[0]));
  ASSERT_EQ(c.finetune.batch.size(), 1u);
  EXPECT_TRUE(c.finetune.batch[0].is_infinite());
  EXPECT_EQ(c.task_seed(), 1u);
  const auto [pre, ft] = c.tasks();
  EXPECT_TRUE(shares_factors(pre, ft));
}

TEST(Config, RejectsUnknownKeys) {
  json doc = minimal_doc();
  doc["pretrain"]["taus"] = json::array({1.0});
  doc["extra"] = 1;
  const auto diags = diagnostics_of(doc);
  EXPECT_TRUE(any_contains(diags, "taus"));
  EXPECT_TRUE(any_contains(diags, "extra"));
}

TEST(Config, RejectsLearningRateBeforeRunning) {
  json doc = minimal_doc();
  doc["finetune"]["eta"] = json::array({0.02, 0.2});
  const auto diags = diagnostics_of(doc);
  ASSERT_FALSE(diags.empty());
  EXPECT_TRUE(any_contains(diags, "0.2"));
}

TEST(Config, CollectsSeveralDiagnostics) {
  json doc = minimal_doc();
  doc["task"]["spectrum_pre"] = json::array({1.0, 2.0});
  doc["perturb"]["gamma"] = json::array();
  doc["finetune"]["K"] = -3;
  EXPECT_GE(diagnostics_of(doc).size(), 3u);
}

TEST(Config, RejectsSpectrumLengthMismatch) {
  json doc = minimal_doc();
  doc["task"]["spectrum_ft"] = json::array({3.0});
  EXPECT_FALSE(diagnostics_of(doc).empty());
}

TEST(Config, ToJsonRoundTrip) {
  json doc = minimal_doc();
  doc["finetune"]["batch"] = json::array({"infinite", 64});
  doc["pretrain"]["tau"] = json::array({10, "inf"});
  const ExperimentConfig c = parse_config(doc);
  const auto echo = to_json(c);
  const ExperimentConfig back = parse_config(json::parse(echo.dump()));
  EXPECT_EQ(to_json(back).dump(), echo.dump());
}

TEST(Config, MissingTaskSeedIsDerived) {
  json doc = minimal_doc();
  doc["task"].erase("seed");
  const ExperimentConfig a = parse_config(doc);
  doc["seed"] = 2;
  const ExperimentConfig b = parse_config(doc);
  EXPECT_NE(a.task_seed(), b.task_seed());
  doc["seed"] = 1;
  EXPECT_EQ(a.task_seed(), parse_config(doc).task_seed());
}

TEST(Experiment, MinimalGridCardinality) {
  const ExperimentConfig c = parse_config(minimal_doc());
  const RunOutput out = run_experiment(c, {});
  EXPECT_TRUE(out.failures.empty());
  const auto gaussian = std::count_if(out.rows.begin(), out.rows.end(), [](const MeasurementRow& r) { return r.phase == "gaussian"; });
  const auto finetune = std::count_if(out.rows.begin(), out.rows.end(), [](const MeasurementRow& r) { return r.phase == "finetune"; });
  EXPECT_EQ(gaussian, 2);
  EXPECT_EQ(finetune, 2);
  EXPECT_EQ(out.rows.size(), 4u);
  for (const auto& r : out.rows) {
    for (double v : {r.loss_pre_before, r.loss_pre_after, r.delta_pre, r.offdiag_norm}) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_TRUE(out.ok());
}

TEST(Experiment, RowsCsvSchema) {
  const ExperimentConfig c = parse_config(minimal_doc());
  const RunOutput out = run_phases(c, kPhaseGaussian, {});
  const std::string csv = rows_csv(out.rows);
  const std::string header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header,
            "experiment,phase,d,stage,t_n,tau,gamma,eta,lambda,batch,K,seed,loss_pre_before,loss_pre_after,"
            "loss_ft_unreg,delta_pre,offdiag_norm,residual");
  EXPECT_EQ(count_lines(csv), 3u);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_EQ(csv.back(), '\n');
}

TEST(Experiment, OutputIndependentOfWorkerCount) {
  json doc = minimal_doc();
  doc["pretrain"]["tau"] = json::array({10, "inf"});
  doc["finetune"]["lambda"] = json::array({0, 1});
  doc["finetune"]["batch"] = json::array({"infinite", 32});
  doc["finetune"]["seeds"] = json::array({0, 1});
  const ExperimentConfig c = parse_config(doc);
  const RunOutput one = run_experiment(c, {1, false});
  const RunOutput four = run_experiment(c, {4, false});
  EXPECT_EQ(rows_csv(one.rows), rows_csv(four.rows));
  EXPECT_EQ(reports_csv(one.reports), reports_csv(four.reports));
  EXPECT_EQ(checkpoints_csv(one.checkpoints), checkpoints_csv(four.checkpoints));
}

TEST(Experiment, SeedsDependOnCoordinatesOnly) {
  json doc = minimal_doc();
  doc["finetune"]["batch"] = json::array({32});
  doc["finetune"]["lambda"] = json::array({0});
  const RunOutput small = run_phases(parse_config(doc), kPhaseFinetune, {});
  doc["finetune"]["lambda"] = json::array({0, 1});
  const RunOutput large = run_phases(parse_config(doc), kPhaseFinetune, {});
  for (const auto& row : small.rows) {
    const auto match = std::find_if(large.rows.begin(), large.rows.end(), [&](const MeasurementRow& r) {
      return r.lambda == row.lambda && r.stage == row.stage;
    });
    ASSERT_NE(match, large.rows.end());
    EXPECT_EQ(match->seed, row.seed);
    EXPECT_EQ(match->loss_pre_after, row.loss_pre_after);
  }
}

TEST(Experiment, VerificationSuiteOnMinimal) {
  const ExperimentConfig c = parse_config(minimal_doc());
  const auto reports = run_verification_suite(c, {});
  ASSERT_FALSE(reports.empty());
  for (const auto& r : reports) EXPECT_FALSE(r.failed()) << r.claim << " " << r.detail;
  const std::string csv = reports_csv(reports);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "claim,scale,passed,margin,detail");
  EXPECT_EQ(count_lines(csv), reports.size() + 1);
}

TEST(Experiment, ZeroToleranceFailsProgressiveSensitivity) {
  json doc = minimal_doc();
  doc["verify"] = {{"tolerance", 0}};
  const auto reports = run_verification_suite(parse_config(doc), {});
  bool seen = false;
  for (const auto& r : reports) {
    if (r.claim != "progressive_sensitivity") continue;
    seen = true;
    EXPECT_TRUE(r.failed());
    EXPECT_LT(r.margin, 0.0);
  }
  EXPECT_TRUE(seen);
}

TEST(Experiment, UshapeOutsideHypothesisIsNotApplicable) {
  json doc = minimal_doc();
  doc["perturb"]["gamma"] = json::array({0.5});
  const auto reports = run_verification_suite(parse_config(doc), {});
  bool seen = false;
  for (const auto& r : reports) {
    if (r.claim != "gaussian_ushape") continue;
    seen = true;
    EXPECT_FALSE(r.applicable());
  }
  EXPECT_TRUE(seen);
  RunOutput out;
  out.reports = reports;
  EXPECT_TRUE(out.ok());
}

TEST(Experiment, GridFailuresAreRecorded) {
  json doc = minimal_doc();
  doc["pretrain"]["tau"] = json::array({10});
  doc["pretrain"]["horizon"] = 0.5;
  const RunOutput out = run_experiment(parse_config(doc), {});
  EXPECT_FALSE(out.failures.empty());
  EXPECT_FALSE(out.ok());
  const std::string csv = failures_csv(out.failures);
  EXPECT_NE(csv.find("pretrain"), std::string::npos);
}

TEST(Experiment, ManifestReproducesRows) {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "overtrain_manifest_test";
  std::filesystem::remove_all(dir);
  json doc = minimal_doc();
  doc["finetune"]["batch"] = json::array({"infinite", 16});
  const ExperimentConfig c = parse_config(doc);
  const RunOutput out = run_experiment(c, {});
  write_outputs(dir, c, "run", kPhaseAll, {}, out);
  for (const char* f : {"rows.csv", "reports.csv", "manifest.json", "failures.csv", "checkpoints.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const ExperimentConfig again = load_config(dir / "manifest.json");
  EXPECT_EQ(rows_csv(run_experiment(again, {}).rows), rows_csv(out.rows));

  std::ifstream in(dir / "manifest.json");
  const json manifest = json::parse(in);
  EXPECT_EQ(manifest["tool"], kToolName);
  EXPECT_EQ(manifest["version"], kToolVersion);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace overtrain::harness
