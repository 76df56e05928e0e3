#include "overtrain/harness/experiment.h"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <thread>
#include <tuple>

#include "overtrain/format.h"
#include "overtrain/perturb.h"
#include "overtrain/seeding.h"
#include "overtrain/sensitivity.h"

namespace overtrain::harness {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kFinetuneTag = 0x66696e65ULL;
constexpr std::uint64_t kMonteCarloTag = 0x6d6f6e74ULL;

std::uint64_t bits(double x) { return std::bit_cast<std::uint64_t>(x); }

std::uint64_t batch_code(const BatchSize& b) {
  return b.is_infinite() ? std::numeric_limits<std::uint64_t>::max() : static_cast<std::uint64_t>(b.size());
}

double batch_value(const BatchSize& b) { return b.is_infinite() ? kInf : static_cast<double>(b.size()); }

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

struct Pretrained {
  double tau = 0.0;
  std::shared_ptr<const StageCheckpoints> checkpoints;
  std::vector<std::optional<double>> half_times;
  std::string error;
};

std::vector<Pretrained> pretrain_all(const ExperimentConfig& config, const LinearTask& task,
                                     const std::vector<double>& taus, int jobs) {
  std::vector<Pretrained> out(taus.size());
  parallel_for(taus.size(), jobs, [&](std::size_t i) {
    Pretrained& p = out[i];
    p.tau = taus[i];
    try {
      if (std::isinf(p.tau)) {
        p.checkpoints = std::make_shared<const StageCheckpoints>(ideal_stage_checkpoints(task));
      } else {
        PretrainTrace trace = pretrain_flow(task, config.pretrain_config(p.tau));
        p.half_times = trace.half_times;
        p.checkpoints = std::make_shared<const StageCheckpoints>(StageCheckpoints{p.tau, std::move(trace.checkpoints)});
      }
    } catch (const std::exception& e) {
      p.error = e.what();
    }
  });
  return out;
}

std::string fmt(double x) { return format_double(x); }

std::string finetune_coordinates(double tau, double eta, double lambda, const BatchSize& batch, std::uint64_t rep) {
  return "tau=" + fmt(tau) + " eta=" + fmt(eta) + " lambda=" + fmt(lambda) + " batch=" + batch.to_string() +
         " replicate=" + std::to_string(rep);
}

struct FinetunePoint {
  const Pretrained* pre = nullptr;
  double eta = 0.0;
  double lambda = 0.0;
  BatchSize batch = BatchSize::infinite();
  std::uint64_t replicate = 0;
};

void run_finetune_grid(const ExperimentConfig& config, const LinearTask& task_pre, const LinearTask& task_ft,
                       const std::vector<const Pretrained*>& pretrained, int jobs, RunOutput& out) {
  std::vector<FinetunePoint> points;
  for (const Pretrained* p : pretrained) {
    for (double eta : config.finetune.eta) {
      for (double lambda : config.finetune.lambda) {
        for (const BatchSize& batch : config.finetune.batch) {
          for (std::uint64_t rep : config.finetune.seeds) points.push_back({p, eta, lambda, batch, rep});
        }
      }
    }
  }
  std::vector<std::vector<MeasurementRow>> rows(points.size());
  std::vector<std::optional<FailureRow>> failures(points.size());
  parallel_for(points.size(), jobs, [&](std::size_t i) {
    const FinetunePoint& pt = points[i];
    FinetuneConfig fc;
    fc.eta = pt.eta;
    fc.lambda = pt.lambda;
    fc.steps = config.finetune.K;
    fc.batch = pt.batch;
    fc.seed = derive_seed(config.seed, {kFinetuneTag, bits(pt.pre->tau), bits(pt.eta), bits(pt.lambda),
                                        batch_code(pt.batch), pt.replicate});
    try {
      for (const StageOutcome& o : finetune_stage_sweep(task_pre, task_ft, *pt.pre->checkpoints, fc)) {
        MeasurementRow r;
        r.experiment = config.name;
        r.phase = "finetune";
        r.d = task_pre.dim();
        r.stage = o.stage;
        r.t_n = o.time;
        r.tau = pt.pre->tau;
        r.eta = pt.eta;
        r.lambda = pt.lambda;
        r.batch = batch_value(pt.batch);
        r.K = fc.steps;
        r.seed = fc.seed;
        r.loss_pre_before = o.loss_pre_before;
        r.loss_pre_after = o.loss_pre_after;
        r.loss_ft_unreg = o.loss_ft_unreg;
        r.delta_pre = o.delta_pre;
        r.offdiag_norm = o.offdiag_norm;
        r.residual = o.residual;
        rows[i].push_back(r);
      }
    } catch (const std::exception& e) {
      rows[i].clear();
      failures[i] = FailureRow{"finetune", finetune_coordinates(pt.pre->tau, pt.eta, pt.lambda, pt.batch, pt.replicate),
                               e.what()};
    }
  });
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.rows.insert(out.rows.end(), rows[i].begin(), rows[i].end());
    if (failures[i]) out.failures.push_back(*failures[i]);
  }
}

void run_gaussian_grid(const ExperimentConfig& config, const LinearTask& task_pre,
                       const std::vector<const Pretrained*>& pretrained, RunOutput& out) {
  for (const Pretrained* p : pretrained) {
    for (double gamma : config.perturb.gamma) {
      for (const PretrainCheckpoint& c : p->checkpoints->checkpoints) {
        const PerturbationTerms terms = perturbation_terms(c.model, task_pre, gamma);
        MeasurementRow r;
        r.experiment = config.name;
        r.phase = "gaussian";
        r.d = task_pre.dim();
        r.stage = c.stage;
        r.t_n = c.time;
        r.tau = p->tau;
        r.gamma = gamma;
        r.loss_pre_before = terms.base;
        r.loss_pre_after = terms.total();
        r.delta_pre = terms.degradation();
        r.offdiag_norm = spectral_coordinates(c.model, task_pre).offdiag_norm;
        r.residual = c.residual;
        out.rows.push_back(r);
      }
    }
  }
}

struct Claim {
  std::string name;
  std::function<VerificationReport()> run;
};

std::vector<Claim> suite_claims(const ExperimentConfig& config, const LinearTask& task_pre, const LinearTask& task_ft,
                                const std::vector<Pretrained>& pretrained, bool mc) {
  const VerifyOptions options = config.verify_options();
  std::vector<double> lambdas = config.finetune.lambda;
  std::sort(lambdas.begin(), lambdas.end());

  std::vector<Claim> claims;
  for (const Pretrained& p : pretrained) {
    const double tau = p.tau;
    if (!std::isinf(tau)) {
      claims.push_back({"staged_learning", [&config, &task_pre, tau] {
        return verify_staged_learning(task_pre, config.pretrain_config(tau));
      }});
    }
    if (!p.checkpoints) {
      const std::string error = p.error;
      claims.push_back({"pretrain_checkpoints", [error, tau] {
        VerificationReport r;
        r.claim = "pretrain_checkpoints";
        r.scale = "tau=" + fmt(tau);
        r.verdict = Verdict::kFailed;
        r.margin = -kInf;
        r.detail = "error: " + error;
        return r;
      }});
      continue;
    }
    const auto ck = p.checkpoints;
    for (double gamma : config.perturb.gamma) {
      claims.push_back({"gaussian_increment", [&task_pre, ck, gamma] { return verify_gaussian_increment(task_pre, gamma, *ck); }});
      claims.push_back({"gaussian_ushape", [&task_pre, ck, gamma] { return verify_gaussian_ushape(task_pre, gamma, *ck); }});
      claims.push_back({"quadratic_gap", [&task_pre, ck, gamma] { return verify_quadratic_gap(task_pre, gamma, *ck); }});
      if (mc) {
        const long samples = config.perturb.mc_samples;
        const std::uint64_t seed = derive_seed(config.seed, {kMonteCarloTag, bits(tau), bits(gamma)});
        claims.push_back({"closed_vs_mc", [&task_pre, ck, gamma, samples, seed] {
          return verify_closed_vs_mc(task_pre, gamma, *ck, samples, seed);
        }});
      }
    }
    for (double eta : config.finetune.eta) {
      for (const BatchSize& batch : config.finetune.batch) {
        for (std::uint64_t rep : config.finetune.seeds) {
          FinetuneConfig base;
          base.eta = eta;
          base.steps = config.finetune.K;
          base.batch = batch;
          const std::string suffix = batch.is_infinite() ? "" : " replicate=" + std::to_string(rep);
          auto tagged = [suffix](VerificationReport r) {
            r.scale += suffix;
            return r;
          };
          for (double lambda : lambdas) {
            FinetuneConfig fc = base;
            fc.lambda = lambda;
            fc.seed = derive_seed(config.seed, {kFinetuneTag, bits(tau), bits(eta), bits(lambda), batch_code(batch), rep});
            claims.push_back({"progressive_sensitivity", [&task_pre, &task_ft, ck, fc, options, tagged] {
              return tagged(verify_progressive_sensitivity(task_pre, task_ft, fc, *ck, options));
            }});
            if (lambda == 0.0) {
              claims.push_back({"catastrophic_unregularized", [&task_pre, &task_ft, ck, fc, options, tagged] {
                return tagged(verify_catastrophic_unregularized(task_pre, task_ft, fc, *ck, options));
              }});
            }
          }
          FinetuneConfig fc = base;
          fc.seed = derive_seed(config.seed, {kFinetuneTag, bits(tau), bits(eta), batch_code(batch), rep});
          claims.push_back({"regularization_tradeoff", [&task_pre, &task_ft, ck, fc, lambdas, options, tagged] {
            return tagged(verify_regularization_tradeoff(task_pre, task_ft, lambdas, fc, *ck, options));
          }});
          // Replicates only differ through batch sampling.
          if (batch.is_infinite()) break;
        }
      }
    }
  }
  return claims;
}

std::vector<VerificationReport> evaluate(const std::vector<Claim>& claims, int jobs) {
  std::vector<VerificationReport> reports(claims.size());
  parallel_for(claims.size(), jobs, [&](std::size_t i) {
    try {
      reports[i] = claims[i].run();
    } catch (const std::exception& e) {
      reports[i].claim = claims[i].name;
      reports[i].verdict = Verdict::kFailed;
      reports[i].margin = -kInf;
      reports[i].detail = std::string("error: ") + e.what();
    }
  });
  return reports;
}

std::vector<double> with_ideal(std::vector<double> taus) {
  if (std::find(taus.begin(), taus.end(), kInf) == taus.end()) taus.push_back(kInf);
  return taus;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

template <typename... Fields>
std::string csv_line(const Fields&... fields) {
  std::string line;
  bool first = true;
  auto add = [&](const std::string& f) {
    if (!first) line += ',';
    line += csv_field(f);
    first = false;
  };
  (add(fields), ...);
  line += '\n';
  return line;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + path.string());
  file << content;
  if (!file) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

const std::vector<std::string>& row_columns() {
  static const std::vector<std::string> columns = {
      "experiment", "phase", "d", "stage", "t_n", "tau", "gamma", "eta", "lambda", "batch", "K", "seed",
      "loss_pre_before", "loss_pre_after", "loss_ft_unreg", "delta_pre", "offdiag_norm", "residual"};
  return columns;
}

bool RunOutput::ok() const {
  if (!failures.empty()) return false;
  return std::none_of(reports.begin(), reports.end(), [](const VerificationReport& r) { return r.failed(); });
}

RunOutput run_phases(const ExperimentConfig& config, unsigned phases, const RunOptions& options) {
  const auto [task_pre, task_ft] = config.tasks();
  const std::vector<double> row_taus = config.pretrain.tau;
  const std::vector<double> taus = (phases & kPhaseVerify) ? with_ideal(row_taus) : row_taus;
  const std::vector<Pretrained> pretrained = pretrain_all(config, task_pre, taus, options.jobs);

  RunOutput out;
  std::vector<const Pretrained*> usable;
  for (const Pretrained& p : pretrained) {
    if (std::find(row_taus.begin(), row_taus.end(), p.tau) == row_taus.end()) continue;
    if (!p.checkpoints) {
      out.failures.push_back({"pretrain", "tau=" + fmt(p.tau), p.error});
      continue;
    }
    usable.push_back(&p);
  }

  if (phases & kPhasePretrain) {
    for (const Pretrained* p : usable) {
      for (const PretrainCheckpoint& c : p->checkpoints->checkpoints) {
        CheckpointRow r;
        r.experiment = config.name;
        r.d = task_pre.dim();
        r.stage = c.stage;
        r.t_n = c.time;
        r.tau = p->tau;
        r.loss_pre = loss_pre(c.model, task_pre);
        r.offdiag_norm = spectral_coordinates(c.model, task_pre).offdiag_norm;
        r.residual = c.residual;
        const auto idx = static_cast<std::size_t>(c.stage - 1);
        r.half_time = idx < p->half_times.size() && p->half_times[idx] ? *p->half_times[idx]
                                                                        : std::numeric_limits<double>::quiet_NaN();
        out.checkpoints.push_back(r);
      }
    }
    std::sort(out.checkpoints.begin(), out.checkpoints.end(), [](const CheckpointRow& a, const CheckpointRow& b) {
      return std::tie(a.tau, a.stage) < std::tie(b.tau, b.stage);
    });
  }
  if (phases & kPhaseGaussian) run_gaussian_grid(config, task_pre, usable, out);
  if (phases & kPhaseFinetune) run_finetune_grid(config, task_pre, task_ft, usable, options.jobs, out);

  std::sort(out.rows.begin(), out.rows.end(), [](const MeasurementRow& a, const MeasurementRow& b) {
    return std::tie(a.experiment, a.phase, a.tau, a.gamma, a.eta, a.lambda, a.batch, a.K, a.seed, a.stage) <
           std::tie(b.experiment, b.phase, b.tau, b.gamma, b.eta, b.lambda, b.batch, b.K, b.seed, b.stage);
  });

  if (phases & kPhaseVerify) {
    const bool mc = options.mc || config.perturb.mc_enabled;
    out.reports = evaluate(suite_claims(config, task_pre, task_ft, pretrained, mc), options.jobs);
  }
  return out;
}

RunOutput run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  return run_phases(config, kPhaseAll, options);
}

std::vector<VerificationReport> run_verification_suite(const ExperimentConfig& config, const RunOptions& options) {
  return run_phases(config, kPhaseVerify, options).reports;
}

std::string rows_csv(const std::vector<MeasurementRow>& rows) {
  std::string out;
  for (std::size_t i = 0; i < row_columns().size(); ++i) out += (i ? "," : "") + row_columns()[i];
  out += '\n';
  for (const MeasurementRow& r : rows) {
    out += csv_line(r.experiment, r.phase, std::to_string(r.d), std::to_string(r.stage), fmt(r.t_n), fmt(r.tau),
                    fmt(r.gamma), fmt(r.eta), fmt(r.lambda), fmt(r.batch), std::to_string(r.K), std::to_string(r.seed),
                    fmt(r.loss_pre_before), fmt(r.loss_pre_after), fmt(r.loss_ft_unreg), fmt(r.delta_pre),
                    fmt(r.offdiag_norm), fmt(r.residual));
  }
  return out;
}

std::string reports_csv(const std::vector<VerificationReport>& reports) {
  std::string out = "claim,scale,passed,margin,detail\n";
  for (const VerificationReport& r : reports) {
    out += csv_line(r.claim, r.scale, std::string(to_string(r.verdict)), fmt(r.margin), r.detail);
  }
  return out;
}

std::string failures_csv(const std::vector<FailureRow>& failures) {
  std::string out = "phase,coordinates,error\n";
  for (const FailureRow& f : failures) out += csv_line(f.phase, f.coordinates, f.error);
  return out;
}

std::string checkpoints_csv(const std::vector<CheckpointRow>& rows) {
  std::string out = "experiment,d,stage,t_n,tau,loss_pre,offdiag_norm,residual,half_time\n";
  for (const CheckpointRow& r : rows) {
    out += csv_line(r.experiment, std::to_string(r.d), std::to_string(r.stage), fmt(r.t_n), fmt(r.tau),
                    fmt(r.loss_pre), fmt(r.offdiag_norm), fmt(r.residual), fmt(r.half_time));
  }
  return out;
}

std::string manifest_json(const ExperimentConfig& config, const std::string& command, unsigned phases,
                          const RunOptions& options, const RunOutput& output) {
  nlohmann::ordered_json m;
  m["tool"] = kToolName;
  m["version"] = kToolVersion;
  m["command"] = command;
  nlohmann::ordered_json names = nlohmann::ordered_json::array();
  if (phases & kPhasePretrain) names.push_back("pretrain");
  if (phases & kPhaseGaussian) names.push_back("gaussian");
  if (phases & kPhaseFinetune) names.push_back("finetune");
  if (phases & kPhaseVerify) names.push_back("verify");
  m["phases"] = names;
  m["parent_seed"] = config.seed;
  m["task_seed"] = config.task_seed();
  m["mc"] = options.mc || config.perturb.mc_enabled;
  m["config"] = to_json(config);

  std::size_t passed = 0, failed = 0, na = 0;
  for (const VerificationReport& r : output.reports) {
    if (r.passed()) ++passed;
    if (r.failed()) ++failed;
    if (!r.applicable()) ++na;
  }
  std::size_t gaussian = 0, finetune = 0;
  for (const MeasurementRow& r : output.rows) (r.phase == "gaussian" ? gaussian : finetune)++;
  nlohmann::ordered_json counts;
  counts["checkpoints"] = output.checkpoints.size();
  counts["rows"] = output.rows.size();
  counts["gaussian_rows"] = gaussian;
  counts["finetune_rows"] = finetune;
  counts["failures"] = output.failures.size();
  counts["reports"] = output.reports.size();
  counts["reports_passed"] = passed;
  counts["reports_failed"] = failed;
  counts["reports_not_applicable"] = na;
  m["counts"] = counts;
  return m.dump(2) + "\n";
}

void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& config, const std::string& command,
                   unsigned phases, const RunOptions& options, const RunOutput& output) {
  std::filesystem::create_directories(dir);
  if (phases & kPhasePretrain) write_file(dir / "checkpoints.csv", checkpoints_csv(output.checkpoints));
  if (phases & (kPhaseGaussian | kPhaseFinetune)) write_file(dir / "rows.csv", rows_csv(output.rows));
  if (phases & kPhaseVerify) write_file(dir / "reports.csv", reports_csv(output.reports));
  write_file(dir / "failures.csv", failures_csv(output.failures));
  write_file(dir / "manifest.json", manifest_json(config, command, phases, options, output));
}

}  // namespace overtrain::harness
