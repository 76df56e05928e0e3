#include "overtrain/finetune.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "overtrain/errors.h"
#include "overtrain/seeding.h"

namespace overtrain {
namespace {

void check_config(const FinetuneConfig& config) {
  if (!(config.eta > 0.0) || !std::isfinite(config.eta)) {
    throw InvalidParameterError("learning rate eta must be positive");
  }
  if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda)) {
    throw InvalidParameterError("regularization lambda must be nonnegative");
  }
  if (config.steps < 0) throw InvalidParameterError("step count K must be nonnegative");
  if (config.snapshot_stride < 0) throw InvalidParameterError("snapshot stride must be nonnegative");
}

FinetuneStepLoss population_losses(int step, const Matrix& theta, const Matrix& anchor_theta,
                                   const Matrix& target, double lambda) {
  const double unreg = (theta - target).squaredNorm();
  return {step, unreg + lambda * (theta - anchor_theta).squaredNorm(), unreg};
}

}  // namespace

BatchSize BatchSize::of(int m) {
  if (m < 1) throw InvalidParameterError("batch size must be a positive integer");
  return BatchSize(m);
}

bool BatchSize::operator<(const BatchSize& other) const {
  if (is_infinite()) return false;
  if (other.is_infinite()) return true;
  return size() < other.size();
}

double learning_rate_load(const FinetuneConfig& config, double gamma) {
  return 4.0 * config.eta * (config.lambda + 2.0) * gamma;
}

FinetuneTrace finetune(const TwoLayerModel& anchor, const LinearTask& task_ft, const FinetuneConfig& config) {
  const auto ft = task_ft.spectrum().values();
  const double gamma = std::max(operator_norm(anchor.product()), *std::max_element(ft.begin(), ft.end()));
  return finetune(anchor, task_ft, config, gamma);
}

FinetuneTrace finetune(const TwoLayerModel& anchor, const LinearTask& task_ft, const FinetuneConfig& config,
                       double gamma) {
  check_config(config);
  if (anchor.dim() != task_ft.dim()) throw InvalidDimensionError("anchor/task dimension mismatch");
  const double load = learning_rate_load(config, gamma);
  if (!(load < 1.0)) {
    std::ostringstream os;
    os << "learning-rate bound violated: 4*eta*(lambda+2)*Gamma = " << load << " >= 1 (eta " << config.eta
       << ", lambda " << config.lambda << ", Gamma " << gamma << ")";
    throw RejectedConfigError(os.str());
  }

  const int d = anchor.dim();
  const Matrix& target = task_ft.map();
  const Matrix anchor_theta = anchor.product();
  const double two_eta = 2.0 * config.eta;

  FinetuneTrace trace{config, anchor, {}, {}};
  trace.snapshots.push_back({0, anchor});
  trace.per_step_losses.reserve(static_cast<std::size_t>(config.steps) + 1);
  trace.per_step_losses.push_back(population_losses(0, anchor_theta, anchor_theta, target, config.lambda));

  Matrix w1 = anchor.w1();
  Matrix w2 = anchor.w2();
  Matrix theta = anchor_theta;

  std::mt19937_64 engine = stream_engine(config.seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix inputs;
  Matrix covariance = Matrix::Identity(d, d);
  if (!config.batch.is_infinite()) inputs.resize(d, config.batch.size());

  for (int k = 0; k < config.steps; ++k) {
    if (!config.batch.is_infinite()) {
      for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs(i) = normal(engine);
      covariance.noalias() = inputs * inputs.transpose();
      covariance /= static_cast<double>(config.batch.size());
    }
    const Matrix data_residual = (theta - target) * covariance;
    const Matrix reg_residual = config.lambda * (theta - anchor_theta);
    // (theta - A) S is used for W1; S (theta - A) for W2, S being symmetric.
    const Matrix w1_drive = data_residual + reg_residual;
    const Matrix w2_drive = covariance * (theta - target) + reg_residual;
    Matrix next_w1 = w1 - two_eta * w1_drive * w2.transpose();
    w2 = w2 - two_eta * w1.transpose() * w2_drive;
    w1 = std::move(next_w1);
    if (!w1.allFinite() || !w2.allFinite()) {
      std::ostringstream os;
      os << "fine-tuning diverged at step " << (k + 1);
      throw DivergenceError(os.str(), k + 1);
    }
    theta = w1 * w2;
    const int step = k + 1;
    trace.per_step_losses.push_back(population_losses(step, theta, anchor_theta, target, config.lambda));
    const bool strided = config.snapshot_stride > 0 && step % config.snapshot_stride == 0;
    if (strided || step == config.steps) trace.snapshots.push_back({step, TwoLayerModel(w1, w2)});
  }
  return trace;
}

double f_step(double x, double eta, double lambda, double sigma, double sigma0) {
  const double x2 = x * x;
  return x + 2.0 * eta * x * (sigma * sigma - x2) + 2.0 * eta * lambda * x * (sigma0 * sigma0 - x2);
}

double f_fixed_point(double sigma, double sigma0, double lambda) {
  if (!(sigma > 0.0)) throw InvalidParameterError("sigma must be positive");
  if (!(lambda >= 0.0)) throw InvalidParameterError("lambda must be nonnegative");
  return std::sqrt((sigma * sigma + lambda * sigma0 * sigma0) / (1.0 + lambda));
}

SpectralCoordinates diagonal_finetune_exact(const LinearTask& task_pre, const LinearTask& task_ft, int n,
                                            const FinetuneConfig& config) {
  check_config(config);
  if (!shares_factors(task_pre, task_ft)) {
    throw InconsistentInputsError("pre-training and fine-tuning tasks must share orthogonal factors");
  }
  if (n < 1 || n > task_pre.dim()) {
    std::ostringstream os;
    os << "stage " << n << " out of range 1.." << task_pre.dim();
    throw InvalidParameterError(os.str());
  }
  SpectralCoordinates out;
  out.diag.assign(static_cast<std::size_t>(task_pre.dim()), 0.0);
  for (int i = 1; i <= n; ++i) {
    const double sigma0 = std::sqrt(task_pre.spectrum().feature(i));
    const double sigma = std::sqrt(task_ft.spectrum().feature(i));
    double x = sigma0;
    for (int k = 0; k < config.steps; ++k) x = f_step(x, config.eta, config.lambda, sigma, sigma0);
    out.diag[static_cast<std::size_t>(i - 1)] = x * x;
  }
  out.offdiag_norm = 0.0;
  return out;
}

}  // namespace overtrain
