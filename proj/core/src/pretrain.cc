#include "overtrain/pretrain.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "overtrain/errors.h"

namespace overtrain {
namespace {

struct Attempt {
  bool unstable = false;
  double unstable_time = 0.0;
  std::vector<PretrainCheckpoint> checkpoints;
  std::vector<std::optional<double>> half_times;
  Matrix w1;
  Matrix w2;
  long steps = 0;
};

Attempt integrate(const LinearTask& task, const PretrainConfig& config, double step) {
  const int d = task.dim();
  const Matrix& target = task.map();
  const Matrix& u = task.factors().u;
  const Matrix& v = task.factors().v;

  std::vector<Matrix> stage_targets;
  stage_targets.reserve(static_cast<std::size_t>(d));
  for (int n = 1; n <= d; ++n) stage_targets.push_back(task.truncated_map(n));

  Attempt out;
  out.half_times.assign(static_cast<std::size_t>(d), std::nullopt);
  const double init = std::exp(-config.tau);
  out.w1 = init * Matrix::Identity(d, d);
  out.w2 = out.w1;

  int stage = 1;
  bool refining = false;
  double best_residual = 0.0;
  double best_time = 0.0;
  Matrix best_w1, best_w2;

  Matrix theta = out.w1 * out.w2;
  double loss = (theta - target).squaredNorm();
  const long max_steps = static_cast<long>(std::ceil(config.horizon / step));
  // Loss changes below this are rounding noise once the flow has converged.
  const double eps_mach = std::numeric_limits<double>::epsilon();
  const double noise_floor = 1024.0 * eps_mach * eps_mach * (target.squaredNorm() + 1.0);

  for (long k = 0; k <= max_steps; ++k) {
    const double t = static_cast<double>(k) * step;

    const Matrix rotated = u.transpose() * theta * v;
    for (int i = 0; i < d; ++i) {
      auto& half = out.half_times[static_cast<std::size_t>(i)];
      if (!half && rotated(i, i) > 0.5 * task.spectrum().feature(i + 1)) half = t;
    }

    // Several stages may resolve at the same instant, hence the loop.
    while (stage <= d) {
      const double residual = (theta - stage_targets[static_cast<std::size_t>(stage - 1)]).norm();
      if (!refining) {
        if (residual > config.eps_ckpt) break;
        if (stage == d) {
          out.checkpoints.push_back({stage, t, TwoLayerModel(out.w1, out.w2), residual});
          ++stage;
          continue;
        }
        refining = true;
        best_residual = residual;
        best_time = t;
        best_w1 = out.w1;
        best_w2 = out.w2;
        break;
      }
      if (residual < best_residual) {
        best_residual = residual;
        best_time = t;
        best_w1 = out.w1;
        best_w2 = out.w2;
        break;
      }
      out.checkpoints.push_back({stage, best_time, TwoLayerModel(best_w1, best_w2), best_residual});
      refining = false;
      ++stage;
    }
    if (stage > d || k == max_steps) break;

    const Matrix grad = 2.0 * (theta - target);
    Matrix next_w1 = out.w1 - step * grad * out.w2.transpose();
    out.w2 = out.w2 - step * out.w1.transpose() * grad;
    out.w1 = std::move(next_w1);
    out.steps = k + 1;

    theta = out.w1 * out.w2;
    const double next_loss = (theta - target).squaredNorm();
    if (!std::isfinite(next_loss) || next_loss > loss * (1.0 + 1e-12) + noise_floor) {
      out.unstable = true;
      out.unstable_time = t + step;
      return out;
    }
    loss = next_loss;
  }
  // A plateau that was still improving when the horizon hit is recorded as is.
  if (refining) {
    out.checkpoints.push_back({stage, best_time, TwoLayerModel(best_w1, best_w2), best_residual});
  }
  return out;
}

}  // namespace

PretrainConfig default_pretrain_config(const Spectrum& spectrum, double tau) {
  PretrainConfig config;
  config.tau = tau;
  const double top = spectrum.feature(1);
  const double bottom = spectrum.feature(static_cast<int>(spectrum.size()));
  config.step = std::min(1e-3, 0.5 / (8.0 * top));
  config.horizon = (4.0 * tau + 30.0) / bottom;
  return config;
}

TwoLayerModel init_model(int d, double tau) {
  if (d < 1) throw InvalidDimensionError("dimension must be at least 1");
  const Matrix w = std::exp(-tau) * Matrix::Identity(d, d);
  return TwoLayerModel(w, w);
}

PretrainTrace pretrain_flow(const LinearTask& task, const PretrainConfig& config) {
  if (!(config.tau > 0.0) || !(config.step > 0.0) || !(config.horizon > 0.0) ||
      !(config.eps_ckpt > 0.0)) {
    throw InvalidParameterError("pretrain config requires tau, step, horizon, eps_ckpt > 0");
  }
  const double sigma1 = task.spectrum().feature(1);
  if (!(config.step < 1.0 / (8.0 * sigma1))) {
    std::ostringstream os;
    os << "Euler step " << config.step << " must be below 1/(8 sigma_1) = " << 1.0 / (8.0 * sigma1);
    throw InvalidParameterError(os.str());
  }

  double step = config.step;
  for (int attempt = 0;; ++attempt) {
    Attempt run = integrate(task, config, step);
    if (run.unstable) {
      if (attempt < config.max_halvings) {
        step *= 0.5;
        continue;
      }
      std::ostringstream os;
      os << "pre-training loss increased at flow time " << run.unstable_time << " with step " << step
         << "; use a smaller step";
      throw InstabilityError(os.str());
    }
    const int found = static_cast<int>(run.checkpoints.size());
    if (found < task.dim()) {
      std::ostringstream os;
      os << "reached horizon " << config.horizon << " with " << found << " of " << task.dim()
         << " stages (eps_ckpt " << config.eps_ckpt << "); stages found:";
      for (const auto& c : run.checkpoints) os << ' ' << c.stage;
      throw IncompleteTraceError(os.str(), found);
    }
    return PretrainTrace{std::move(run.checkpoints), TwoLayerModel(run.w1, run.w2),
                         std::move(run.half_times), step, run.steps};
  }
}

TwoLayerModel ideal_checkpoint(const LinearTask& task, int n) {
  if (n < 1 || n > task.dim()) {
    std::ostringstream os;
    os << "stage " << n << " out of range 1.." << task.dim();
    throw InvalidParameterError(os.str());
  }
  Eigen::VectorXd root = Eigen::VectorXd::Zero(task.dim());
  for (int i = 1; i <= n; ++i) root(i - 1) = std::sqrt(task.spectrum().feature(i));
  const OrthogonalPair& f = task.factors();
  return TwoLayerModel(f.u * root.asDiagonal(), root.asDiagonal() * f.v.transpose());
}

StageCheckpoints ideal_stage_checkpoints(const LinearTask& task) {
  StageCheckpoints out;
  for (int n = 1; n <= task.dim(); ++n) {
    out.checkpoints.push_back({n, 0.0, ideal_checkpoint(task, n), 0.0});
  }
  return out;
}

StageCheckpoints stage_checkpoints(const LinearTask& task, const PretrainConfig& config) {
  if (config.tau == std::numeric_limits<double>::infinity()) return ideal_stage_checkpoints(task);
  StageCheckpoints out;
  out.tau = config.tau;
  out.checkpoints = pretrain_flow(task, config).checkpoints;
  return out;
}

StageCheckpoints stage_checkpoints(const LinearTask& task, double tau) {
  if (tau == std::numeric_limits<double>::infinity()) return ideal_stage_checkpoints(task);
  return stage_checkpoints(task, default_pretrain_config(task.spectrum(), tau));
}

}  // namespace overtrain
