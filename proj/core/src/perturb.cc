#include "overtrain/perturb.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "overtrain/errors.h"
#include "overtrain/seeding.h"

namespace overtrain {
namespace {

constexpr long kBlockSize = 4096;

struct RunningMoments {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }

  void merge(const RunningMoments& other) {
    if (other.n == 0) return;
    if (n == 0) {
      *this = other;
      return;
    }
    const double total = static_cast<double>(n + other.n);
    const double delta = other.mean - mean;
    mean += delta * static_cast<double>(other.n) / total;
    m2 += other.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(other.n) / total;
    n += other.n;
  }
};

void check_gamma(double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw InvalidParameterError("perturbation scale gamma must be finite and nonnegative");
  }
}

}  // namespace

PerturbationTerms perturbation_terms(const TwoLayerModel& model, const LinearTask& task, double gamma) {
  check_gamma(gamma);
  const double d = static_cast<double>(model.dim());
  const double g2 = gamma * gamma;
  PerturbationTerms terms;
  terms.base = loss_pre(model, task);
  terms.quadratic = d * g2 * (model.w1().squaredNorm() + model.w2().squaredNorm());
  terms.quartic = d * d * d * g2 * g2;
  return terms;
}

double perturbed_loss_closed(const TwoLayerModel& model, const LinearTask& task, double gamma) {
  return perturbation_terms(model, task, gamma).total();
}

McEstimate perturbed_loss_mc(const TwoLayerModel& model, const LinearTask& task, const PerturbSpec& spec) {
  check_gamma(spec.gamma);
  if (spec.samples < 2) throw InsufficientSamplesError("Monte-Carlo estimate needs at least 2 samples");
  if (model.dim() != task.dim()) throw InvalidDimensionError("model/task dimension mismatch");

  const int d = model.dim();
  const Matrix& target = task.map();
  Matrix z1(d, d), z2(d, d);
  RunningMoments total;

  const long blocks = (spec.samples + kBlockSize - 1) / kBlockSize;
  for (long b = 0; b < blocks; ++b) {
    auto engine = stream_engine(spec.seed, static_cast<std::uint64_t>(b));
    std::normal_distribution<double> noise(0.0, 1.0);
    const long count = std::min(kBlockSize, spec.samples - b * kBlockSize);
    RunningMoments block;
    for (long s = 0; s < count; ++s) {
      for (Eigen::Index i = 0; i < z1.size(); ++i) z1(i) = spec.gamma * noise(engine);
      for (Eigen::Index i = 0; i < z2.size(); ++i) z2(i) = spec.gamma * noise(engine);
      block.push(((model.w1() + z1) * (model.w2() + z2) - target).squaredNorm());
    }
    total.merge(block);
  }

  McEstimate out;
  out.samples = total.n;
  out.mean = total.mean;
  const double variance = total.m2 / static_cast<double>(total.n - 1);
  out.std_error = std::sqrt(variance / static_cast<double>(total.n));
  return out;
}

}  // namespace overtrain
