#include "overtrain/spectral.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "overtrain/errors.h"

namespace overtrain {
namespace {

void require_square_dim(const Matrix& m, int d, const char* what) {
  if (m.rows() != d || m.cols() != d) {
    std::ostringstream os;
    os << what << ": expected " << d << "x" << d << ", got " << m.rows() << "x" << m.cols();
    throw InvalidDimensionError(os.str());
  }
}

void require_same_dim(const TwoLayerModel& model, const LinearTask& task) {
  if (model.dim() != task.dim()) {
    std::ostringstream os;
    os << "model dimension " << model.dim() << " does not match task dimension " << task.dim();
    throw InvalidDimensionError(os.str());
  }
}

Matrix haar_like_orthogonal(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(d, d);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  // Flip columns so the triangular factor has a positive diagonal.
  for (int j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace

Spectrum Spectrum::Decreasing(std::vector<double> values) {
  if (values.empty()) throw InvalidDimensionError("spectrum must be non-empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
      throw InvalidSpectrumError("pre-training spectrum entries must be finite and strictly positive");
    }
    if (i > 0 && !(values[i - 1] > values[i])) {
      throw InvalidSpectrumError("pre-training spectrum must be strictly decreasing");
    }
  }
  return Spectrum(std::move(values));
}

Spectrum Spectrum::Positive(std::vector<double> values) {
  if (values.empty()) throw InvalidDimensionError("spectrum must be non-empty");
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidSpectrumError("fine-tuning spectrum entries must be finite and strictly positive");
    }
  }
  return Spectrum(std::move(values));
}

bool Spectrum::strictly_decreasing() const {
  return std::adjacent_find(values_.begin(), values_.end(), std::less_equal<>()) == values_.end();
}

OrthogonalPair random_orthogonal_pair(int d, std::uint64_t seed) {
  if (d < 1) throw InvalidDimensionError("dimension must be at least 1");
  std::mt19937_64 rng(seed);
  OrthogonalPair pair;
  pair.u = haar_like_orthogonal(d, rng);
  pair.v = haar_like_orthogonal(d, rng);
  pair.seed = seed;
  return pair;
}

LinearTask::LinearTask(std::shared_ptr<const OrthogonalPair> factors, Spectrum spectrum)
    : factors_(std::move(factors)), spectrum_(std::move(spectrum)) {
  if (!factors_) throw InvalidParameterError("task requires orthogonal factors");
  dim_ = factors_->dim();
  if (static_cast<int>(spectrum_.size()) != dim_) {
    std::ostringstream os;
    os << "spectrum length " << spectrum_.size() << " does not match dimension " << dim_;
    throw InvalidDimensionError(os.str());
  }
  require_square_dim(factors_->v, dim_, "V");
  map_ = truncated_map(dim_);
}

Matrix LinearTask::truncated_map(int n) const {
  if (n < 0 || n > dim_) throw InvalidParameterError("truncation index out of range");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(dim_);
  for (int i = 0; i < n; ++i) s(i) = spectrum_.values()[static_cast<std::size_t>(i)];
  return factors_->u * s.asDiagonal() * factors_->v.transpose();
}

bool shares_factors(const LinearTask& a, const LinearTask& b) {
  if (a.shared_factors() == b.shared_factors()) return true;
  return a.dim() == b.dim() && a.factors().u == b.factors().u && a.factors().v == b.factors().v;
}

TwoLayerModel::TwoLayerModel(Matrix w1, Matrix w2) : w1_(std::move(w1)), w2_(std::move(w2)) {
  if (w1_.rows() != w1_.cols() || w2_.rows() != w2_.cols() || w1_.rows() != w2_.rows()) {
    throw InvalidDimensionError("two-layer model factors must be square and of equal size");
  }
  if (!w1_.allFinite() || !w2_.allFinite()) {
    throw InvalidParameterError("two-layer model factors must be finite");
  }
}

std::pair<LinearTask, LinearTask> make_task_pair(const Spectrum& spectrum_pre,
                                                 const std::vector<double>& spectrum_ft,
                                                 int d, std::uint64_t seed) {
  if (d < 1) throw InvalidDimensionError("dimension must be at least 1");
  if (static_cast<int>(spectrum_pre.size()) != d || static_cast<int>(spectrum_ft.size()) != d) {
    std::ostringstream os;
    os << "spectra must both have length d=" << d << " (pre " << spectrum_pre.size() << ", ft "
       << spectrum_ft.size() << ")";
    throw InvalidDimensionError(os.str());
  }
  if (!spectrum_pre.strictly_decreasing()) {
    throw InvalidSpectrumError("pre-training spectrum must be strictly decreasing");
  }
  auto factors = std::make_shared<const OrthogonalPair>(random_orthogonal_pair(d, seed));
  LinearTask pre(factors, spectrum_pre);
  LinearTask ft(factors, Spectrum::Positive(spectrum_ft));
  return {std::move(pre), std::move(ft)};
}

double loss_pre(const TwoLayerModel& model, const LinearTask& task) {
  require_same_dim(model, task);
  return (model.product() - task.map()).squaredNorm();
}

double loss_ft(const TwoLayerModel& model, const TwoLayerModel& anchor,
               const LinearTask& task_ft, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidParameterError("lambda must be nonnegative");
  require_same_dim(model, task_ft);
  if (anchor.dim() != model.dim()) throw InvalidDimensionError("anchor dimension mismatch");
  const Matrix theta = model.product();
  return (theta - task_ft.map()).squaredNorm() + lambda * (theta - anchor.product()).squaredNorm();
}

SpectralCoordinates spectral_coordinates(const TwoLayerModel& model, const LinearTask& task) {
  require_same_dim(model, task);
  const OrthogonalPair& f = task.factors();
  Matrix rotated = f.u.transpose() * model.product() * f.v;
  SpectralCoordinates out;
  out.diag.resize(static_cast<std::size_t>(task.dim()));
  for (int i = 0; i < task.dim(); ++i) {
    out.diag[static_cast<std::size_t>(i)] = rotated(i, i);
    rotated(i, i) = 0.0;
  }
  out.offdiag_norm = rotated.norm();
  return out;
}

int misalignment_rank(const LinearTask& task_pre, const LinearTask& task_ft, double alpha) {
  if (!(alpha > 0.0)) throw InvalidParameterError("alpha must be positive");
  if (task_pre.dim() != task_ft.dim()) throw InvalidDimensionError("task dimension mismatch");
  const int d = task_pre.dim();
  // Walk down from the last index while the condition holds.
  int r = d;
  while (r > 0 && task_ft.spectrum().feature(r) > alpha * task_pre.spectrum().feature(r)) --r;
  return r;
}

double gamma_bound(const LinearTask& task_pre, const LinearTask& task_ft) {
  if (task_pre.dim() != task_ft.dim()) throw InvalidDimensionError("task dimension mismatch");
  const auto ft = task_ft.spectrum().values();
  return std::max(task_pre.spectrum().feature(1), *std::max_element(ft.begin(), ft.end()));
}

double operator_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

}  // namespace overtrain
