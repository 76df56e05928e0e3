#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace overtrain {

using Matrix = Eigen::MatrixXd;

/// Feature magnitudes of a linear map, indexed 1..d in the public API.
///
/// A pre-training spectrum must be strictly positive and strictly decreasing
/// (staged learning needs distinct features). A fine-tuning spectrum only has
/// to be strictly positive; repeats and non-monotone orderings are allowed.
class Spectrum {
 public:
  static Spectrum Decreasing(std::vector<double> values);
  static Spectrum Positive(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  /// 1-based access matching stage numbering.
  double feature(int i) const { return values_.at(static_cast<std::size_t>(i - 1)); }
  bool strictly_decreasing() const;

  bool operator==(const Spectrum&) const = default;

 private:
  explicit Spectrum(std::vector<double> values) : values_(std::move(values)) {}
  std::vector<double> values_;
};

/// Orthogonal factors (U, V) shared by the pre-training and fine-tuning maps.
struct OrthogonalPair {
  Matrix u;
  Matrix v;
  std::uint64_t seed = 0;

  int dim() const { return static_cast<int>(u.rows()); }
};

/// Gaussian + QR with the triangular factor's diagonal forced positive.
/// Deterministic in `seed`: U consumes the first d*d draws, V the next d*d.
OrthogonalPair random_orthogonal_pair(int d, std::uint64_t seed);

/// A = U diag(spectrum) V^T. The map is materialized once at construction.
class LinearTask {
 public:
  LinearTask(std::shared_ptr<const OrthogonalPair> factors, Spectrum spectrum);

  int dim() const { return dim_; }
  const OrthogonalPair& factors() const { return *factors_; }
  const std::shared_ptr<const OrthogonalPair>& shared_factors() const { return factors_; }
  const Spectrum& spectrum() const { return spectrum_; }
  const Matrix& map() const { return map_; }

  /// U diag(sigma_1..sigma_n, 0, ..., 0) V^T.
  Matrix truncated_map(int n) const;

 private:
  std::shared_ptr<const OrthogonalPair> factors_;
  Spectrum spectrum_;
  int dim_;
  Matrix map_;
};

/// True when both tasks were built on the same orthogonal factors.
bool shares_factors(const LinearTask& a, const LinearTask& b);

/// theta = W1 W2. The product is recomputed on demand and never stored.
class TwoLayerModel {
 public:
  TwoLayerModel(Matrix w1, Matrix w2);

  const Matrix& w1() const { return w1_; }
  const Matrix& w2() const { return w2_; }
  int dim() const { return static_cast<int>(w1_.rows()); }
  Matrix product() const { return w1_ * w2_; }

  bool operator==(const TwoLayerModel& other) const {
    return w1_ == other.w1_ && w2_ == other.w2_;
  }

 private:
  Matrix w1_;
  Matrix w2_;
};

struct SpectralCoordinates {
  std::vector<double> diag;
  double offdiag_norm = 0.0;
};

/// Builds (pre, ft) tasks on one shared orthogonal pair.
std::pair<LinearTask, LinearTask> make_task_pair(const Spectrum& spectrum_pre,
                                                 const std::vector<double>& spectrum_ft,
                                                 int d, std::uint64_t seed);

/// ||W1 W2 - A||_F^2.
double loss_pre(const TwoLayerModel& model, const LinearTask& task);

/// ||theta - A_ft||_F^2 + lambda ||theta - theta_anchor||_F^2.
double loss_ft(const TwoLayerModel& model, const TwoLayerModel& anchor,
               const LinearTask& task_ft, double lambda);

/// Splits U^T theta V into its diagonal and the Frobenius norm of the rest.
SpectralCoordinates spectral_coordinates(const TwoLayerModel& model, const LinearTask& task);

/// Smallest r in {0..d} with sigma_ft_i > alpha * sigma_pre_i for every i > r.
int misalignment_rank(const LinearTask& task_pre, const LinearTask& task_ft, double alpha);

/// Gamma = max{sigma_pre_1, max_i sigma_ft_i}.
double gamma_bound(const LinearTask& task_pre, const LinearTask& task_ft);

/// Largest singular value.
double operator_norm(const Matrix& m);

}  // namespace overtrain
