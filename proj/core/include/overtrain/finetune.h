#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "overtrain/spectral.h"

namespace overtrain {

/// Per-step batch size: a positive sample count or the infinite-batch limit,
/// where the empirical input covariance is replaced by the identity.
class BatchSize {
 public:
  static BatchSize infinite() { return BatchSize(std::nullopt); }
  static BatchSize of(int m);

  bool is_infinite() const { return !size_; }
  int size() const { return size_.value(); }
  std::string to_string() const { return size_ ? std::to_string(*size_) : "inf"; }

  bool operator==(const BatchSize&) const = default;
  /// Finite sizes order by value; infinite sorts last.
  bool operator<(const BatchSize& other) const;

 private:
  explicit BatchSize(std::optional<int> size) : size_(size) {}
  std::optional<int> size_;
};

struct FinetuneConfig {
  double eta = 0.01;
  double lambda = 0.0;
  int steps = 100;
  BatchSize batch = BatchSize::infinite();
  std::uint64_t seed = 0;
  /// Record a snapshot every `snapshot_stride` steps (0: only k = 0 and k = K).
  int snapshot_stride = 0;
};

/// 4 eta (lambda + 2) Gamma, which must stay below 1.
double learning_rate_load(const FinetuneConfig& config, double gamma);

struct FinetuneSnapshot {
  int step = 0;
  TwoLayerModel model;
};

struct FinetuneStepLoss {
  int step = 0;
  /// Population regularized objective ||theta - A_ft||^2 + lambda ||theta - theta_anchor||^2.
  double loss_ft = 0.0;
  /// ||theta - A_ft||^2.
  double loss_ft_unreg = 0.0;
};

struct FinetuneTrace {
  FinetuneConfig config;
  TwoLayerModel anchor;
  std::vector<FinetuneSnapshot> snapshots;
  std::vector<FinetuneStepLoss> per_step_losses;

  const TwoLayerModel& final_model() const { return snapshots.back().model; }
};

/// Gradient descent on the fine-tuning objective starting from `anchor`:
///   W1 <- W1 - 2 eta (theta - A_ft) S_k W2^T - 2 eta lambda (theta - theta_0) W2^T
///   W2 <- W2 - 2 eta W1^T S_k (theta - A_ft) - 2 eta lambda W1^T (theta - theta_0)
/// where S_k is the empirical covariance of a fresh standard-Gaussian batch
/// (identity for the infinite batch). The regularizer is never batch-averaged.
///
/// The learning-rate bound is checked against Gamma = max(||theta_0||_op,
/// max sigma_ft), the anchor standing in for the learned pre-training
/// features. Throws RejectedConfigError when it fails and DivergenceError on a
/// non-finite parameter.
FinetuneTrace finetune(const TwoLayerModel& anchor, const LinearTask& task_ft, const FinetuneConfig& config);

/// Same as above with Gamma supplied by the caller (e.g. gamma_bound(pre, ft)).
FinetuneTrace finetune(const TwoLayerModel& anchor, const LinearTask& task_ft, const FinetuneConfig& config,
                       double gamma);

/// One application of the scalar map tracking a learned feature's square root:
///   x + 2 eta x (sigma^2 - x^2) + 2 eta lambda x (sigma0^2 - x^2).
double f_step(double x, double eta, double lambda, double sigma, double sigma0);

/// sqrt((sigma^2 + lambda sigma0^2) / (1 + lambda)), the map's positive fixed point.
double f_fixed_point(double sigma, double sigma0, double lambda);

/// Product-scale diagonal after K steps of the infinite-batch dynamic started
/// at ideal_checkpoint(task_pre, n): coordinate i <= n is the K-fold iterate of
/// f_step from sqrt(sigma_pre_i) with sigma = sqrt(sigma_ft_i), sigma0 =
/// sqrt(sigma_pre_i), squared; coordinates i > n stay 0.
SpectralCoordinates diagonal_finetune_exact(const LinearTask& task_pre, const LinearTask& task_ft, int n,
                                            const FinetuneConfig& config);

}  // namespace overtrain
