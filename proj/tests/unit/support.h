#pragma once

#include <cstdint>
#include <random>

#include "overtrain/spectral.h"

namespace overtrain::testing {

inline Matrix gaussian_matrix(int d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(d, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

inline TwoLayerModel random_model(int d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  Matrix w1 = gaussian_matrix(d, rng, scale);
  Matrix w2 = gaussian_matrix(d, rng, scale);
  return TwoLayerModel(w1, w2);
}

inline LinearTask task_on(const std::shared_ptr<const OrthogonalPair>& factors, std::vector<double> spectrum) {
  return LinearTask(factors, Spectrum::Positive(std::move(spectrum)));
}

}  // namespace overtrain::testing
