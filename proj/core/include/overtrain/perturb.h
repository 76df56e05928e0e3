#pragma once

#include <cstdint>

#include "overtrain/spectral.h"

namespace overtrain {

/// Isotropic Gaussian perturbation W_i -> W_i + Z_i with Z_i entries i.i.d. N(0, gamma^2).
struct PerturbSpec {
  double gamma = 0.0;
  long samples = 1;
  std::uint64_t seed = 0;
};

/// Expected perturbed loss split by order in gamma:
///   base      = ||W1 W2 - A||_F^2
///   quadratic = d gamma^2 (||W1||_F^2 + ||W2||_F^2)
///   quartic   = E||Z1 Z2||_F^2 = d^3 gamma^4
struct PerturbationTerms {
  double base = 0.0;
  double quadratic = 0.0;
  double quartic = 0.0;

  double total() const { return base + quadratic + quartic; }
  /// Expected degradation over the unperturbed loss.
  double degradation() const { return quadratic + quartic; }
};

PerturbationTerms perturbation_terms(const TwoLayerModel& model, const LinearTask& task, double gamma);

/// Closed-form E[L_pre((W1+Z1)(W2+Z2))].
double perturbed_loss_closed(const TwoLayerModel& model, const LinearTask& task, double gamma);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

/// Monte-Carlo estimate of the perturbed loss.
///
/// Samples are drawn in fixed-size blocks, each with its own generator keyed
/// by (seed, block index), so sample i is reproducible independently of the
/// order blocks are evaluated in and block statistics merge deterministically.
McEstimate perturbed_loss_mc(const TwoLayerModel& model, const LinearTask& task, const PerturbSpec& spec);

}  // namespace overtrain
