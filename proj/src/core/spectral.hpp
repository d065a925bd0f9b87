// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/operators.hpp"

namespace kpflow {

enum class Energy { kSv, kSvSquared };

std::string energy_name(Energy e);

/// Smallest k whose leading energies reach `threshold` of the total, e_i = s_i or s_i^2.
std::size_t effective_rank(std::span<const double> values, Energy convention, double threshold = 0.95);

struct SpectralSummary {
  std::vector<double> singular_values;  // descending; the full spectrum on the dense route
  std::vector<Traj3> right;             // leading right singular functions (domain), orthonormal
  std::vector<Traj3> left;              // leading left singular functions (codomain)
  Energy energy_convention = Energy::kSvSquared;
  std::size_t effective_rank_95 = 0;    // under energy_convention
  std::size_t effective_rank_95_sv = 0;
  std::size_t effective_rank_95_sv_squared = 0;
  std::size_t k_requested = 0;
  std::size_t k_converged = 0;
  double residual_tol = 1e-8;
  bool dense = false;
  std::size_t iterations = 0;

  nlohmann::json to_json() const;
};

struct SvdOptions {
  std::size_t k = 6;
  double tol = 1e-8;
  std::size_t max_iter = 300;
  std::uint64_t seed = 0;
  bool want_vectors = true;
  Energy convention = Energy::kSvSquared;
  bool force_matrix_free = false;
};

/// Exact SVD when the operator carries a dense representation, otherwise Golub-Kahan-Lanczos
/// bidiagonalisation (symmetric Lanczos for self-adjoint operators) with full
/// reorthogonalisation, in the operator's own inner products.
SpectralSummary top_svd(const Operator& op, const SvdOptions& opts);

/// <A q, q> / <q, q>. Throws kUndefined for q = 0.
double rayleigh(const Operator& op, const Traj3& q);

}  // namespace kpflow
