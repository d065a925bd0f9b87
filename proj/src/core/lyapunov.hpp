// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <vector>

#include <json.hpp>

#include "core/model.hpp"

namespace kpflow {

struct LyapunovReport {
  std::vector<std::vector<double>> per_trial;      // QR-chain exponents, descending
  std::vector<std::vector<double>> per_trial_svd;  // (1/(T-1)) log sigma_i(U(T-1|b)), descending
  std::vector<double> consensus;                   // from eig E_b[U U^T], descending
  std::vector<double> ky_per_trial;
  double ky_consensus = 0.0;

  nlohmann::json to_json() const;
};

/// Kaplan-Yorke dimension of a descending spectrum: j + S_j / |lambda_{j+1}| with j the largest
/// index whose partial sum S_j is non-negative (within `tol`); 0 if lambda_1 < 0, n if every
/// partial sum is non-negative.
double kaplan_yorke(const std::vector<double>& lambdas, double tol = 1e-10);

/// Exponents per unit step. Rank-deficient steps give -infinity.
LyapunovReport lyapunov_spectrum(const ForwardTrace& tr, bool consensus = true);

}  // namespace kpflow
