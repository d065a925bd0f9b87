// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

namespace kpflow {
namespace {

using DMat = Eigen::MatrixXd;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

nlohmann::json finite_or_null(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) {
    if (std::isfinite(x)) a.push_back(x);
    else a.push_back(nullptr);
  }
  return a;
}

}  // namespace

double kaplan_yorke(const std::vector<double>& lambdas, double tol) {
  if (lambdas.empty() || lambdas[0] < -tol) return 0.0;
  double sum = 0.0;
  for (std::size_t j = 0; j < lambdas.size(); ++j) {
    const double next = sum + lambdas[j];
    if (next < -tol) return double(j) + sum / std::abs(lambdas[j]);
    sum = next;
  }
  return double(lambdas.size());
}

LyapunovReport lyapunov_spectrum(const ForwardTrace& tr, bool consensus) {
  require(tr.T() >= 2, ErrorCode::kInvalidArgument, "lyapunov_spectrum: need T >= 2");
  const std::size_t B = tr.B(), T = tr.T();
  const Eigen::Index S = Eigen::Index(tr.S());
  std::vector<DMat> Q(B, DMat::Identity(S, S)), Racc(B, DMat::Identity(S, S));
  std::vector<double> log_scale(B, 0.0);
  std::vector<Vec> sums(B, Vec::Zero(S));

  Mat e = Mat::Zero(Eigen::Index(B), S), col(Eigen::Index(B), S);
  std::vector<DMat> J(B, DMat(S, S));
  for (std::size_t t = 0; t + 1 < T; ++t) {
    for (Eigen::Index k = 0; k < S; ++k) {
      e.setZero();
      e.col(k).setOnes();
      tr.model->jac_block(tr, t, 0, ConstStepMap(e.data(), e.rows(), S, Eigen::OuterStride<>(S)),
                          StepMap(col.data(), col.rows(), S, Eigen::OuterStride<>(S)));
      for (std::size_t b = 0; b < B; ++b) J[b].col(k) = col.row(Eigen::Index(b)).transpose();
    }
    for (std::size_t b = 0; b < B; ++b) {
      Eigen::HouseholderQR<DMat> qr(J[b] * Q[b]);
      DMat Qn = qr.householderQ();
      DMat R = qr.matrixQR().triangularView<Eigen::Upper>();
      for (Eigen::Index i = 0; i < S; ++i) {
        if (R(i, i) < 0) {
          R.row(i) *= -1.0;
          Qn.col(i) *= -1.0;
        }
        sums[b][i] += safe_log(R(i, i));
      }
      Q[b] = std::move(Qn);
      Racc[b] = R * Racc[b];
      const double n = Racc[b].norm();
      if (n > 0.0 && std::isfinite(n)) {
        Racc[b] /= n;
        log_scale[b] += std::log(n);
      }
    }
  }

  const double steps = double(T - 1);
  LyapunovReport rep;
  // U_b = exp(log_scale_b) Q_b R_b = exp(log_scale_b) L_b Sigma_b V_b^T with L_b = Q_b X_b.
  std::vector<DMat> L(B);
  std::vector<Vec> sig(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> lam(sums[b].data(), sums[b].data() + S);
    for (double& l : lam) l /= steps;
    std::sort(lam.begin(), lam.end(), std::greater<>());
    rep.ky_per_trial.push_back(kaplan_yorke(lam));
    rep.per_trial.push_back(std::move(lam));

    Eigen::JacobiSVD<DMat> svd(Racc[b], Eigen::ComputeFullU);
    sig[b] = svd.singularValues();
    if (consensus) L[b] = Q[b] * svd.matrixU();
    std::vector<double> fs;
    for (Eigen::Index i = 0; i < S; ++i) fs.push_back((safe_log(sig[b][i]) + log_scale[b]) / steps);
    rep.per_trial_svd.push_back(std::move(fs));
  }
  if (consensus) {
    // E_b[U U^T] = F F^T with F = [c_b L_b Sigma_b]; the V_b drop out. Columns are expressed in the
    // left basis of the dominant trial and sorted by norm so the QR-preconditioned Jacobi SVD keeps
    // relative accuracy on the small singular values (a homogeneous batch then reproduces the
    // per-trial exponents).
    // Trials with identical inputs and initial state are one trajectory in exact arithmetic; they
    // enter once with their multiplicity so batch-position rounding cannot split them.
    std::vector<std::size_t> reps;
    std::vector<double> mult;
    auto same_trial = [&](std::size_t a, std::size_t b) {
      const double* xa = tr.inputs.slice_ptr(a, 0);
      return tr.z.at(a, 0) == tr.z.at(b, 0) && std::equal(xa, xa + T * tr.inputs.H(), tr.inputs.slice_ptr(b, 0));
    };
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t g = 0;
      while (g < reps.size() && !same_trial(reps[g], b)) ++g;
      if (g == reps.size()) {
        reps.push_back(b);
        mult.push_back(0.0);
      }
      mult[g] += 1.0;
    }
    std::size_t ref = reps[0];
    for (std::size_t r : reps)
      if (log_scale[r] > log_scale[ref]) ref = r;
    const double smax = log_scale[ref];
    std::vector<std::pair<double, Vec>> cols;
    cols.reserve(reps.size() * std::size_t(S));
    for (std::size_t g = 0; g < reps.size(); ++g) {
      const std::size_t b = reps[g];
      const double c = std::exp(log_scale[b] - smax) * std::sqrt(mult[g] / double(B));
      const DMat C = L[ref].transpose() * L[b];
      for (Eigen::Index j = 0; j < S; ++j) {
        const double w = c * sig[b][j];
        if (w > 0.0) cols.emplace_back(w, w * C.col(j));
      }
    }
    std::stable_sort(cols.begin(), cols.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    DMat Ft = DMat::Zero(std::max<Eigen::Index>(Eigen::Index(cols.size()), S), S);
    for (std::size_t i = 0; i < cols.size(); ++i) Ft.row(Eigen::Index(i)) = cols[i].second.transpose();
    Eigen::JacobiSVD<DMat> svd(Ft);
    for (Eigen::Index i = 0; i < S; ++i)
      rep.consensus.push_back((safe_log(svd.singularValues()[i]) + smax) / steps);
    rep.ky_consensus = kaplan_yorke(rep.consensus);
  }
  return rep;
}

nlohmann::json LyapunovReport::to_json() const {
  nlohmann::json j;
  nlohmann::json pt = nlohmann::json::array(), ps = nlohmann::json::array();
  for (const auto& v : per_trial) pt.push_back(finite_or_null(v));
  for (const auto& v : per_trial_svd) ps.push_back(finite_or_null(v));
  j["per_trial"] = pt;
  j["per_trial_svd"] = ps;
  j["consensus"] = finite_or_null(consensus);
  j["ky_per_trial"] = ky_per_trial;
  j["ky_consensus"] = ky_consensus;
  return j;
}

}  // namespace kpflow
