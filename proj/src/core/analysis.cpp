// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kpflow {

namespace {
constexpr double kNull = std::numeric_limits<double>::quiet_NaN();
}

nlohmann::json score_matrix_json(const ScoreMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (std::isnan(m(i, j))) row.push_back(nullptr);
      else row.push_back(m(i, j));
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<FlowCheck> verify_flow(const Model& model, const Readout& ro, const TrialBatch& batch,
                                   const std::vector<double>& etas) {
  const ForwardTrace tr = model.forward(batch.inputs);
  const LossResult lr = loss_and_err(tr, ro, batch);
  const AdjointResult adj = adjoint_backward(tr, lr.err);
  Traj3 scaled_err = lr.err;
  scaled_err *= double(tr.B());
  const Traj3 flow = make_pkp(tr).apply(scaled_err);
  std::vector<FlowCheck> out;
  for (double eta : etas) {
    FlowCheck c;
    c.eta = eta;
    if (eta == 0.0) {
      out.push_back(c);
      continue;
    }
    Traj3 pred = flow;
    pred *= -eta;
    c.pred_norm = norm(pred);
    require(c.pred_norm > 0.0, ErrorCode::kUndefined, "verify_flow: zero predicted update");
    auto stepped = model.clone();
    stepped->set_params(model.params() - eta * adj.grad);
    Traj3 actual = stepped->forward(batch.inputs).z;
    actual -= tr.z;
    c.actual_norm = norm(actual);
    actual -= pred;
    c.rel_err = norm(actual) / c.pred_norm;
    out.push_back(c);
  }
  return out;
}

Operator output_flow_operator(const ForwardTrace& tr, const Mat& W_out) {
  require(std::size_t(W_out.cols()) == tr.S(), ErrorCode::kDimension, "output_flow_operator: W_out shape mismatch");
  const Operator pkp = make_pkp(tr);
  const Shape3 out{tr.B(), tr.T(), std::size_t(W_out.rows())};
  auto fwd = [pkp, W_out](const Traj3& q) {
    const Traj3 lifted = readout(q, W_out.transpose(), Vec::Zero(W_out.cols()));
    return readout(pkp.apply(lifted), W_out, Vec::Zero(W_out.rows()));
  };
  OpFlags f;
  f.self_adjoint = f.psd = true;
  return Operator(out, out, tr.z.dt(), fwd, fwd, f, "Theta");
}

InterferenceResult interference_step(const ForwardTrace& tr, const std::vector<std::vector<std::size_t>>& partition,
                                     const Traj3& err, const Operator& K) {
  require(err.shape() == tr.z.shape(), ErrorCode::kDimension, "interference_step: err shape mismatch");
  const BlockOperators blocks = restrict_blocks(K, tr, partition);
  const std::size_t n = partition.size();
  InterferenceResult r;
  r.dz.assign(n, std::vector<Traj3>(n));
  r.M_cos = ScoreMatrix::Constant(Eigen::Index(n), Eigen::Index(n), kNull);
  for (std::size_t j = 0; j < n; ++j) {
    const Traj3 aj = blocks.P_adjoint[j].apply(restrict_trials(err, partition[j]));
    // One application of the full K serves every K_ij.
    const Traj3 kfull = K.apply(embed_trials(aj, partition[j], tr.B()));
    for (std::size_t i = 0; i < n; ++i) r.dz[i][j] = blocks.P[i].apply(restrict_trials(kfull, partition[i]));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = norm(r.dz[i][i]), b = norm(r.dz[i][j]);
      if (a > 0.0 && b > 0.0) r.M_cos(Eigen::Index(i), Eigen::Index(j)) = inner(r.dz[i][i], r.dz[i][j]) / (a * b);
    }
  return r;
}

ScoreMatrix rayleigh_interference(const ForwardTrace& tr, const std::vector<std::vector<std::size_t>>& partition,
                                  const Traj3& err, const Operator& K) {
  const BlockOperators blocks = restrict_blocks(K, tr, partition);
  const std::size_t n = partition.size();
  for (const auto& cell : partition)
    require(cell.size() == partition[0].size(), ErrorCode::kDimension,
            "rayleigh_interference: task blocks must have equal trial counts");
  ScoreMatrix M = ScoreMatrix::Constant(Eigen::Index(n), Eigen::Index(n), kNull);
  for (std::size_t j = 0; j < n; ++j) {
    const Traj3 aj = blocks.P_adjoint[j].apply(restrict_trials(err, partition[j]));
    const double aa = inner(aj, aj);
    if (!(aa > 0.0)) continue;
    for (std::size_t i = 0; i < n; ++i)
      M(Eigen::Index(i), Eigen::Index(j)) = inner(blocks.K[i][j].apply(aj), aj) / aa;
  }
  return M;
}

double filtered_score(const ScoreMatrix& M, const Filter& filter) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double f = filter[i][j];
      if (f == 0.0) continue;
      const double v = M(Eigen::Index(i), Eigen::Index(j));
      if (std::isnan(v)) continue;
      num += f * v;
      den += f;
    }
  require(den > 0.0, ErrorCode::kUndefined, "filtered_score: every filtered entry is null");
  return num / den;
}

AlignmentCurve cumulative_alignment(const std::vector<ScoreMatrix>& reports, const Filter& filter) {
  AlignmentCurve c;
  double running = 0.0;
  for (const auto& M : reports) {
    require(M.rows() == 4 && M.cols() == 4, ErrorCode::kDimension, "cumulative_alignment: expected 4x4 matrices");
    const double s = filtered_score(M, filter);
    c.per_iteration.push_back(s);
    running += s;
    c.cumulative.push_back(running / double(c.per_iteration.size()));
  }
  return c;
}

ScoreMatrix task_alignment_matrix(const Traj3& z, const std::vector<std::vector<std::size_t>>& partition,
                                  const std::vector<double>& angles) {
  const std::size_t n = partition.size();
  std::vector<std::vector<std::size_t>> ordered(n);
  std::vector<std::vector<double>> sorted_angles(n);
  for (std::size_t i = 0; i < n; ++i) {
    ordered[i] = partition[i];
    std::stable_sort(ordered[i].begin(), ordered[i].end(),
                     [&](std::size_t a, std::size_t b) { return angles.at(a) < angles.at(b); });
    for (std::size_t b : ordered[i]) sorted_angles[i].push_back(angles.at(b));
  }
  for (std::size_t i = 1; i < n; ++i) {
    require(sorted_angles[i].size() == sorted_angles[0].size(), ErrorCode::kInvalidArgument,
            "task_alignment_matrix: stimuli are not matched across tasks");
    for (std::size_t k = 0; k < sorted_angles[0].size(); ++k)
      require(std::abs(sorted_angles[i][k] - sorted_angles[0][k]) <= 1e-12, ErrorCode::kInvalidArgument,
              "task_alignment_matrix: stimuli are not matched across tasks");
  }
  std::vector<Traj3> zs;
  for (const auto& cell : ordered) zs.push_back(restrict_trials(z, cell));
  ScoreMatrix M = ScoreMatrix::Zero(Eigen::Index(n), Eigen::Index(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double c = i == j ? 1.0 : cosine_sim(zs[i], zs[j]);
      M(Eigen::Index(i), Eigen::Index(j)) = M(Eigen::Index(j), Eigen::Index(i)) = c;
    }
  return M;
}

MisdirectionResult misdirection(const Operator& P, const Operator& K, std::size_t k, std::uint64_t seed) {
  require(K.in_shape() == P.in_shape() && K.out_shape() == P.in_shape(), ErrorCode::kDimension,
          "misdirection: K must act on the domain of P");
  SvdOptions o;
  o.k = k;
  o.seed = seed;
  o.want_vectors = true;
  const SpectralSummary s = top_svd(P, o);
  require(s.k_converged >= k, ErrorCode::kNotConverged, "misdirection: top-k SVD of P did not converge");
  MisdirectionResult r;
  r.sigma.assign(s.singular_values.begin(), s.singular_values.begin() + std::ptrdiff_t(k));
  const Eigen::Index kk = Eigen::Index(k);
  r.Bmat.resize(kk, kk);
  std::vector<Traj3> Kv;
  for (std::size_t j = 0; j < k; ++j) Kv.push_back(K.apply(s.right[j]));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      r.Bmat(Eigen::Index(i), Eigen::Index(j)) = r.sigma[i] * r.sigma[j] * inner(s.right[i], Kv[j]);
  Eigen::MatrixXd S2 = Eigen::MatrixXd::Zero(kk, kk);
  for (Eigen::Index i = 0; i < kk; ++i) S2(i, i) = r.sigma[std::size_t(i)] * r.sigma[std::size_t(i)];
  const double nb = r.Bmat.norm(), ns = S2.norm();
  // B at rounding level relative to S^2 counts as zero.
  if (ns > 0.0 && nb > 1e-12 * ns) r.score = (r.Bmat.cwiseProduct(S2)).sum() / (nb * ns);
  return r;
}

}  // namespace kpflow
