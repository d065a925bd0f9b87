// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <array>
#include <optional>
#include <vector>

#include "core/operators.hpp"
#include "core/spectral.hpp"
#include "core/tasks.hpp"
#include "core/training.hpp"

namespace kpflow {

/// Square matrix with missing entries stored as NaN ("null" in JSON).
using ScoreMatrix = Eigen::MatrixXd;
nlohmann::json score_matrix_json(const ScoreMatrix& m);

struct FlowCheck {
  double eta = 0.0;
  double rel_err = 0.0;
  double pred_norm = 0.0;
  double actual_norm = 0.0;
};

/// One plain gradient step on the recurrent parameters (readout held fixed) versus the
/// first-order prediction dz = -eta * PKP*(B * err). Throws kUndefined for a zero prediction.
std::vector<FlowCheck> verify_flow(const Model& model, const Readout& ro, const TrialBatch& batch,
                                   const std::vector<double>& etas);

/// Theta q = W_out PKP*(W_out^T q) on output trajectories [B, T, O].
Operator output_flow_operator(const ForwardTrace& tr, const Mat& W_out);

struct InterferenceResult {
  ScoreMatrix M_cos;                              // cosine(dz_ii, dz_ij), NaN when undefined
  std::vector<std::vector<Traj3>> dz;             // dz[i][j] = P_i K_ij P_j^*(err_j)
};
InterferenceResult interference_step(const ForwardTrace& tr, const std::vector<std::vector<std::size_t>>& partition,
                                     const Traj3& err, const Operator& K);

/// M[i][j] = R(K_ij, P_j^* err_j); NaN when the task-j adjoint vanishes. Requires equal block sizes.
ScoreMatrix rayleigh_interference(const ForwardTrace& tr, const std::vector<std::vector<std::size_t>>& partition,
                                  const Traj3& err, const Operator& K);

using Filter = std::array<std::array<double, 4>, 4>;

/// sum filter*M / sum filter over the non-null entries. Throws kUndefined if all are null.
double filtered_score(const ScoreMatrix& M, const Filter& filter);

struct AlignmentCurve {
  std::vector<double> per_iteration;
  std::vector<double> cumulative;  // running mean of per_iteration
};
AlignmentCurve cumulative_alignment(const std::vector<ScoreMatrix>& reports, const Filter& filter);

/// cosine_sim(z_i, z_j) with each task's trials ordered by stimulus angle. Throws kInvalidArgument
/// when the angle sets differ.
ScoreMatrix task_alignment_matrix(const Traj3& z, const std::vector<std::vector<std::size_t>>& partition,
                                  const std::vector<double>& angles);

struct MisdirectionResult {
  std::optional<double> score;
  Eigen::MatrixXd Bmat;
  std::vector<double> sigma;
};
/// With P = U S V^T (top k), B = S V^T K V S and score = <B, S^2>_F / (||B|| ||S^2||).
MisdirectionResult misdirection(const Operator& P, const Operator& K, std::size_t k, std::uint64_t seed = 0);

}  // namespace kpflow
