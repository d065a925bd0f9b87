// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/tensor.hpp"

namespace kpflow {

struct OpFlags {
  bool self_adjoint = false;
  bool psd = false;
  bool block_diagonal_over_trials = false;
  bool approximate = false;  // e.g. direct-mode P: only linear to first order
};

/// Euclidean matrix of an operator on the flattened (row-major) domain/codomain, stored as a
/// block-diagonal list. A single block means a general dense matrix; several equal blocks
/// mean the operator is block-diagonal over trials (one block per trial, in order).
struct DenseRep {
  std::vector<Mat> blocks;
  Eigen::Index rows() const;
  Eigen::Index cols() const;
};

/// A linear map between two trajectory spaces with the weighted inner product
/// <q, r> = (dt/B) sum q r, given by apply/adjoint callbacks. Handles are cheap to copy and
/// immutable.
class Operator {
 public:
  using Fn = std::function<Traj3(const Traj3&)>;
  using FactorFn = std::function<Vec(const Traj3&)>;

  Operator() = default;
  Operator(Shape3 in, Shape3 out, double dt, Fn apply, Fn adjoint, OpFlags flags, std::string tag);

  Traj3 apply(const Traj3& q) const;
  Traj3 adjoint(const Traj3& r) const;

  Shape3 in_shape() const { return s_->in; }
  Shape3 out_shape() const { return s_->out; }
  double dt() const { return s_->dt; }
  const OpFlags& flags() const { return s_->flags; }
  const std::string& tag() const { return s_->tag; }
  bool valid() const { return bool(s_); }

  /// Optional Gram factorisation: the Euclidean matrix equals factor_scale * F^T F, where
  /// F q = factor(q). Set for K-type operators.
  bool has_factor() const { return bool(s_->factor); }
  Vec factor(const Traj3& q) const { return s_->factor(q); }
  double factor_scale() const { return s_->factor_scale; }
  Operator with_factor(FactorFn f, double scale) const;

  /// Optional materialised form; apply/adjoint are unchanged but spectral routines use it.
  bool has_dense() const { return bool(s_->dense); }
  const DenseRep& dense() const { return *s_->dense; }
  Operator with_dense(DenseRep rep) const;

  /// Weight c = dt/B of the domain and codomain inner products.
  double in_weight() const { return s_->dt / double(s_->in.B); }
  double out_weight() const { return s_->dt / double(s_->out.B); }

 private:
  struct State {
    Shape3 in, out;
    double dt = 1.0;
    Fn apply, adjoint;
    OpFlags flags;
    std::string tag;
    FactorFn factor;
    double factor_scale = 1.0;
    std::shared_ptr<const DenseRep> dense;
  };
  std::shared_ptr<const State> s_;
};

// --- generic constructors ---------------------------------------------------------------------

Operator identity_op(Shape3 shape, double dt = 1.0);
Operator scaled(const Operator& a, double c);
/// a after b: (a o b) q = a(b(q)).
Operator compose(const Operator& a, const Operator& b, std::string tag = "");
/// Operator from a Euclidean matrix on the flattened space.
Operator from_matrix(const Mat& M, Shape3 in, Shape3 out, double dt = 1.0, std::string tag = "matrix");
/// Euclidean matrix of `op` on the flattened spaces, built from basis applications.
Mat materialize(const Operator& op);

// --- KPFlow operators -------------------------------------------------------------------------

enum class PMode { kLinearized, kDirect };

/// Linearised propagator: p[b,0] = 0, p[b,t+1] = J_z(b,t) p[b,t] + q[b,t]. In direct mode the
/// action is (forward with additive s*q - baseline)/s, s = direct_scale/||q||; a non-positive
/// direct_scale selects the default 1e-5 * ||baseline z||.
Operator make_p(const ForwardTrace& tr, PMode mode = PMode::kLinearized, double direct_scale = 0.0);
/// Exact adjoint of the linearised P: a[b,T-1] = 0, a[b,t] = J_z(b,t+1)^T a[b,t+1] + q[b,t+1].
Operator make_p_adjoint(const ForwardTrace& tr);
/// K q = param_jvp(param_vjp(q)). With `blocks`, only the named parameter blocks contribute.
Operator make_k(const ForwardTrace& tr, const std::optional<std::vector<std::string>>& blocks = std::nullopt);
Operator make_pkp(const ForwardTrace& tr);
Operator make_ppstar(const ForwardTrace& tr);

/// Same trace restricted to a subset of trials (states, inputs and caches).
ForwardTrace restrict_trace(const ForwardTrace& tr, std::span<const std::size_t> trials);

struct BlockOperators {
  std::vector<std::vector<std::size_t>> partition;
  std::vector<Operator> P;          // P_i on task-i trials
  std::vector<Operator> P_adjoint;  // P_i^*
  std::vector<std::vector<Operator>> K;  // K[i][j]: task-j trials -> task-i trials
};
/// Block form over a disjoint partition of the trials. P_i acts on the restricted trace
/// (valid since P never mixes trials); K_ij = restrict_i o K o embed_j.
BlockOperators restrict_blocks(const Operator& K, const ForwardTrace& tr,
                               const std::vector<std::vector<std::size_t>>& partition);

enum class VolterraConvention { kInclusive, kStrict };
/// (V q)[b,t] = step * sum_{s <= t} q[b,s] (inclusive) or sum_{s < t} (strict). step defaults to dt.
Operator make_volterra(Shape3 shape, double dt, VolterraConvention conv, std::optional<double> step = std::nullopt);

/// Broadcast over the averaged axes, apply, average the output over them. The reduced
/// operator is materialised when its dimension is at most `max_dense`.
Operator average(const Operator& op, AxisSet axes, std::size_t max_dense = 4096);
Traj3 broadcast_axes(const Traj3& reduced, Shape3 full, AxisSet axes);
Traj3 average_axes(const Traj3& full, AxisSet axes);

// --- fundamental operator -----------------------------------------------------------------------

/// U(t|b) = J_z(b,t-1) ... J_z(b,0), U(0) = I, either as explicit products or as QR chains
/// U(t) = Q_t R_t ... R_1.
class Fundamental {
 public:
  Fundamental(const ForwardTrace& tr, bool qr_stabilized);

  std::size_t B() const { return B_; }
  std::size_t T() const { return T_; }
  std::size_t S() const { return S_; }
  bool qr_stabilized() const { return qr_; }

  /// Dense Jacobian J_z(b,t) assembled from basis applications.
  const Mat& jacobian(std::size_t b, std::size_t t) const { return J_[b * T_ + t]; }
  Mat matrix(std::size_t b, std::size_t t) const;
  Vec apply(std::size_t b, std::size_t t, const Vec& v) const;
  /// U(t|b)^{-1} v. Throws kSingular if any J_z(b,s), s < t, is singular.
  Vec solve(std::size_t b, std::size_t t, const Vec& v) const;
  /// Largest 2-norm condition number of U(t|b) over all b, t.
  double max_condition() const;

  /// (U q)[b,t] = U(t|b) q[b,t] on state-indexed trajectories.
  Operator state_op() const;
  /// (U^{-1}_slot q)[b,s] = U(s+1|b)^{-1} q[b,s] on slot-indexed trajectories (slot T-1 zero).
  Operator inverse_slot_op() const;

 private:
  void check_invertible() const;

  std::size_t B_, T_, S_;
  bool qr_;
  double dt_;
  std::vector<Mat> J_;
  std::vector<Mat> U_;  // explicit products
  std::vector<Mat> Q_, R_;  // QR chain, R_[b*T + t] is R_t (R_0 = I)
  mutable int singular_state_ = -1;  // -1 unknown, 0 ok, 1 singular
};

/// P assembled as U o V_strict o U^{-1}; a diagnostic path guarded by kappa(U) <= max_cond.
Operator make_factorized_p(const Fundamental& U, double max_cond = 1e8);

}  // namespace kpflow
