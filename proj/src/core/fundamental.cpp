// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "core/operators.hpp"

namespace kpflow {
namespace {

using DMat = Eigen::MatrixXd;

double cond2(const DMat& M) {
  Eigen::JacobiSVD<DMat> svd(M);
  const auto& s = svd.singularValues();
  const double smin = s[s.size() - 1];
  return smin > 0.0 ? s[0] / smin : std::numeric_limits<double>::infinity();
}

}  // namespace

Fundamental::Fundamental(const ForwardTrace& tr, bool qr_stabilized)
    : B_(tr.B()), T_(tr.T()), S_(tr.S()), qr_(qr_stabilized), dt_(tr.z.dt()) {
  const Eigen::Index S = Eigen::Index(S_);
  J_.assign(B_ * T_, Mat());
  // Column k of every J(b, t) from one batched application to e_k.
  Mat e = Mat::Zero(Eigen::Index(B_), S);
  Mat col(Eigen::Index(B_), S);
  for (std::size_t t = 0; t + 1 < T_; ++t) {
    for (std::size_t b = 0; b < B_; ++b) J_[b * T_ + t].resize(S, S);
    for (Eigen::Index k = 0; k < S; ++k) {
      e.setZero();
      e.col(k).setOnes();
      tr.model->jac_block(tr, t, 0, ConstStepMap(e.data(), e.rows(), S, Eigen::OuterStride<>(S)),
                          StepMap(col.data(), col.rows(), S, Eigen::OuterStride<>(S)));
      for (std::size_t b = 0; b < B_; ++b) J_[b * T_ + t].col(k) = col.row(Eigen::Index(b)).transpose();
    }
  }
  if (!qr_) {
    U_.assign(B_ * T_, Mat());
    for (std::size_t b = 0; b < B_; ++b) {
      U_[b * T_] = Mat::Identity(S, S);
      for (std::size_t t = 0; t + 1 < T_; ++t) U_[b * T_ + t + 1] = J_[b * T_ + t] * U_[b * T_ + t];
    }
  } else {
    Q_.assign(B_ * T_, Mat());
    R_.assign(B_ * T_, Mat());
    for (std::size_t b = 0; b < B_; ++b) {
      Q_[b * T_] = Mat::Identity(S, S);
      R_[b * T_] = Mat::Identity(S, S);
      for (std::size_t t = 0; t + 1 < T_; ++t) {
        const DMat M = J_[b * T_ + t] * Q_[b * T_ + t];
        Eigen::HouseholderQR<DMat> qr(M);
        DMat Q = qr.householderQ();
        DMat R = qr.matrixQR().triangularView<Eigen::Upper>();
        for (Eigen::Index i = 0; i < S; ++i) {
          if (R(i, i) < 0) {
            R.row(i) *= -1.0;
            Q.col(i) *= -1.0;
          }
        }
        Q_[b * T_ + t + 1] = Q;
        R_[b * T_ + t + 1] = R;
      }
    }
  }
}

Mat Fundamental::matrix(std::size_t b, std::size_t t) const {
  require(b < B_ && t < T_, ErrorCode::kInvalidArgument, "fundamental: index out of range");
  if (!qr_) return U_[b * T_ + t];
  Mat prod = Mat::Identity(Eigen::Index(S_), Eigen::Index(S_));
  for (std::size_t s = 1; s <= t; ++s) prod = R_[b * T_ + s] * prod;
  return Q_[b * T_ + t] * prod;
}

Vec Fundamental::apply(std::size_t b, std::size_t t, const Vec& v) const {
  require(b < B_ && t < T_, ErrorCode::kInvalidArgument, "fundamental: index out of range");
  if (!qr_) return U_[b * T_ + t] * v;
  Vec w = v;
  for (std::size_t s = 1; s <= t; ++s) w = R_[b * T_ + s] * w;
  return Q_[b * T_ + t] * w;
}

void Fundamental::check_invertible() const {
  if (singular_state_ == 0) return;
  if (singular_state_ < 0) {
    singular_state_ = 0;
    for (std::size_t b = 0; b < B_ && singular_state_ == 0; ++b)
      for (std::size_t t = 0; t + 1 < T_; ++t) {
        Eigen::JacobiSVD<DMat> svd(J_[b * T_ + t]);
        const auto& s = svd.singularValues();
        if (s[s.size() - 1] <= 1e-12 * s[0] || s[0] == 0.0) {
          singular_state_ = 1;
          break;
        }
      }
  }
  if (singular_state_ == 1) fail(ErrorCode::kSingular, "fundamental: singular Jacobian, U^{-1} unavailable");
}

Vec Fundamental::solve(std::size_t b, std::size_t t, const Vec& v) const {
  require(b < B_ && t < T_, ErrorCode::kInvalidArgument, "fundamental: index out of range");
  check_invertible();
  Vec w = v;
  if (!qr_) {
    // U(t)^{-1} = J_0^{-1} ... J_{t-1}^{-1}
    for (std::size_t s = t; s-- > 0;) w = DMat(J_[b * T_ + s]).partialPivLu().solve(w);
    return w;
  }
  w = Q_[b * T_ + t].transpose() * w;
  for (std::size_t s = t; s >= 1; --s) w = R_[b * T_ + s].triangularView<Eigen::Upper>().solve(w);
  return w;
}

double Fundamental::max_condition() const {
  double worst = 1.0;
  for (std::size_t b = 0; b < B_; ++b)
    for (std::size_t t = 0; t < T_; ++t) worst = std::max(worst, cond2(matrix(b, t)));
  return worst;
}

Operator Fundamental::state_op() const {
  auto self = std::make_shared<const Fundamental>(*this);
  const Shape3 shape{B_, T_, S_};
  auto fwd = [self](const Traj3& q) {
    Traj3 out = Traj3::zeros_like(q);
    for (std::size_t b = 0; b < q.B(); ++b)
      for (std::size_t t = 0; t < q.T(); ++t) out.at(b, t) = self->apply(b, t, Vec(q.at(b, t)));
    return out;
  };
  auto adj = [self](const Traj3& r) {
    Traj3 out = Traj3::zeros_like(r);
    for (std::size_t b = 0; b < r.B(); ++b)
      for (std::size_t t = 0; t < r.T(); ++t) out.at(b, t) = self->matrix(b, t).transpose() * r.at(b, t);
    return out;
  };
  OpFlags f;
  f.block_diagonal_over_trials = true;
  return Operator(shape, shape, dt_, fwd, adj, f, "U");
}

Operator Fundamental::inverse_slot_op() const {
  check_invertible();
  auto self = std::make_shared<const Fundamental>(*this);
  const Shape3 shape{B_, T_, S_};
  auto fwd = [self](const Traj3& q) {
    Traj3 out = Traj3::zeros_like(q);
    for (std::size_t b = 0; b < q.B(); ++b)
      for (std::size_t s = 0; s + 1 < q.T(); ++s) out.at(b, s) = self->solve(b, s + 1, Vec(q.at(b, s)));
    return out;
  };
  auto adj = [self](const Traj3& r) {
    Traj3 out = Traj3::zeros_like(r);
    for (std::size_t b = 0; b < r.B(); ++b)
      for (std::size_t s = 0; s + 1 < r.T(); ++s)
        out.at(b, s) = DMat(self->matrix(b, s + 1)).transpose().partialPivLu().solve(Vec(r.at(b, s)));
    return out;
  };
  OpFlags f;
  f.block_diagonal_over_trials = true;
  return Operator(shape, shape, dt_, fwd, adj, f, "U^-1");
}

Operator make_factorized_p(const Fundamental& U, double max_cond) {
  const double kappa = U.max_condition();
  require(kappa <= max_cond, ErrorCode::kSingular,
          "factorized P: fundamental operator too ill-conditioned (kappa = " + std::to_string(kappa) + ")");
  const Operator Us = U.state_op();
  const Operator Ui = U.inverse_slot_op();
  const Operator V = make_volterra(Us.in_shape(), Us.dt(), VolterraConvention::kStrict, 1.0);
  return compose(Us, compose(V, Ui), "UVU^-1");
}

}  // namespace kpflow
