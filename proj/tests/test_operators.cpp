// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include <doctest.h>

#include <Eigen/SVD>

#include "core/operators.hpp"
#include "test_util.hpp"

using namespace kpflow;
using namespace kpflow::testing;

namespace {

// Dense J_z(b, t) from basis actions.
Eigen::MatrixXd dense_jacobian(const ForwardTrace& tr, std::size_t b, std::size_t t) {
  const Eigen::Index S = Eigen::Index(tr.S());
  Eigen::MatrixXd J(S, S);
  for (Eigen::Index j = 0; j < S; ++j) {
    Vec e = Vec::Zero(S);
    e[j] = 1.0;
    J.col(j) = jac_z_apply(tr, b, t, e);
  }
  return J;
}

Traj3 slot_random(Rng& rng, const ForwardTrace& tr) {
  Traj3 q = random_traj(rng, tr.B(), tr.T(), tr.S(), tr.z.dt());
  q.zero_time(tr.T() - 1);
  return q;
}

}  // namespace

TEST_CASE("P solves the variational recursion") {
  Rng rng(20);
  const RnnModel m = make_rnn(rng, 5, 2, 1.4, 0.8);
  const ForwardTrace tr = m.forward(random_traj(rng, 3, 9, 2));
  const Traj3 q = slot_random(rng, tr);
  const Traj3 p = make_p(tr).apply(q);
  for (std::size_t b = 0; b < 3; ++b) {
    Vec x = Vec::Zero(5);
    CHECK(Vec(p.at(b, 0)).norm() == 0.0);
    for (std::size_t t = 0; t + 1 < 9; ++t) {
      x = dense_jacobian(tr, b, t) * x + Vec(q.at(b, t));
      CHECK(rel_err(Vec(p.at(b, t + 1)), x) < 1e-13);
    }
  }
}

TEST_CASE("P adjoint solves the backward recursion") {
  Rng rng(21);
  const GruModel m = make_gru(rng, 4, 2, 1.2);
  const ForwardTrace tr = m.forward(random_traj(rng, 2, 8, 2));
  const Traj3 r = random_traj(rng, 2, 8, 4);
  const Traj3 a = make_p_adjoint(tr).apply(r);
  for (std::size_t b = 0; b < 2; ++b) {
    Vec x = Vec::Zero(4);
    CHECK(Vec(a.at(b, 7)).norm() == 0.0);
    for (std::size_t t = 7; t-- > 0;) {
      // a[T-1] = 0, so the Jacobian term vanishes at the last slot.
      x = (t + 2 < 8 ? Vec(dense_jacobian(tr, b, t + 1).transpose() * x) : Vec::Zero(4)) + Vec(r.at(b, t + 1));
      CHECK(rel_err(Vec(a.at(b, t)), x) < 1e-13);
    }
  }
}

TEST_CASE("P and its adjoint are adjoint in the weighted inner product") {
  Rng rng(22);
  const RnnModel m = make_rnn(rng, 6, 2, 1.5);
  const ForwardTrace tr = m.forward(random_traj(rng, 3, 10, 2));
  const Operator P = make_p(tr), Ps = make_p_adjoint(tr);
  for (int k = 0; k < 100; ++k) {
    const Traj3 q = slot_random(rng, tr), r = random_traj(rng, 3, 10, 6);
    CHECK(rel_err(inner(P.apply(q), r), inner(q, Ps.apply(r))) < 1e-10);
    CHECK(rel_err(inner(P.apply(q), r), inner(q, P.adjoint(r))) < 1e-10);
  }
}

TEST_CASE("RNN K equals the closed-form trial-mixing kernel") {
  Rng rng(23);
  const double alpha = 0.7;
  const RnnModel m = make_rnn(rng, 4, 3, 1.3, alpha);
  const std::size_t B = 3, T = 6, H = 4;
  const ForwardTrace tr = m.forward(random_traj(rng, B, T, 3));
  const Traj3 q = random_traj(rng, B, T, H);
  const Traj3 Kq = make_k(tr).apply(q);
  auto s = [&](std::size_t b, std::size_t t) { return Vec(tr.z.at(b, t).array().tanh().matrix()); };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      Vec expect = Vec::Zero(Eigen::Index(H));
      if (t + 1 < T) {
        for (std::size_t b2 = 0; b2 < B; ++b2)
          for (std::size_t t2 = 0; t2 + 1 < T; ++t2) {
            const double k = s(b, t).dot(s(b2, t2)) + Vec(tr.inputs.at(b, t)).dot(Vec(tr.inputs.at(b2, t2))) + 1.0;
            expect += k * Vec(q.at(b2, t2));
          }
        expect *= alpha * alpha / double(B);
      }
      CHECK((Vec(Kq.at(b, t)) - expect).norm() <= 1e-12 * std::max(1.0, expect.norm()));
    }
}

TEST_CASE("K is positive semi-definite and self-adjoint") {
  Rng rng(24);
  const GruModel m = make_gru(rng, 5, 2, 1.5);
  const ForwardTrace tr = m.forward(random_traj(rng, 3, 7, 2));
  const Operator K = make_k(tr);
  CHECK(K.flags().psd);
  const Mat M = materialize(K);
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M).eigenvalues().maxCoeff();
  for (int k = 0; k < 100; ++k) {
    const Traj3 q = random_traj(rng, 3, 7, 5), r = random_traj(rng, 3, 7, 5);
    CHECK(inner(K.apply(q), q) >= -1e-10 * lmax);
    CHECK(rel_err(inner(K.apply(q), r), inner(q, K.apply(r))) < 1e-10);
  }
  // Gram factorisation: Euclidean matrix = factor_scale * F^T F.
  const Traj3 q = random_traj(rng, 3, 7, 5);
  const Vec f = K.factor(q);
  double qMq = 0.0;
  const Vec Mq = M * Eigen::Map<const Vec>(q.data().data(), Eigen::Index(q.size()));
  for (Eigen::Index i = 0; i < Mq.size(); ++i) qMq += Mq[i] * q.data()[std::size_t(i)];
  CHECK(rel_err(qMq, K.factor_scale() * f.squaredNorm()) < 1e-10);
}

TEST_CASE("block-restricted K reassembles the full K") {
  Rng rng(25);
  const RnnModel m = make_rnn(rng, 4, 2, 1.0);
  const ForwardTrace tr = m.forward(random_traj(rng, 4, 5, 2));
  const Operator K = make_k(tr);
  const std::vector<std::vector<std::size_t>> part{{0, 2}, {3, 1}};
  const BlockOperators blk = restrict_blocks(K, tr, part);
  const Traj3 q = random_traj(rng, 4, 5, 4);
  const Traj3 full = K.apply(q);
  for (std::size_t i = 0; i < 2; ++i) {
    Traj3 sum(2, 5, 4);
    for (std::size_t j = 0; j < 2; ++j) sum += blk.K[i][j].apply(restrict_trials(q, part[j]));
    CHECK(rel_err(sum, restrict_trials(full, part[i])) < 1e-12);
    // P_i acts on the restricted trace.
    const Traj3 qi = restrict_trials(q, part[i]);
    CHECK(rel_err(blk.P[i].apply(qi), restrict_trials(make_p(tr).apply(q), part[i])) < 1e-12);
  }
  CHECK(error_code_of([&] { restrict_blocks(K, tr, {{0, 1}, {1, 2, 3}}); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("direct-mode P agrees with the linearisation to first order") {
  Rng rng(26);
  const RnnModel m = make_rnn(rng, 6, 2, 1.2);
  const ForwardTrace tr = m.forward(random_traj(rng, 2, 12, 2));
  const Traj3 q = slot_random(rng, tr);
  CHECK(rel_err(make_p(tr, PMode::kDirect).apply(q), make_p(tr).apply(q)) < 1e-4);
}

TEST_CASE("P factorises through the fundamental and Volterra operators") {
  Rng rng(27);
  const RnnModel m = make_rnn(rng, 8, 2, 0.5, 0.2);
  const ForwardTrace tr = m.forward(random_traj(rng, 2, 15, 2));
  for (bool qr : {false, true}) {
    const Fundamental U(tr, qr);
    const Operator Pf = make_factorized_p(U);
    for (int k = 0; k < 5; ++k) {
      const Traj3 q = slot_random(rng, tr);
      CHECK(rel_err(Pf.apply(q), make_p(tr).apply(q)) < 1e-6);
    }
  }
}

TEST_CASE("fundamental operator of a constant diagonal Jacobian") {
  const std::vector<double> lambdas{0.3, -0.2, -1.1};
  Mat A = Mat::Zero(3, 3);
  for (int i = 0; i < 3; ++i) A(i, i) = std::exp(lambdas[std::size_t(i)]);
  const LinearModel m(A, 3);
  Rng rng(28);
  const ForwardTrace tr = m.forward(random_traj(rng, 2, 12, 3));
  for (bool qr : {false, true}) {
    const Fundamental U(tr, qr);
    for (std::size_t t = 0; t < 12; ++t) {
      const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(U.matrix(1, t)).singularValues();
      for (int j = 0; j < 3; ++j)
        CHECK(sv[j] == doctest::Approx(std::exp(lambdas[std::size_t(j)] * double(t))).epsilon(1e-12));
    }
  }
}

TEST_CASE("singular Jacobians make U^{-1} fail loudly") {
  Mat A = Mat::Identity(2, 2);
  A(1, 1) = 0.0;
  const LinearModel m(A, 2);
  Rng rng(29);
  const ForwardTrace tr = m.forward(random_traj(rng, 1, 5, 2));
  const Fundamental U(tr, false);
  CHECK(error_code_of([&] { U.solve(0, 3, Vec::Ones(2)); }) == ErrorCode::kSingular);
}

TEST_CASE("Volterra operator is a running sum") {
  Rng rng(30);
  const Traj3 q = random_traj(rng, 2, 6, 3, 0.1);
  const Operator Vi = make_volterra(q.shape(), 0.1, VolterraConvention::kInclusive);
  const Operator Vs = make_volterra(q.shape(), 0.1, VolterraConvention::kStrict);
  const Traj3 yi = Vi.apply(q), ys = Vs.apply(q);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 3; ++h) {
      double acc = 0.0;
      for (std::size_t t = 0; t < 6; ++t) {
        CHECK(ys(b, t, h) == doctest::Approx(0.1 * acc).epsilon(1e-14));
        acc += q(b, t, h);
        CHECK(yi(b, t, h) == doctest::Approx(0.1 * acc).epsilon(1e-14));
      }
    }
  const Traj3 r = random_traj(rng, 2, 6, 3, 0.1);
  CHECK(rel_err(inner(Vi.apply(q), r), inner(q, Vi.adjoint(r))) < 1e-12);
}

TEST_CASE("consensus averaging equals the explicit broadcast-apply-average matrix") {
  Rng rng(31);
  const RnnModel m = make_rnn(rng, 3, 2, 1.5);
  const ForwardTrace tr = m.forward(random_traj(rng, 2, 4, 2));
  const Operator K = make_k(tr);
  const Mat M = materialize(K);
  const std::size_t B = 2, T = 4, H = 3;
  auto idx = [&](std::size_t b, std::size_t t, std::size_t h) { return Eigen::Index((b * T + t) * H + h); };
  for (unsigned mask : {unsigned(kUnitAxis), unsigned(kTrialAxis | kTimeAxis), unsigned(kTimeAxis)}) {
    const AxisSet ax(mask);
    const Shape3 red = ax.reduce({B, T, H});
    Mat expect = Mat::Zero(Eigen::Index(red.size()), Eigen::Index(red.size()));
    auto rix = [&](std::size_t b, std::size_t t, std::size_t h) {
      return Eigen::Index(((ax.has(kTrialAxis) ? 0 : b) * red.T + (ax.has(kTimeAxis) ? 0 : t)) * red.H +
                          (ax.has(kUnitAxis) ? 0 : h));
    };
    const double n = double(ax.averaged_count({B, T, H}));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t b2 = 0; b2 < B; ++b2)
            for (std::size_t t2 = 0; t2 < T; ++t2)
              for (std::size_t h2 = 0; h2 < H; ++h2)
                expect(rix(b, t, h), rix(b2, t2, h2)) += M(idx(b, t, h), idx(b2, t2, h2)) / n;
    const Operator avg = average(K, ax);
    CHECK(avg.has_dense());
    const Mat got = materialize(avg);
    CHECK((got - expect).norm() <= 1e-12 * expect.norm());
  }
}

TEST_CASE("generic operator algebra") {
  Rng rng(32);
  const Mat A = Mat::Random(6, 6);
  const Operator op = from_matrix(A, {1, 2, 3}, {1, 2, 3});
  CHECK((materialize(op) - A).norm() < 1e-14);
  CHECK((materialize(scaled(op, 2.5)) - 2.5 * A).norm() < 1e-13);
  CHECK((materialize(compose(op, op)) - A * A).norm() < 1e-12);
  CHECK((materialize(identity_op({1, 2, 3})) - Mat::Identity(6, 6)).norm() == 0.0);
  const Traj3 wrong(2, 2, 3);
  CHECK(error_code_of([&] { op.apply(wrong); }) == ErrorCode::kDimension);
}
