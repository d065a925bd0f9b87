// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include <doctest.h>

#include <numbers>

#include <Eigen/SVD>

#include "core/operators.hpp"
#include "core/spectral.hpp"
#include "test_util.hpp"

using namespace kpflow;
using namespace kpflow::testing;

namespace {

// Symmetric PSD matrix with prescribed eigenvalues in a random orthonormal basis.
Mat planted_psd(Rng& rng, const std::vector<double>& eig) {
  const Eigen::Index n = Eigen::Index(eig.size());
  Eigen::MatrixXd G(n, n);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  const Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(eig.data(), n);
  return Q * d.asDiagonal() * Q.transpose();
}

SvdOptions opts(std::size_t k, bool matrix_free) {
  SvdOptions o;
  o.k = k;
  o.force_matrix_free = matrix_free;
  return o;
}

}  // namespace

TEST_CASE("Lanczos recovers repeated eigenvalues with their multiplicity") {
  Rng rng(40);
  const std::vector<double> eig{5.0, 5.0, 5.0, 3.0, 2.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.0, 0.0};
  const Operator A = from_matrix(planted_psd(rng, eig), {2, 2, 3}, {2, 2, 3});
  const Operator S(A.in_shape(), A.out_shape(), A.dt(), [A](const Traj3& q) { return A.apply(q); },
                   [A](const Traj3& q) { return A.adjoint(q); }, OpFlags{true, true, false, false}, "sym");
  const SpectralSummary s = top_svd(S, opts(7, true));
  REQUIRE(s.singular_values.size() == 7);
  CHECK(s.k_converged == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(s.singular_values[i] == doctest::Approx(eig[i]).epsilon(1e-8));
}

TEST_CASE("Golub-Kahan matches a dense SVD on a rectangular operator") {
  Rng rng(41);
  const Mat M = Mat::Random(12, 18);
  // Equal trial counts give equal weights, so the weighted singular values are the Euclidean ones.
  const Shape3 in{3, 3, 2}, out{3, 2, 2};
  const Operator A = from_matrix(M, in, out, 0.5);
  const Eigen::VectorXd ref = Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues();
  const Operator mf(in, out, 0.5, [A](const Traj3& q) { return A.apply(q); },
                    [A](const Traj3& r) { return A.adjoint(r); }, OpFlags{}, "mf");
  const SpectralSummary s = top_svd(mf, opts(5, true));
  const SpectralSummary d = top_svd(A, opts(5, false));
  CHECK(d.dense);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(s.singular_values[i] == doctest::Approx(ref[Eigen::Index(i)]).epsilon(1e-8));
    CHECK(d.singular_values[i] == doctest::Approx(ref[Eigen::Index(i)]).epsilon(1e-12));
  }
  CHECK(d.singular_values.size() == 12);
  // A v_i = s_i u_i with unit singular functions in the weighted norms.
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(norm(s.right[i]) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(norm(s.left[i]) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(rel_err(A.apply(s.right[i]), s.singular_values[i] * s.left[i]) < 1e-7);
    CHECK(rel_err(A.apply(d.right[i]), d.singular_values[i] * d.left[i]) < 1e-10);
  }
}

TEST_CASE("discrete Volterra spectrum against dense and continuous oracles") {
  const std::size_t T = 200;
  const double dt = 1.0 / double(T);
  const Operator V = make_volterra({1, T, 1}, dt, VolterraConvention::kInclusive);
  const SpectralSummary s = top_svd(V, opts(5, true));
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(Eigen::Index(T), Eigen::Index(T));
  for (Eigen::Index i = 0; i < Eigen::Index(T); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) L(i, j) = dt;
  const Eigen::VectorXd dense = Eigen::JacobiSVD<Eigen::MatrixXd>(L).singularValues();
  for (std::size_t j = 0; j < 5; ++j) {
    const double cont = 2.0 / ((2.0 * double(j + 1) - 1.0) * std::numbers::pi);
    CHECK(rel_err(s.singular_values[j], dense[Eigen::Index(j)]) < 1e-8);
    CHECK(rel_err(s.singular_values[j], cont) < 0.02);
  }
}

TEST_CASE("effective rank conventions") {
  const std::vector<double> s{3.0, 1.0, 1.0, 1.0};
  // sv: 3/6, 4/6, 5/6, 1 -> 4 at 0.95; sv^2: 9/12, 10/12, 11/12, 1 -> 4 at 0.95, 2 at 0.8.
  CHECK(effective_rank(s, Energy::kSv) == 4);
  CHECK(effective_rank(s, Energy::kSv, 0.6) == 2);
  CHECK(effective_rank(s, Energy::kSvSquared, 0.8) == 2);
  CHECK(effective_rank(s, Energy::kSvSquared, 0.75) == 1);
  CHECK(effective_rank(std::vector<double>{0.0, 0.0}, Energy::kSv) == 0);
  // A single dominant mode.
  CHECK(effective_rank(std::vector<double>{100.0, 1.0, 1.0}, Energy::kSvSquared) == 1);
}

TEST_CASE("summary reports both conventions and its route") {
  Rng rng(42);
  const Operator A = from_matrix(planted_psd(rng, {4, 3, 2, 1}), {1, 4, 1}, {1, 4, 1});
  SvdOptions o = opts(2, false);
  o.convention = Energy::kSv;
  const SpectralSummary s = top_svd(A, o);
  CHECK(s.dense);
  CHECK(s.effective_rank_95 == s.effective_rank_95_sv);
  CHECK(s.effective_rank_95_sv == effective_rank(s.singular_values, Energy::kSv));
  CHECK(s.effective_rank_95_sv_squared == effective_rank(s.singular_values, Energy::kSvSquared));
  const auto j = s.to_json();
  CHECK(j["energy_convention"] == "sv");
  CHECK(j["singular_values"].size() == 4);
}

TEST_CASE("consensus K spectrum: dense route equals matrix-free route") {
  Rng rng(43);
  const RnnModel m = make_rnn(rng, 6, 2, 1.5);
  const ForwardTrace tr = m.forward(random_traj(rng, 3, 8, 2));
  const Operator avg = average(make_k(tr), AxisSet(kUnitAxis));
  const SpectralSummary d = top_svd(avg, opts(4, false)), f = top_svd(avg, opts(4, true));
  CHECK(d.dense);
  CHECK_FALSE(f.dense);
  for (std::size_t i = 0; i < 4; ++i) CHECK(rel_err(d.singular_values[i], f.singular_values[i]) < 1e-8);
}

TEST_CASE("invalid requests") {
  const Operator I = identity_op({1, 3, 1});
  CHECK(error_code_of([&] { top_svd(I, opts(0, false)); }) == ErrorCode::kInvalidArgument);
  CHECK(error_code_of([&] { rayleigh(I, Traj3(1, 3, 1)); }) == ErrorCode::kUndefined);
  Traj3 q(1, 3, 1);
  q.fill(2.0);
  CHECK(rayleigh(I, q) == doctest::Approx(1.0));
}
