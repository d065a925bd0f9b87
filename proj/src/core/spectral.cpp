// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "core/rng.hpp"

namespace kpflow {

std::string energy_name(Energy e) { return e == Energy::kSv ? "sv" : "sv_squared"; }

std::size_t effective_rank(std::span<const double> values, Energy convention, double threshold) {
  std::vector<double> e(values.begin(), values.end());
  for (double& v : e) {
    v = std::max(v, 0.0);
    if (convention == Energy::kSvSquared) v *= v;
  }
  return count_to_threshold(e, threshold);
}

nlohmann::json SpectralSummary::to_json() const {
  return {{"singular_values", singular_values},
          {"energy_convention", energy_name(energy_convention)},
          {"effective_rank_95", effective_rank_95},
          {"effective_rank_95_sv", effective_rank_95_sv},
          {"effective_rank_95_sv_squared", effective_rank_95_sv_squared},
          {"k_requested", k_requested},
          {"k_converged", k_converged},
          {"residual_tol", residual_tol},
          {"dense", dense},
          {"iterations", iterations}};
}

namespace {

using DMat = Eigen::MatrixXd;

void finish(SpectralSummary& s) {
  s.effective_rank_95_sv = effective_rank(s.singular_values, Energy::kSv);
  s.effective_rank_95_sv_squared = effective_rank(s.singular_values, Energy::kSvSquared);
  s.effective_rank_95 = s.energy_convention == Energy::kSv ? s.effective_rank_95_sv : s.effective_rank_95_sv_squared;
}

Traj3 unflatten(const Vec& v, Shape3 shape, double dt) {
  Traj3 t(shape, dt);
  std::copy(v.data(), v.data() + v.size(), t.data().begin());
  return t;
}

SpectralSummary dense_svd(const Operator& op, const SvdOptions& o) {
  struct Entry {
    double value;
    std::size_t block;
    Eigen::Index col;
    double sign;
  };
  const auto& blocks = op.dense().blocks;
  const double wscale = std::sqrt(op.out_weight() / op.in_weight());
  std::vector<DMat> lefts(blocks.size()), rights(blocks.size());
  std::vector<Entry> all;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const DMat M = blocks[bi];
    if (op.flags().self_adjoint && M.rows() == M.cols()) {
      Eigen::SelfAdjointEigenSolver<DMat> eig(M, o.want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
      const auto& ev = eig.eigenvalues();
      for (Eigen::Index i = 0; i < ev.size(); ++i) all.push_back({std::abs(ev[i]), bi, i, ev[i] < 0 ? -1.0 : 1.0});
      if (o.want_vectors) rights[bi] = eig.eigenvectors();
    } else {
      Eigen::BDCSVD<DMat> svd(M, o.want_vectors ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0);
      const auto& sv = svd.singularValues();
      for (Eigen::Index i = 0; i < sv.size(); ++i) all.push_back({sv[i], bi, i, 1.0});
      if (o.want_vectors) {
        lefts[bi] = svd.matrixU();
        rights[bi] = svd.matrixV();
      }
    }
  }
  // Stable order: by value, ties by block then column.
  std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.value > b.value; });
  SpectralSummary s;
  s.dense = true;
  s.energy_convention = o.convention;
  s.k_requested = o.k;
  s.residual_tol = o.tol;
  for (const auto& e : all) s.singular_values.push_back(wscale * e.value);
  s.k_converged = std::min(o.k, all.size());
  if (o.want_vectors) {
    std::vector<Eigen::Index> row_off(blocks.size() + 1, 0), col_off(blocks.size() + 1, 0);
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      row_off[bi + 1] = row_off[bi] + blocks[bi].rows();
      col_off[bi + 1] = col_off[bi] + blocks[bi].cols();
    }
    const double cin = std::sqrt(op.in_weight()), cout = std::sqrt(op.out_weight());
    for (std::size_t i = 0; i < s.k_converged; ++i) {
      const Entry& e = all[i];
      Vec r = Vec::Zero(Eigen::Index(op.in_shape().size()));
      Vec l = Vec::Zero(Eigen::Index(op.out_shape().size()));
      r.segment(col_off[e.block], blocks[e.block].cols()) = rights[e.block].col(e.col);
      if (lefts[e.block].size() > 0)
        l.segment(row_off[e.block], blocks[e.block].rows()) = lefts[e.block].col(e.col);
      else
        l.segment(row_off[e.block], blocks[e.block].rows()) = e.sign * rights[e.block].col(e.col);
      s.right.push_back(unflatten(r / cin, op.in_shape(), op.dt()));
      s.left.push_back(unflatten(l / cout, op.out_shape(), op.dt()));
    }
  }
  finish(s);
  return s;
}

void orthogonalize(Traj3& w, const std::vector<Traj3>& basis) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& v : basis) w.axpy(-inner(w, v), v);
}

// Random unit vector orthogonal to `basis`; false when the space is exhausted.
bool random_orthogonal(Traj3& w, const std::vector<Traj3>& basis, Rng& rng) {
  for (int attempt = 0; attempt < 3; ++attempt) {
    for (double& x : w.data()) x = rng.normal();
    const double n0 = norm(w);
    orthogonalize(w, basis);
    const double n1 = norm(w);
    if (n1 > 1e-8 * n0) {
      w *= 1.0 / n1;
      return true;
    }
  }
  return false;
}

struct RitzPair {
  double value;  // signed eigenvalue
  Traj3 vector;
};

// One Lanczos run in the orthogonal complement of `locked`. Returns the converged leading Ritz
// pairs, or all of them when the complement was exhausted.
std::vector<RitzPair> lanczos_run(const Operator& op, const SvdOptions& o, const std::vector<Traj3>& locked, Rng& rng,
                                  std::size_t& iterations, bool& exhausted) {
  const Shape3 shape = op.in_shape();
  const std::size_t n = shape.size() - std::min(shape.size(), locked.size());
  const std::size_t mmax = std::min<std::size_t>(n, std::max(o.max_iter, o.k));
  exhausted = false;
  std::vector<RitzPair> out;
  if (n == 0) {
    exhausted = true;
    return out;
  }
  std::vector<Traj3> V;
  std::vector<double> alpha, beta;
  Traj3 v(shape, op.dt());
  std::vector<Traj3> guard = locked;
  if (!random_orthogonal(v, guard, rng)) {
    exhausted = true;
    return out;
  }
  V.push_back(v);
  DMat Y;
  Vec theta;
  std::vector<Eigen::Index> order;
  std::size_t conv = 0;
  for (std::size_t j = 0; j < mmax; ++j) {
    Traj3 w = op.apply(V[j]);
    const double a = inner(w, V[j]);
    alpha.push_back(a);
    orthogonalize(w, locked);
    orthogonalize(w, V);
    double b = norm(w);
    const std::size_t m = j + 1;
    DMat Tm = DMat::Zero(Eigen::Index(m), Eigen::Index(m));
    for (std::size_t i = 0; i < m; ++i) {
      Tm(Eigen::Index(i), Eigen::Index(i)) = alpha[i];
      if (i + 1 < m) Tm(Eigen::Index(i), Eigen::Index(i + 1)) = Tm(Eigen::Index(i + 1), Eigen::Index(i)) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<DMat> eig(Tm);
    theta = eig.eigenvalues();
    Y = eig.eigenvectors();
    order.resize(std::size_t(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return std::abs(theta[x]) > std::abs(theta[y]); });
    const double scale = std::abs(theta[order[0]]);
    const bool breakdown = b <= 1e-13 * std::max(scale, 1e-300);
    conv = 0;
    for (std::size_t i = 0; i < std::min(o.k, m); ++i) {
      const double res = (breakdown ? 0.0 : b) * std::abs(Y(Eigen::Index(m - 1), order[i]));
      if (res <= o.tol * std::max(scale, 1e-300)) ++conv;
      else break;
    }
    ++iterations;
    if (conv >= std::min(o.k, n) || m == mmax) break;
    if (breakdown) {
      Traj3 r(shape, op.dt());
      guard = locked;
      guard.insert(guard.end(), V.begin(), V.end());
      if (!random_orthogonal(r, guard, rng)) {
        exhausted = true;
        conv = m;
        break;
      }
      beta.push_back(0.0);
      V.push_back(std::move(r));
    } else {
      beta.push_back(b);
      w *= 1.0 / b;
      V.push_back(std::move(w));
    }
  }
  if (V.size() >= n) {
    exhausted = true;
    conv = std::size_t(theta.size());
  }
  for (std::size_t i = 0; i < conv; ++i) {
    Traj3 f(shape, op.dt());
    for (std::size_t r = 0; r < std::size_t(theta.size()); ++r) f.axpy(Y(Eigen::Index(r), order[i]), V[r]);
    out.push_back({theta[order[i]], std::move(f)});
  }
  return out;
}

// A single Krylov sequence sees one direction per eigenspace, so repeated eigenvalues (common:
// the RNN kernel is block diagonal over units) are found by locking converged pairs and
// restarting in their complement until the next run no longer beats the current k-th value.
SpectralSummary lanczos_symmetric(const Operator& op, const SvdOptions& o) {
  Rng rng(o.seed);
  SpectralSummary s;
  s.energy_convention = o.convention;
  s.k_requested = o.k;
  s.residual_tol = o.tol;
  std::vector<RitzPair> found;
  std::vector<Traj3> locked;
  bool complete = false;
  for (std::size_t run = 0; run <= o.k; ++run) {
    bool exhausted = false;
    auto pairs = lanczos_run(op, o, locked, rng, s.iterations, exhausted);
    if (pairs.empty()) {
      complete = exhausted;
      break;
    }
    const double top = std::abs(pairs.front().value);
    const bool beats = found.size() < o.k ||
                       top > std::abs(found[o.k - 1].value) * (1.0 + 10.0 * o.tol);
    for (auto& p : pairs) {
      locked.push_back(p.vector);
      found.push_back(std::move(p));
    }
    std::stable_sort(found.begin(), found.end(),
                     [](const RitzPair& a, const RitzPair& b) { return std::abs(a.value) > std::abs(b.value); });
    if (!beats || exhausted) {
      complete = true;
      break;
    }
  }
  const std::size_t kk = std::min(o.k, found.size());
  s.k_converged = complete ? kk : 0;
  if (!complete) {
    // Without a confirming run only the leading block of the first run is trustworthy.
    s.k_converged = std::min(kk, std::size_t(1));
  }
  for (std::size_t i = 0; i < kk; ++i) s.singular_values.push_back(std::abs(found[i].value));
  if (o.want_vectors) {
    for (std::size_t i = 0; i < kk; ++i) {
      Traj3 l = found[i].vector;
      if (found[i].value < 0) l *= -1.0;
      s.right.push_back(found[i].vector);
      s.left.push_back(std::move(l));
    }
  }
  finish(s);
  return s;
}

SpectralSummary golub_kahan(const Operator& op, const SvdOptions& o) {
  const Shape3 in = op.in_shape(), out = op.out_shape();
  const std::size_t n = std::min(in.size(), out.size());
  const std::size_t mmax = std::min<std::size_t>(n, std::max(o.max_iter, o.k));
  Rng rng(o.seed);
  std::vector<Traj3> V, U;
  std::vector<double> alpha, beta;
  Traj3 v(in, op.dt());
  random_orthogonal(v, V, rng);
  V.push_back(v);
  SpectralSummary s;
  s.energy_convention = o.convention;
  s.k_requested = o.k;
  s.residual_tol = o.tol;
  DMat X, Yv;
  Vec sig;
  for (std::size_t j = 0; j < mmax; ++j) {
    Traj3 u = op.apply(V[j]);
    if (j > 0) u.axpy(-beta[j - 1], U[j - 1]);
    orthogonalize(u, U);
    double a = norm(u);
    if (a <= 1e-300 || !std::isfinite(a)) {
      a = 0.0;
      if (!random_orthogonal(u, U, rng)) break;
    } else {
      u *= 1.0 / a;
    }
    alpha.push_back(a);
    U.push_back(u);
    Traj3 w = op.adjoint(U[j]);
    w.axpy(-a, V[j]);
    orthogonalize(w, V);
    double b = norm(w);
    const std::size_t m = j + 1;
    DMat Bm = DMat::Zero(Eigen::Index(m), Eigen::Index(m));
    for (std::size_t i = 0; i < m; ++i) {
      Bm(Eigen::Index(i), Eigen::Index(i)) = alpha[i];
      if (i + 1 < m) Bm(Eigen::Index(i), Eigen::Index(i + 1)) = beta[i];
    }
    Eigen::JacobiSVD<DMat> svd(Bm, Eigen::ComputeFullU | Eigen::ComputeFullV);
    sig = svd.singularValues();
    X = svd.matrixU();
    Yv = svd.matrixV();
    const double scale = std::max(sig[0], 1e-300);
    const bool breakdown = b <= 1e-13 * scale;
    std::size_t conv = 0;
    for (std::size_t i = 0; i < std::min(o.k, m); ++i) {
      const double res = (breakdown ? 0.0 : b) * std::abs(X(Eigen::Index(m - 1), Eigen::Index(i)));
      if (res <= o.tol * scale) ++conv;
      else break;
    }
    s.iterations = m;
    s.k_converged = conv;
    if (conv >= std::min(o.k, n) || m == mmax) break;
    if (breakdown) {
      Traj3 r(in, op.dt());
      if (!random_orthogonal(r, V, rng)) {
        s.k_converged = std::min(o.k, m);
        break;
      }
      beta.push_back(0.0);
      V.push_back(std::move(r));
    } else {
      beta.push_back(b);
      w *= 1.0 / b;
      V.push_back(std::move(w));
    }
  }
  const std::size_t m = std::size_t(sig.size());
  const std::size_t kk = std::min(o.k, m);
  for (std::size_t i = 0; i < kk; ++i) s.singular_values.push_back(sig[Eigen::Index(i)]);
  if (o.want_vectors) {
    for (std::size_t i = 0; i < kk; ++i) {
      Traj3 r(in, op.dt()), l(out, op.dt());
      for (std::size_t q = 0; q < m; ++q) {
        r.axpy(Yv(Eigen::Index(q), Eigen::Index(i)), V[q]);
        l.axpy(X(Eigen::Index(q), Eigen::Index(i)), U[q]);
      }
      s.right.push_back(std::move(r));
      s.left.push_back(std::move(l));
    }
  }
  finish(s);
  return s;
}

}  // namespace

SpectralSummary top_svd(const Operator& op, const SvdOptions& opts) {
  require(opts.k >= 1, ErrorCode::kInvalidArgument, "top_svd: k must be >= 1");
  require(opts.tol > 0.0, ErrorCode::kInvalidArgument, "top_svd: tol must be positive");
  if (op.has_dense() && !opts.force_matrix_free) return dense_svd(op, opts);
  if (op.flags().self_adjoint && op.in_shape() == op.out_shape()) return lanczos_symmetric(op, opts);
  if (op.in_shape().size() > op.out_shape().size()) {
    // Bidiagonalise the adjoint so the Krylov basis lives in the smaller space and terminates
    // exactly; singular values are shared and the singular functions swap roles.
    const Operator adj(op.out_shape(), op.in_shape(), op.dt(), [op](const Traj3& r) { return op.adjoint(r); },
                       [op](const Traj3& q) { return op.apply(q); }, OpFlags{}, op.tag() + "^*");
    SpectralSummary s = golub_kahan(adj, opts);
    std::swap(s.left, s.right);
    return s;
  }
  return golub_kahan(op, opts);
}

double rayleigh(const Operator& op, const Traj3& q) {
  require(op.in_shape() == op.out_shape(), ErrorCode::kDimension, "rayleigh: operator must be square");
  const double qq = inner(q, q);
  require(qq > 0.0, ErrorCode::kUndefined, "rayleigh: zero input");
  return inner(op.apply(q), q) / qq;
}

}  // namespace kpflow
