// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace kpflow {

namespace {

#if defined(__GLIBC__)
// Trajectory buffers are tens of megabytes and are allocated every training step. With the
// default thresholds glibc serves them with mmap and returns them on free, so half the run time
// went to page faults. Keep them on the heap instead.
[[maybe_unused]] const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

Traj3::Traj3(std::size_t B, std::size_t T, std::size_t H, double dt)
    : shape_{B, T, H}, dt_(dt), data_(B * T * H, 0.0) {
  require(B > 0 && T > 0 && H > 0, ErrorCode::kDimension, "Traj3: all dimensions must be positive");
  require(dt > 0.0 && std::isfinite(dt), ErrorCode::kInvalidArgument, "Traj3: dt must be positive");
}

StepMap Traj3::step(std::size_t t) {
  return StepMap(data_.data() + t * shape_.H, Eigen::Index(shape_.B), Eigen::Index(shape_.H),
                 Eigen::OuterStride<>(Eigen::Index(shape_.T * shape_.H)));
}

ConstStepMap Traj3::step(std::size_t t) const {
  return ConstStepMap(data_.data() + t * shape_.H, Eigen::Index(shape_.B), Eigen::Index(shape_.H),
                      Eigen::OuterStride<>(Eigen::Index(shape_.T * shape_.H)));
}

void Traj3::set_dt(double dt) {
  require(dt > 0.0 && std::isfinite(dt), ErrorCode::kInvalidArgument, "Traj3: dt must be positive");
  dt_ = dt;
}

void Traj3::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Traj3::zero_time(std::size_t t) {
  for (std::size_t b = 0; b < shape_.B; ++b) std::fill_n(slice_ptr(b, t), shape_.H, 0.0);
}

Traj3& Traj3::operator+=(const Traj3& o) {
  check_same_shape(*this, o, "Traj3::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Traj3& Traj3::operator-=(const Traj3& o) {
  check_same_shape(*this, o, "Traj3::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Traj3& Traj3::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void Traj3::axpy(double a, const Traj3& x) {
  check_same_shape(*this, x, "Traj3::axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
}

bool Traj3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void check_same_shape(const Traj3& a, const Traj3& b, const char* where) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, std::string(where) + ": shape mismatch [" + std::to_string(a.B()) + "," +
                                    std::to_string(a.T()) + "," + std::to_string(a.H()) + "] vs [" +
                                    std::to_string(b.B()) + "," + std::to_string(b.T()) + "," +
                                    std::to_string(b.H()) + "]");
  }
  if (a.dt() != b.dt()) fail(ErrorCode::kDimension, std::string(where) + ": dt mismatch");
}

double inner(const Traj3& q, const Traj3& r) {
  check_same_shape(q, r, "inner");
  double total = 0.0;
  for (std::size_t b = 0; b < q.B(); ++b) {
    double over_t = 0.0;
    for (std::size_t t = 0; t < q.T(); ++t) {
      const double* x = q.slice_ptr(b, t);
      const double* y = r.slice_ptr(b, t);
      double over_h = 0.0;
      for (std::size_t h = 0; h < q.H(); ++h) over_h += x[h] * y[h];
      over_t += over_h;
    }
    total += over_t;
  }
  return total * q.dt() / double(q.B());
}

double norm(const Traj3& q) { return std::sqrt(inner(q, q)); }

double cosine_sim(const Traj3& q, const Traj3& r) {
  check_same_shape(q, r, "cosine_sim");
  const double nq = norm(q);
  const double nr = norm(r);
  require(nq > 0.0 && nr > 0.0, ErrorCode::kUndefined, "cosine_sim: zero-norm input");
  return inner(q, r) / (nq * nr);
}

Traj3 restrict_trials(const Traj3& q, std::span<const std::size_t> trials) {
  require(!trials.empty(), ErrorCode::kInvalidArgument, "restrict_trials: empty trial list");
  std::vector<bool> seen(q.B(), false);
  Traj3 out(trials.size(), q.T(), q.H(), q.dt());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const std::size_t b = trials[i];
    require(b < q.B(), ErrorCode::kInvalidArgument, "restrict_trials: trial index out of range");
    require(!seen[b], ErrorCode::kInvalidArgument, "restrict_trials: duplicate trial index");
    seen[b] = true;
    std::copy_n(q.slice_ptr(b, 0), q.T() * q.H(), out.slice_ptr(i, 0));
  }
  return out;
}

Traj3 embed_trials(const Traj3& q_sub, std::span<const std::size_t> trials, std::size_t B_full) {
  require(trials.size() == q_sub.B(), ErrorCode::kDimension, "embed_trials: trial list length mismatch");
  Traj3 out(B_full, q_sub.T(), q_sub.H(), q_sub.dt());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    require(trials[i] < B_full, ErrorCode::kInvalidArgument, "embed_trials: trial index out of range");
    std::copy_n(q_sub.slice_ptr(i, 0), q_sub.T() * q_sub.H(), out.slice_ptr(trials[i], 0));
  }
  return out;
}

std::size_t count_to_threshold(std::span<const double> energies, double threshold) {
  double total = 0.0;
  for (double e : energies) total += e;
  if (!(total > 0.0)) return 0;
  double partial = 0.0;
  for (std::size_t k = 0; k < energies.size(); ++k) {
    partial += energies[k];
    if (partial / total >= threshold) return k + 1;
  }
  return energies.size();
}

std::size_t effdim(const Traj3& q, double threshold) {
  require(threshold > 0.0 && threshold <= 1.0, ErrorCode::kInvalidArgument, "effdim: threshold in (0, 1]");
  const Eigen::Index n = Eigen::Index(q.B() * q.T());
  const Eigen::Index H = Eigen::Index(q.H());
  Eigen::Map<const Mat> samples(q.data().data(), n, H);
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Mat centred = samples.rowwise() - mean;
  const Eigen::MatrixXd cov = (centred.transpose() * centred) / double(n);
  const double scale = std::max(1.0, mean.squaredNorm());
  if (cov.trace() <= 1e-20 * scale) return 0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  std::vector<double> ev(eig.eigenvalues().data(), eig.eigenvalues().data() + H);
  for (double& v : ev) v = std::max(v, 0.0);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return count_to_threshold(ev, threshold);
}

AxisSet::AxisSet(unsigned mask) : mask_(mask) {
  require(mask != 0, ErrorCode::kInvalidArgument, "AxisSet: must average over at least one axis");
  require((mask & ~7u) == 0, ErrorCode::kInvalidArgument, "AxisSet: unknown axis bit");
  require(mask != 7u, ErrorCode::kInvalidArgument, "AxisSet: at least one axis must remain");
}

Shape3 AxisSet::reduce(Shape3 s) const {
  return {has(kTrialAxis) ? 1 : s.B, has(kTimeAxis) ? 1 : s.T, has(kUnitAxis) ? 1 : s.H};
}

std::size_t AxisSet::averaged_count(Shape3 s) const {
  return (has(kTrialAxis) ? s.B : 1) * (has(kTimeAxis) ? s.T : 1) * (has(kUnitAxis) ? s.H : 1);
}

}  // namespace kpflow
