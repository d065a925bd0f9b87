// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "core/error.hpp"

namespace kpflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;
// All trials at one time step: a B x H row-major view with row stride T*H.
using StepMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
using ConstStepMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

// tanh and the logistic function through the vectorised exp. Absolute error stays below 1e-15,
// about eight times faster than the scalar libm calls on long arrays.
template <class D>
auto exp_tanh(const Eigen::ArrayBase<D>& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}
template <class D>
auto exp_logistic(const Eigen::ArrayBase<D>& x) {
  return 1.0 / (1.0 + (-x).exp());
}

struct Shape3 {
  std::size_t B = 0;
  std::size_t T = 0;
  std::size_t H = 0;

  std::size_t size() const { return B * T * H; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// A per-trial trajectory: a dense [B, T, H] tensor (trial, time, unit) with time step dt.
class Traj3 {
 public:
  Traj3() = default;
  Traj3(std::size_t B, std::size_t T, std::size_t H, double dt = 1.0);
  Traj3(Shape3 shape, double dt = 1.0) : Traj3(shape.B, shape.T, shape.H, dt) {}

  static Traj3 zeros_like(const Traj3& other) { return Traj3(other.shape(), other.dt()); }

  std::size_t B() const { return shape_.B; }
  std::size_t T() const { return shape_.T; }
  std::size_t H() const { return shape_.H; }
  Shape3 shape() const { return shape_; }
  double dt() const { return dt_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t b, std::size_t t, std::size_t h) { return data_[index(b, t, h)]; }
  double operator()(std::size_t b, std::size_t t, std::size_t h) const { return data_[index(b, t, h)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* slice_ptr(std::size_t b, std::size_t t) { return data_.data() + index(b, t, 0); }
  const double* slice_ptr(std::size_t b, std::size_t t) const { return data_.data() + index(b, t, 0); }

  VecMap at(std::size_t b, std::size_t t) { return VecMap(slice_ptr(b, t), Eigen::Index(shape_.H)); }
  ConstVecMap at(std::size_t b, std::size_t t) const {
    return ConstVecMap(slice_ptr(b, t), Eigen::Index(shape_.H));
  }
  StepMap step(std::size_t t);
  ConstStepMap step(std::size_t t) const;
  VecMap flat() { return VecMap(data_.data(), Eigen::Index(data_.size())); }
  ConstVecMap flat() const { return ConstVecMap(data_.data(), Eigen::Index(data_.size())); }

  void set_dt(double dt);
  void fill(double v);
  void zero_time(std::size_t t);

  Traj3& operator+=(const Traj3& o);
  Traj3& operator-=(const Traj3& o);
  Traj3& operator*=(double s);
  void axpy(double a, const Traj3& x);  // this += a * x

  friend Traj3 operator+(Traj3 a, const Traj3& b) { return a += b; }
  friend Traj3 operator-(Traj3 a, const Traj3& b) { return a -= b; }
  friend Traj3 operator*(double s, Traj3 a) { return a *= s; }

  bool all_finite() const;

 private:
  std::size_t index(std::size_t b, std::size_t t, std::size_t h) const {
    return (b * shape_.T + t) * shape_.H + h;
  }

  Shape3 shape_;
  double dt_ = 1.0;
  // 64-byte aligned so vectorised reductions split identically wherever the buffer lands.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

void check_same_shape(const Traj3& a, const Traj3& b, const char* where);

/// (1/B) sum_b sum_t sum_h q r dt, accumulated h innermost, then t, then b.
double inner(const Traj3& q, const Traj3& r);
double norm(const Traj3& q);
/// Throws ErrorCode::kUndefined when either argument has zero norm.
double cosine_sim(const Traj3& q, const Traj3& r);

/// Sub-tensor over the listed trials, in the listed order.
Traj3 restrict_trials(const Traj3& q, std::span<const std::size_t> trials);
/// Inverse of restrict_trials: zero-pads a trial subset back into a batch of B_full trials.
Traj3 embed_trials(const Traj3& q_sub, std::span<const std::size_t> trials, std::size_t B_full);

/// Number of mean-centred principal components of the (B*T) x H sample matrix needed to reach
/// `threshold` of the total variance. Zero for a constant trajectory.
std::size_t effdim(const Traj3& q, double threshold = 0.95);

/// Smallest k with sum_{i<k} e_i / sum e_i >= threshold, for e sorted descending; 0 if sum is 0.
std::size_t count_to_threshold(std::span<const double> energies, double threshold);

enum Axis : unsigned { kTrialAxis = 1u, kTimeAxis = 2u, kUnitAxis = 4u };

/// Axes averaged over in a consensus reduction. Non-empty, and at least one axis is kept.
class AxisSet {
 public:
  explicit AxisSet(unsigned mask);
  unsigned mask() const { return mask_; }
  bool has(Axis a) const { return (mask_ & a) != 0; }
  Shape3 reduce(Shape3 s) const;
  std::size_t averaged_count(Shape3 s) const;

 private:
  unsigned mask_;
};

}  // namespace kpflow
