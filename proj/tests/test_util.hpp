// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/tasks.hpp"
#include "core/tensor.hpp"
#include "core/training.hpp"

namespace kpflow::testing {

// Code of the kpflow::Error thrown by f, or nullopt when nothing (or something else) was thrown.
template <typename F>
std::optional<ErrorCode> error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  } catch (...) {
  }
  return std::nullopt;
}

inline Traj3 random_traj(Rng& rng, std::size_t B, std::size_t T, std::size_t H, double dt = 1.0) {
  Traj3 q(B, T, H, dt);
  for (double& v : q.data()) v = rng.normal();
  return q;
}

inline Vec random_vec(Rng& rng, std::size_t n) {
  Vec v(Eigen::Index(n), 1);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}
inline double rel_err(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}
inline double rel_err(const Traj3& a, const Traj3& b) {
  double num = 0.0, den_a = 0.0, den_b = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    num += d * d;
    den_a += a.data()[i] * a.data()[i];
    den_b += b.data()[i] * b.data()[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(den_a), std::sqrt(den_b), 1e-300});
}

// Initialised RNN with a small random bias so that every parameter block matters.
inline RnnModel make_rnn(Rng& rng, std::size_t H, std::size_t I, double g, double alpha = 1.0) {
  RnnConfig c;
  c.hidden = H;
  c.inputs = I;
  c.alpha = alpha;
  RnnModel m(c);
  m.initialize(g, rng);
  Vec th = m.params();
  const ParamBlock& b = m.block("b");
  for (std::size_t i = 0; i < b.size(); ++i) th[Eigen::Index(b.offset + i)] = 0.1 * rng.normal();
  m.set_params(th);
  return m;
}

inline GruModel make_gru(Rng& rng, std::size_t H, std::size_t I, double g) {
  GruConfig c;
  c.hidden = H;
  c.inputs = I;
  GruModel m(c);
  m.initialize(g, rng);
  Vec th = m.params();
  for (const char* name : {"b_c", "b_r", "b_z"}) {
    const ParamBlock& b = m.block(name);
    for (std::size_t i = 0; i < b.size(); ++i) th[Eigen::Index(b.offset + i)] = 0.1 * rng.normal();
  }
  m.set_params(th);
  return m;
}

// Batch with random inputs and targets and an all-ones mask.
inline TrialBatch random_batch(Rng& rng, std::size_t B, std::size_t T, std::size_t I, std::size_t O) {
  TrialBatch batch;
  batch.inputs = random_traj(rng, B, T, I);
  batch.targets = random_traj(rng, B, T, O);
  batch.mask = Traj3(B, T, 1);
  batch.mask.fill(1.0);
  return batch;
}

// z_{t+1} = A z_t + C x_t with a fixed matrix A: constant Jacobian, closed-form everything.
class LinearModel final : public Model {
 public:
  LinearModel(Mat A, std::size_t inputs) : A_(std::move(A)), inputs_(inputs) {
    const std::size_t S = std::size_t(A_.rows());
    define_blocks({{"C", 0, S, inputs}});
    theta_ = Vec::Zero(Eigen::Index(S * inputs));
    for (std::size_t i = 0; i < std::min(S, inputs); ++i) theta_[Eigen::Index(i * inputs + i)] = 1.0;
  }
  ModelKind kind() const override { return ModelKind::kRnn; }
  std::string kind_name() const override { return "linear"; }
  std::size_t state_dim() const override { return std::size_t(A_.rows()); }
  std::size_t input_dim() const override { return inputs_; }
  std::unique_ptr<Model> clone() const override { return std::make_unique<LinearModel>(*this); }
  Vec step(const Vec& z, const Vec& x) const override { return A_ * z + block_map("C") * x; }
  void jac_block(const ForwardTrace&, std::size_t, std::size_t, ConstStepMap in, StepMap out) const override {
    out.noalias() = in * A_.transpose();
  }
  void jac_block_t(const ForwardTrace&, std::size_t, std::size_t, ConstStepMap in, StepMap out) const override {
    out.noalias() = in * A_;
  }
  Vec param_vjp(const ForwardTrace& tr, const Traj3& q) const override {
    Vec g = Vec::Zero(theta_.size());
    auto G = block_map(block("C"), g);
    for (std::size_t t = 0; t + 1 < tr.T(); ++t) G.noalias() += q.step(t).transpose() * tr.inputs.step(t);
    return g / double(tr.B());
  }
  Traj3 param_jvp(const ForwardTrace& tr, const Vec& d) const override {
    Traj3 out(tr.B(), tr.T(), state_dim(), tr.z.dt());
    const auto D = block_map(block("C"), d);
    for (std::size_t t = 0; t + 1 < tr.T(); ++t) out.step(t).noalias() = tr.inputs.step(t) * D.transpose();
    return out;
  }
  nlohmann::json hyper_json() const override { return {{"kind", "linear"}}; }

 protected:
  void init_cache(ForwardTrace&) const override {}
  void advance(ForwardTrace& tr, std::size_t t) const override {
    tr.z.step(t + 1).noalias() = tr.z.step(t) * A_.transpose();
    tr.z.step(t + 1).noalias() += tr.inputs.step(t) * block_map("C").transpose();
  }

 private:
  Mat A_;
  std::size_t inputs_;
};

}  // namespace kpflow::testing
