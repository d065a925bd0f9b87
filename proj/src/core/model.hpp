// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace kpflow {

enum class ModelKind { kRnn, kGru, kHh };
enum class Activation { kTanh, kRelu };

/// One named parameter block inside the flat parameter vector. Blocks are stored row-major
/// (rows x cols), back to back, in the order returned by Model::blocks().
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

class Model;

/// States produced by one forward pass plus the per-step values the Jacobian actions read.
///
/// Indexing convention: z[b, t] is the state at time t (t = 0..T-1, z[b, 0] = z0). The
/// transition t -> t+1 is called "slot t"; caches and perturbation tensors are indexed by slot,
/// so their entries at t = T-1 are unused and kept at zero.
struct ForwardTrace {
  std::shared_ptr<const Model> model;
  Traj3 inputs;               // [B, T, I]
  Traj3 z;                    // [B, T, S]
  std::vector<Traj3> cache;   // model-specific, see each model's documentation
  std::size_t clamp_events = 0;

  std::size_t B() const { return z.B(); }
  std::size_t T() const { return z.T(); }
  std::size_t S() const { return z.H(); }
};

/// A discrete-time recurrent model z_{t+1} = F(z_t, x_t; theta) with hand-derived
/// Jacobian actions. Jacobians with respect to theta are never materialised.
class Model {
 public:
  virtual ~Model() = default;

  virtual ModelKind kind() const = 0;
  virtual std::string kind_name() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::unique_ptr<Model> clone() const = 0;

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t num_params() const { return std::size_t(theta_.size()); }
  const Vec& params() const { return theta_; }
  void set_params(const Vec& theta);
  const ParamBlock& block(const std::string& name) const;

  /// Trainable models support training; HH is evaluation-only.
  virtual bool trainable() const { return true; }
  virtual Vec default_initial_state() const { return Vec::Zero(Eigen::Index(state_dim())); }

  /// Runs the model over `inputs` ([B, T, I]) from z0. Throws kDivergence naming (b, t) on a
  /// non-finite state.
  ForwardTrace forward(const Traj3& inputs, const Vec& z0) const;
  ForwardTrace forward(const Traj3& inputs) const { return forward(inputs, default_initial_state()); }

  /// Forward pass with `scale * pert[b, t]` added to the output of every transition slot t.
  Traj3 forward_perturbed(const Traj3& inputs, const Vec& z0, const Traj3& pert, double scale) const;

  /// One transition for a single trial, without caching: F(z, x; theta).
  virtual Vec step(const Vec& z, const Vec& x) const = 0;

  /// out = J_z(b, t) in, for trials b0 .. b0+rows-1 at slot t (rows of in/out are trials).
  virtual void jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                         StepMap out) const = 0;
  /// out = J_z(b, t)^T in, same layout as jac_block.
  virtual void jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                           StepMap out) const = 0;

  /// theta_q = (1/B) sum_b sum_{t < T-1} J_theta(b, t)^T q[b, t]. q[:, T-1] is ignored.
  virtual Vec param_vjp(const ForwardTrace& tr, const Traj3& q) const = 0;
  /// out[b, t] = J_theta(b, t) dtheta for t < T-1; out[:, T-1] = 0.
  virtual Traj3 param_jvp(const ForwardTrace& tr, const Vec& dtheta) const = 0;

  virtual nlohmann::json hyper_json() const = 0;

 protected:
  void define_blocks(std::vector<ParamBlock> blocks);
  Eigen::Map<Mat> block_map(const std::string& name);
  Eigen::Map<const Mat> block_map(const std::string& name) const;
  static Eigen::Map<const Mat> block_map(const ParamBlock& blk, const Vec& v);
  static Eigen::Map<Mat> block_map(const ParamBlock& blk, Vec& v);

  /// Allocates model-specific caches for a trace of shape [B, T].
  virtual void init_cache(ForwardTrace& tr) const = 0;
  /// Computes z[:, t+1] from z[:, t] for all trials and fills the slot-t caches.
  virtual void advance(ForwardTrace& tr, std::size_t t) const = 0;

  Vec theta_;

 private:
  ForwardTrace run(const Traj3& inputs, const Vec& z0, const Traj3* pert, double scale) const;

  std::vector<ParamBlock> blocks_;
};

/// J_z(b, t) v for a single trial and slot.
Vec jac_z_apply(const ForwardTrace& tr, std::size_t b, std::size_t t, const Vec& v);
Vec jac_z_tapply(const ForwardTrace& tr, std::size_t b, std::size_t t, const Vec& v);
Vec param_vjp(const ForwardTrace& tr, const Traj3& q);
Traj3 param_jvp(const ForwardTrace& tr, const Vec& dtheta);

/// y[b, t] = W_out z[b, t] + b_out.
Traj3 readout(const Traj3& z, const Mat& W_out, const Vec& b_out);

// ---------------------------------------------------------------------------------------------
// Concrete models

struct RnnConfig {
  std::size_t hidden = 64;
  std::size_t inputs = 2;
  double alpha = 1.0;
  Activation activation = Activation::kTanh;
};

/// Leaky Euler RNN: z_{t+1} = (1 - alpha) z_t + alpha (W s(z_t) + W_in x_t + b).
/// Parameter order: W [H,H], W_in [H,I], b [H]. Caches: {s(z_t), s'(z_t)} per slot.
/// ReLU uses s'(0) = 0.
class RnnModel final : public Model {
 public:
  explicit RnnModel(const RnnConfig& cfg);
  /// W ~ N(0, g^2/H), W_in ~ N(0, 1/I), b = 0.
  void initialize(double g, Rng& rng);

  ModelKind kind() const override { return ModelKind::kRnn; }
  std::string kind_name() const override { return "rnn"; }
  std::size_t state_dim() const override { return cfg_.hidden; }
  std::size_t input_dim() const override { return cfg_.inputs; }
  std::unique_ptr<Model> clone() const override { return std::make_unique<RnnModel>(*this); }
  const RnnConfig& config() const { return cfg_; }

  Vec step(const Vec& z, const Vec& x) const override;
  void jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                 StepMap out) const override;
  void jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                   StepMap out) const override;
  Vec param_vjp(const ForwardTrace& tr, const Traj3& q) const override;
  Traj3 param_jvp(const ForwardTrace& tr, const Vec& dtheta) const override;
  nlohmann::json hyper_json() const override;

 protected:
  void init_cache(ForwardTrace& tr) const override;
  void advance(ForwardTrace& tr, std::size_t t) const override;

 private:
  double act(double v) const;
  double dact(double v) const;

  RnnConfig cfg_;
};

struct GruConfig {
  std::size_t hidden = 64;
  std::size_t inputs = 2;
};

/// Gated recurrent unit, "reset before candidate matmul" form:
///   u = sigmoid(W_z h + U_z x + b_z)          update gate
///   r = sigmoid(W_r h + U_r x + b_r)          reset gate
///   c = tanh(W_c (r * h) + U_c x + b_c)       candidate
///   h' = u * h + (1 - u) * c
/// Parameter order (block names sorted): U_c, U_r, U_z [H,I]; W_c, W_r, W_z [H,H]; b_c, b_r, b_z [H].
/// Caches per slot: {u, r, c}.
class GruModel final : public Model {
 public:
  explicit GruModel(const GruConfig& cfg);
  /// Recurrent matrices ~ N(0, g^2/H), input matrices ~ N(0, 1/I), biases 0.
  void initialize(double g, Rng& rng);

  ModelKind kind() const override { return ModelKind::kGru; }
  std::string kind_name() const override { return "gru"; }
  std::size_t state_dim() const override { return cfg_.hidden; }
  std::size_t input_dim() const override { return cfg_.inputs; }
  std::unique_ptr<Model> clone() const override { return std::make_unique<GruModel>(*this); }

  Vec step(const Vec& z, const Vec& x) const override;
  void jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                 StepMap out) const override;
  void jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                   StepMap out) const override;
  Vec param_vjp(const ForwardTrace& tr, const Traj3& q) const override;
  Traj3 param_jvp(const ForwardTrace& tr, const Vec& dtheta) const override;
  nlohmann::json hyper_json() const override;

 protected:
  void init_cache(ForwardTrace& tr) const override;
  void advance(ForwardTrace& tr, std::size_t t) const override;

 private:
  GruConfig cfg_;
};

/// Fixed biophysical constants of the Hodgkin-Huxley network (per neuron where vectors).
struct HhConfig {
  std::size_t neurons = 4;
  std::size_t inputs = 2;
  double g_K = 36.0, g_Na = 120.0, g_l = 0.3;           // mS/cm^2
  double V_K = -77.0, V_Na = 50.0, V_l = -54.387;        // mV
  double V_t = -20.0, K_p = 4.0;                         // readout sigmoid((V - V_t) / K_p)
  double I_app = 10.0;                                   // uA/cm^2
  double dt = 0.01;                                      // ms, Euler step
};

/// Network of Hodgkin-Huxley neurons, explicit Euler, state [V, m, n, h] stacked (4H):
///   dV/dt = -(g_K n^4 (V - V_K) + g_Na m^3 h (V - V_Na) + g_l (V - V_l))
///           + W s(V) + W_in x + I_app,          s(V) = sigmoid((V - V_t) / K_p)
///   dk/dt = a_k(V) (1 - k) - b_k(V) k,          k in {m, n, h}
/// with the classical squid-axon rate functions (V in mV):
///   a_m = 0.1 (V+40) / (1 - exp(-(V+40)/10))    b_m = 4 exp(-(V+65)/18)
///   a_h = 0.07 exp(-(V+65)/20)                  b_h = 1 / (1 + exp(-(V+35)/10))
///   a_n = 0.01 (V+55) / (1 - exp(-(V+55)/10))   b_n = 0.125 exp(-(V+65)/80)
/// Trainable parameters: W [H,H], W_in [H,I]. Gating variables are clamped to [0, 1] after each
/// step (counted in ForwardTrace::clamp_events); the Jacobian ignores clamping.
/// Caches per slot: {s, s', a_m, b_m, a_m', b_m', a_n, b_n, a_n', b_n', a_h, b_h, a_h', b_h'}.
class HhModel final : public Model {
 public:
  explicit HhModel(const HhConfig& cfg);
  /// W ~ N(0, g^2/H), W_in ~ N(0, 1/I).
  void initialize(double g, Rng& rng);

  ModelKind kind() const override { return ModelKind::kHh; }
  std::string kind_name() const override { return "hh"; }
  std::size_t state_dim() const override { return 4 * cfg_.neurons; }
  std::size_t input_dim() const override { return cfg_.inputs; }
  std::unique_ptr<Model> clone() const override { return std::make_unique<HhModel>(*this); }
  bool trainable() const override { return false; }
  Vec default_initial_state() const override;
  const HhConfig& config() const { return cfg_; }

  Vec step(const Vec& z, const Vec& x) const override;
  void jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                 StepMap out) const override;
  void jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                   StepMap out) const override;
  Vec param_vjp(const ForwardTrace& tr, const Traj3& q) const override;
  Traj3 param_jvp(const ForwardTrace& tr, const Vec& dtheta) const override;
  nlohmann::json hyper_json() const override;

  /// Rate function values and V-derivatives for one gate at membrane potential V.
  struct Rates {
    double a, b, da, db;
  };
  static Rates rates_m(double V);
  static Rates rates_n(double V);
  static Rates rates_h(double V);

 protected:
  void init_cache(ForwardTrace& tr) const override;
  void advance(ForwardTrace& tr, std::size_t t) const override;

 private:
  HhConfig cfg_;
};

/// Builds a model from its hyper-parameter JSON (as written by hyper_json()).
std::unique_ptr<Model> model_from_json(const nlohmann::json& hyper);
/// Sidecar describing parameter blocks and serialization order.
nlohmann::json params_sidecar(const Model& m);

}  // namespace kpflow
