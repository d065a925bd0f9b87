// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/tasks.hpp"

namespace kpflow {

/// Linear readout y = W z + b, W [O, S].
struct Readout {
  Mat W;
  Vec b;
  /// W ~ N(0, 1/S), b = 0.
  static Readout init(std::size_t outputs, std::size_t state_dim, Rng& rng);
};

struct LossResult {
  double loss = 0.0;
  Traj3 err;       // exact gradient of `loss` with respect to z
  Mat grad_Wout;   // d loss / d W_out
  Vec grad_bout;   // d loss / d b_out
};

/// loss = (1/(B T O)) sum_{b,t} mask[b,t] ||W_out z[b,t] + b_out - y*[b,t]||^2.
LossResult loss_and_err(const Traj3& z, const Readout& ro, const Traj3& targets, const Traj3& mask);
inline LossResult loss_and_err(const ForwardTrace& tr, const Readout& ro, const TrialBatch& batch) {
  return loss_and_err(tr.z, ro, batch.targets, batch.mask);
}

struct AdjointResult {
  Traj3 a;   // P*(err): a[b,t] = dL/dz[b,t+1] (slot-indexed, a[:,T-1] = 0)
  Vec grad;  // dL/dtheta = B * param_vjp(a)
};
AdjointResult adjoint_backward(const ForwardTrace& tr, const Traj3& err);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vec m, v;
  std::size_t step = 0;
};

/// Scales g in place so that ||g||_2 <= clip (no-op for clip <= 0). Returns the factor applied.
double clip_global_norm(Vec& g, double clip);
/// One bias-corrected Adam update of theta with gradient g.
void adam_step(Vec& theta, AdamState& st, const Vec& g, const AdamConfig& cfg);

enum class Optimizer { kAdam, kGd };

struct TrainConfig {
  AdamConfig adam;
  Optimizer optimizer = Optimizer::kAdam;
  double grad_clip_norm = 1e-4;
  std::size_t batch_size = 64;
  std::size_t max_iters = 1000;
  double convergence_loss_threshold = 0.01665;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 0;  // 0 disables hooks
  bool train_recurrent = true;
  bool train_readout = true;
};

struct Snapshot {
  std::size_t iter = 0;
  Vec params;
  Readout readout;
};

struct TrainRecord {
  std::vector<double> loss;
  std::vector<double> eval_loss;
  std::optional<std::size_t> converged_iter;
  std::size_t updates = 0;  // parameter updates applied
  bool diverged = false;
  std::string divergence_message;
  std::vector<Snapshot> snapshots;

  std::string loss_csv() const;
};

/// Called with the parameters after `iter` updates: before the update of every iteration that is
/// a multiple of snapshot_every, and once more with final = true after the loop ends. Must not
/// modify the model.
using TrainHook = std::function<void(std::size_t iter, const Model& model, const Readout& ro, bool final)>;

/// Adam (or plain GD) on minibatches drawn from `pool`; evaluates the noise-free `eval` set
/// every iteration and stops at the first iteration whose eval loss is below the threshold.
TrainRecord train(Model& model, Readout& ro, const TrialBatch& pool, const TrialBatch& eval, const TrainConfig& cfg,
                  const TrainHook& hook = {});

/// Sub-batch over the given trials.
TrialBatch select_trials(const TrialBatch& batch, std::span<const std::size_t> trials);

/// Loss of the all-zero output on `batch`.
double zero_output_loss(const TrialBatch& batch);

/// Mean loss on a batch for the current parameters.
double evaluate(const Model& model, const Readout& ro, const TrialBatch& batch);

}  // namespace kpflow
