// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "core/operators.hpp"

namespace kpflow {

Readout Readout::init(std::size_t outputs, std::size_t state_dim, Rng& rng) {
  Readout ro;
  ro.W.resize(Eigen::Index(outputs), Eigen::Index(state_dim));
  const double sd = 1.0 / std::sqrt(double(state_dim));
  for (Eigen::Index i = 0; i < ro.W.size(); ++i) ro.W.data()[i] = rng.normal(0.0, sd);
  ro.b = Vec::Zero(Eigen::Index(outputs));
  return ro;
}

LossResult loss_and_err(const Traj3& z, const Readout& ro, const Traj3& targets, const Traj3& mask) {
  const std::size_t B = z.B(), T = z.T(), O = std::size_t(ro.W.rows());
  require(targets.B() == B && targets.T() == T && targets.H() == O, ErrorCode::kDimension,
          "loss_and_err: targets shape mismatch");
  require(mask.B() == B && mask.T() == T && mask.H() == 1, ErrorCode::kDimension, "loss_and_err: mask shape mismatch");
  const Traj3 y = readout(z, ro.W, ro.b);
  const double norm_c = 1.0 / double(B * T * O);
  LossResult r;
  r.err = Traj3::zeros_like(z);
  r.grad_Wout = Mat::Zero(ro.W.rows(), ro.W.cols());
  r.grad_bout = Vec::Zero(ro.b.size());
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double over_t = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double mk = mask(b, t, 0);
      if (mk == 0.0) continue;
      const Vec d = y.at(b, t) - targets.at(b, t);
      over_t += mk * d.squaredNorm();
      const Vec g = (2.0 * norm_c * mk) * d;
      r.err.at(b, t).noalias() = ro.W.transpose() * g;
      r.grad_Wout.noalias() += g * z.at(b, t).transpose();
      r.grad_bout += g;
    }
    total += over_t;
  }
  r.loss = total * norm_c;
  return r;
}

AdjointResult adjoint_backward(const ForwardTrace& tr, const Traj3& err) {
  require(err.shape() == tr.z.shape(), ErrorCode::kDimension, "adjoint_backward: err must be shaped like z");
  AdjointResult r;
  r.a = make_p_adjoint(tr).apply(err);
  r.grad = tr.model->param_vjp(tr, r.a);
  r.grad *= double(tr.B());
  return r;
}

double clip_global_norm(Vec& g, double clip) {
  if (clip <= 0.0) return 1.0;
  const double n = g.norm();
  if (n <= clip) return 1.0;
  const double f = clip / n;
  g *= f;
  return f;
}

void adam_step(Vec& theta, AdamState& st, const Vec& g, const AdamConfig& cfg) {
  require(g.size() == theta.size(), ErrorCode::kDimension, "adam_step: gradient length mismatch");
  if (st.m.size() != theta.size()) {
    st.m = Vec::Zero(theta.size());
    st.v = Vec::Zero(theta.size());
    st.step = 0;
  }
  ++st.step;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double mh = st.m[i] / c1;
    const double vh = st.v[i] / c2;
    theta[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

std::string TrainRecord::loss_csv() const {
  std::string out = "iter,loss,eval_loss\n";
  char buf[96];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, loss[i], eval_loss[i]);
    out += buf;
  }
  return out;
}

TrialBatch select_trials(const TrialBatch& batch, std::span<const std::size_t> trials) {
  TrialBatch out;
  out.inputs = restrict_trials(batch.inputs, trials);
  out.targets = restrict_trials(batch.targets, trials);
  out.mask = restrict_trials(batch.mask, trials);
  // Metadata is optional (hand-built batches carry none); copy whatever is present.
  const std::size_t T = batch.T();
  const bool has_periods = batch.periods.size() == batch.B() * T;
  const bool has_labels = batch.task_labels.size() == batch.B();
  const bool has_angles = batch.stim_angles.size() == batch.B();
  for (std::size_t b : trials) {
    if (has_periods)
      out.periods.insert(out.periods.end(), batch.periods.begin() + std::ptrdiff_t(b * T),
                         batch.periods.begin() + std::ptrdiff_t((b + 1) * T));
    if (has_labels) out.task_labels.push_back(batch.task_labels[b]);
    if (has_angles) out.stim_angles.push_back(batch.stim_angles[b]);
  }
  return out;
}

double zero_output_loss(const TrialBatch& batch) {
  double total = 0.0;
  for (std::size_t b = 0; b < batch.B(); ++b)
    for (std::size_t t = 0; t < batch.T(); ++t) total += batch.mask(b, t, 0) * batch.targets.at(b, t).squaredNorm();
  return total / double(batch.B() * batch.T() * batch.targets.H());
}

double evaluate(const Model& model, const Readout& ro, const TrialBatch& batch) {
  const ForwardTrace tr = model.forward(batch.inputs);
  return loss_and_err(tr.z, ro, batch.targets, batch.mask).loss;
}

namespace {

Vec pack(const Model& m, const Readout& ro) {
  Vec v(m.params().size() + ro.W.size() + ro.b.size());
  v << m.params(), Eigen::Map<const Vec>(ro.W.data(), ro.W.size()), ro.b;
  return v;
}

void unpack(const Vec& v, Model& m, Readout& ro) {
  const Eigen::Index P = Eigen::Index(m.num_params());
  m.set_params(v.head(P));
  Eigen::Map<Vec>(ro.W.data(), ro.W.size()) = v.segment(P, ro.W.size());
  ro.b = v.tail(ro.b.size());
}

}  // namespace

TrainRecord train(Model& model, Readout& ro, const TrialBatch& pool, const TrialBatch& eval, const TrainConfig& cfg,
                  const TrainHook& hook) {
  require(model.trainable() || !cfg.train_recurrent, ErrorCode::kInvalidArgument,
          "train: model kind " + model.kind_name() + " does not support training");
  require(cfg.batch_size >= 1 && cfg.batch_size <= pool.B(), ErrorCode::kInvalidArgument,
          "train: batch_size must lie in [1, pool size]");
  require(std::size_t(ro.W.cols()) == model.state_dim() && ro.W.rows() == Eigen::Index(pool.targets.H()),
          ErrorCode::kDimension, "train: readout shape mismatch");
  TrainRecord rec;
  Rng rng(cfg.seed);
  std::vector<std::size_t> perm(pool.B());
  std::iota(perm.begin(), perm.end(), 0);
  AdamState st;
  Vec theta = pack(model, ro);
  const Eigen::Index P = Eigen::Index(model.num_params());

  for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
    if (hook && cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0) hook(iter, model, ro, false);
    // Partial Fisher-Yates: the first batch_size entries are a uniform sample.
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const std::size_t j = i + std::size_t(rng.below(pool.B() - i));
      std::swap(perm[i], perm[j]);
    }
    const std::vector<std::size_t> idx(perm.begin(), perm.begin() + std::ptrdiff_t(cfg.batch_size));
    const TrialBatch mb = select_trials(pool, idx);
    double eval_loss = 0.0;
    LossResult lr;
    AdjointResult adj;
    try {
      const ForwardTrace tr = model.forward(mb.inputs);
      lr = loss_and_err(tr, ro, mb);
      if (cfg.train_recurrent) adj = adjoint_backward(tr, lr.err);
      eval_loss = evaluate(model, ro, eval);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDivergence) throw;
      rec.diverged = true;
      rec.divergence_message = e.what();
      break;
    }
    if (!std::isfinite(lr.loss) || !std::isfinite(eval_loss)) {
      rec.diverged = true;
      rec.divergence_message = "non-finite loss at iteration " + std::to_string(iter);
      break;
    }
    rec.loss.push_back(lr.loss);
    rec.eval_loss.push_back(eval_loss);
    if (eval_loss < cfg.convergence_loss_threshold) {
      rec.converged_iter = iter;
      break;
    }
    Vec g = Vec::Zero(theta.size());
    if (cfg.train_recurrent) g.head(P) = adj.grad;
    if (cfg.train_readout) {
      g.segment(P, ro.W.size()) = Eigen::Map<const Vec>(lr.grad_Wout.data(), lr.grad_Wout.size());
      g.tail(ro.b.size()) = lr.grad_bout;
    }
    clip_global_norm(g, cfg.grad_clip_norm);
    if (cfg.optimizer == Optimizer::kAdam) {
      adam_step(theta, st, g, cfg.adam);
    } else {
      theta -= cfg.adam.lr * g;
    }
    unpack(theta, model, ro);
  }
  std::size_t updates = rec.loss.size();
  if (rec.converged_iter) updates = *rec.converged_iter;
  rec.updates = updates;
  if (hook) hook(updates, model, ro, true);
  return rec;
}

}  // namespace kpflow
