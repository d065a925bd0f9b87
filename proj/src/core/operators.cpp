// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/operators.hpp"

#include <utility>

namespace kpflow {

Eigen::Index DenseRep::rows() const {
  Eigen::Index r = 0;
  for (const auto& b : blocks) r += b.rows();
  return r;
}

Eigen::Index DenseRep::cols() const {
  Eigen::Index c = 0;
  for (const auto& b : blocks) c += b.cols();
  return c;
}

Operator::Operator(Shape3 in, Shape3 out, double dt, Fn apply, Fn adjoint, OpFlags flags, std::string tag) {
  require(in.size() > 0 && out.size() > 0, ErrorCode::kDimension, "operator: empty domain or codomain");
  auto s = std::make_shared<State>();
  s->in = in;
  s->out = out;
  s->dt = dt;
  s->apply = std::move(apply);
  s->adjoint = std::move(adjoint);
  s->flags = flags;
  s->tag = std::move(tag);
  s_ = std::move(s);
}

Traj3 Operator::apply(const Traj3& q) const {
  require(q.shape() == s_->in, ErrorCode::kDimension, "operator " + s_->tag + ": input shape mismatch");
  return s_->apply(q);
}

Traj3 Operator::adjoint(const Traj3& r) const {
  require(r.shape() == s_->out, ErrorCode::kDimension, "operator " + s_->tag + ": adjoint input shape mismatch");
  if (s_->flags.self_adjoint && !s_->adjoint) return s_->apply(r);
  return s_->adjoint(r);
}

Operator Operator::with_factor(FactorFn f, double scale) const {
  Operator o;
  auto s = std::make_shared<State>(*s_);
  s->factor = std::move(f);
  s->factor_scale = scale;
  o.s_ = std::move(s);
  return o;
}

Operator Operator::with_dense(DenseRep rep) const {
  require(rep.rows() == Eigen::Index(s_->out.size()) && rep.cols() == Eigen::Index(s_->in.size()),
          ErrorCode::kDimension, "operator: dense representation has the wrong size");
  Operator o;
  auto s = std::make_shared<State>(*s_);
  s->dense = std::make_shared<const DenseRep>(std::move(rep));
  o.s_ = std::move(s);
  return o;
}

// ---------------------------------------------------------------------------------------------

namespace {

Traj3 dense_apply(const DenseRep& rep, const Traj3& q, Shape3 out_shape, double dt, bool transpose) {
  Traj3 out(out_shape, dt);
  Eigen::Index ri = 0, ci = 0;
  const auto x = q.flat();
  auto y = out.flat();
  for (const auto& blk : rep.blocks) {
    if (!transpose) {
      y.segment(ri, blk.rows()).noalias() = blk * x.segment(ci, blk.cols());
    } else {
      y.segment(ci, blk.cols()).noalias() = blk.transpose() * x.segment(ri, blk.rows());
    }
    ri += blk.rows();
    ci += blk.cols();
  }
  return out;
}

// Operator whose apply/adjoint use a Euclidean matrix; valid when in/out weights are equal.
Operator dense_operator(DenseRep rep, Shape3 in, Shape3 out, double dt, OpFlags flags, std::string tag) {
  auto shared = std::make_shared<const DenseRep>(std::move(rep));
  Operator::Fn fwd = [shared, out, dt](const Traj3& q) { return dense_apply(*shared, q, out, dt, false); };
  Operator::Fn adj = [shared, in, dt](const Traj3& r) { return dense_apply(*shared, r, in, dt, true); };
  return Operator(in, out, dt, fwd, adj, flags, std::move(tag)).with_dense(*shared);
}

void zero_last_slot(Traj3& q) { q.zero_time(q.T() - 1); }

Traj3 copy_zero_last(const Traj3& q) {
  Traj3 c = q;
  zero_last_slot(c);
  return c;
}

}  // namespace

Operator identity_op(Shape3 shape, double dt) {
  OpFlags f;
  f.self_adjoint = f.psd = f.block_diagonal_over_trials = true;
  auto id = [](const Traj3& q) { return q; };
  return Operator(shape, shape, dt, id, id, f, "identity");
}

Operator scaled(const Operator& a, double c) {
  OpFlags f = a.flags();
  f.psd = f.psd && c >= 0.0;
  return Operator(
      a.in_shape(), a.out_shape(), a.dt(), [a, c](const Traj3& q) { return c * a.apply(q); },
      [a, c](const Traj3& r) { return c * a.adjoint(r); }, f, a.tag());
}

Operator compose(const Operator& a, const Operator& b, std::string tag) {
  require(a.in_shape() == b.out_shape(), ErrorCode::kDimension, "compose: shape mismatch");
  OpFlags f;
  f.block_diagonal_over_trials = a.flags().block_diagonal_over_trials && b.flags().block_diagonal_over_trials;
  f.approximate = a.flags().approximate || b.flags().approximate;
  if (tag.empty()) tag = a.tag() + "*" + b.tag();
  return Operator(
      b.in_shape(), a.out_shape(), b.dt(), [a, b](const Traj3& q) { return a.apply(b.apply(q)); },
      [a, b](const Traj3& r) { return b.adjoint(a.adjoint(r)); }, f, std::move(tag));
}

Operator from_matrix(const Mat& M, Shape3 in, Shape3 out, double dt, std::string tag) {
  require(in.B == out.B, ErrorCode::kDimension, "from_matrix: domain and codomain must share B");
  DenseRep rep;
  rep.blocks.push_back(M);
  OpFlags f;
  if (M.rows() == M.cols() && (M - M.transpose()).norm() <= 1e-14 * (1.0 + M.norm())) f.self_adjoint = true;
  return dense_operator(std::move(rep), in, out, dt, f, std::move(tag));
}

Mat materialize(const Operator& op) {
  const Eigen::Index n = Eigen::Index(op.in_shape().size()), m = Eigen::Index(op.out_shape().size());
  if (op.has_dense()) {
    Mat M = Mat::Zero(m, n);
    Eigen::Index ri = 0, ci = 0;
    for (const auto& b : op.dense().blocks) {
      M.block(ri, ci, b.rows(), b.cols()) = b;
      ri += b.rows();
      ci += b.cols();
    }
    return M;
  }
  Mat M(m, n);
  Traj3 e(op.in_shape(), op.dt());
  for (Eigen::Index j = 0; j < n; ++j) {
    e.data()[std::size_t(j)] = 1.0;
    M.col(j) = op.apply(e).flat();
    e.data()[std::size_t(j)] = 0.0;
  }
  return M;
}

// ---------------------------------------------------------------------------------------------

Operator make_p(const ForwardTrace& tr, PMode mode, double direct_scale) {
  const Shape3 shape = tr.z.shape();
  const double dt = tr.z.dt();
  OpFlags f;
  f.block_diagonal_over_trials = true;
  auto tp = std::make_shared<const ForwardTrace>(tr);
  Operator::Fn adj = [tp](const Traj3& r) {
    const ForwardTrace& t = *tp;
    const std::size_t T = t.T();
    Traj3 a = Traj3::zeros_like(r);
    for (std::size_t s = T - 1; s-- > 0;) {
      if (s + 2 < T) t.model->jac_block_t(t, s + 1, 0, std::as_const(a).step(s + 1), a.step(s));
      a.step(s) += r.step(s + 1);
    }
    return a;
  };
  if (mode == PMode::kLinearized) {
    Operator::Fn fwd = [tp](const Traj3& q) {
      const ForwardTrace& t = *tp;
      Traj3 p = Traj3::zeros_like(q);
      for (std::size_t s = 0; s + 1 < t.T(); ++s) {
        auto next = p.step(s + 1);
        t.model->jac_block(t, s, 0, std::as_const(p).step(s), next);
        next += q.step(s);
      }
      return p;
    };
    return Operator(shape, shape, dt, fwd, adj, f, "P");
  }
  require(tr.B() > 0, ErrorCode::kInvalidArgument, "make_p: empty trace");
  const double scale = direct_scale > 0.0 ? direct_scale : 1e-5 * norm(tr.z);
  require(scale > 0.0, ErrorCode::kInvalidArgument, "make_p: direct mode needs a non-zero baseline or scale");
  f.approximate = true;
  Operator::Fn fwd = [tp, scale](const Traj3& q) {
    const ForwardTrace& t = *tp;
    const Traj3 qc = copy_zero_last(q);
    const double nq = norm(qc);
    if (nq == 0.0) return Traj3::zeros_like(q);
    const double s = scale / nq;
    Traj3 zp = t.model->forward_perturbed(t.inputs, Vec(t.z.at(0, 0)), qc, s);
    zp -= t.z;
    zp *= 1.0 / s;
    return zp;
  };
  return Operator(shape, shape, dt, fwd, adj, f, "P_direct");
}

Operator make_p_adjoint(const ForwardTrace& tr) {
  const Operator P = make_p(tr);
  OpFlags f;
  f.block_diagonal_over_trials = true;
  return Operator(
      P.out_shape(), P.in_shape(), P.dt(), [P](const Traj3& r) { return P.adjoint(r); },
      [P](const Traj3& q) { return P.apply(q); }, f, "P_adjoint");
}

Operator make_k(const ForwardTrace& tr, const std::optional<std::vector<std::string>>& blocks) {
  auto tp = std::make_shared<const ForwardTrace>(tr);
  Vec mask = Vec::Ones(Eigen::Index(tr.model->num_params()));
  std::string tag = "K";
  if (blocks) {
    mask.setZero();
    tag += "[";
    for (const auto& name : *blocks) {
      const ParamBlock& blk = tr.model->block(name);
      mask.segment(Eigen::Index(blk.offset), Eigen::Index(blk.size())).setOnes();
      tag += name + ",";
    }
    tag.back() = ']';
  }
  const bool masked = bool(blocks);
  auto factor = [tp, mask, masked](const Traj3& q) {
    Vec g = tp->model->param_vjp(*tp, q);
    if (masked) g = g.cwiseProduct(mask);
    return g;
  };
  Operator::Fn fwd = [tp, factor](const Traj3& q) { return tp->model->param_jvp(*tp, factor(q)); };
  OpFlags f;
  f.self_adjoint = f.psd = true;
  const Shape3 shape = tr.z.shape();
  return Operator(shape, shape, tr.z.dt(), fwd, fwd, f, tag).with_factor(factor, double(tr.B()));
}

Operator make_pkp(const ForwardTrace& tr) {
  const Operator P = make_p(tr);
  const Operator K = make_k(tr);
  const Operator Ps = make_p_adjoint(tr);
  auto fwd = [P, K, Ps](const Traj3& q) { return P.apply(K.apply(Ps.apply(q))); };
  OpFlags f;
  f.self_adjoint = f.psd = true;
  const Shape3 shape = tr.z.shape();
  return Operator(shape, shape, tr.z.dt(), fwd, fwd, f, "PKP*");
}

Operator make_ppstar(const ForwardTrace& tr) {
  const Operator P = make_p(tr);
  auto fwd = [P](const Traj3& q) { return P.apply(P.adjoint(q)); };
  OpFlags f;
  f.self_adjoint = f.psd = f.block_diagonal_over_trials = true;
  const Shape3 shape = tr.z.shape();
  return Operator(shape, shape, tr.z.dt(), fwd, fwd, f, "PP*");
}

ForwardTrace restrict_trace(const ForwardTrace& tr, std::span<const std::size_t> trials) {
  ForwardTrace out;
  out.model = tr.model;
  out.inputs = restrict_trials(tr.inputs, trials);
  out.z = restrict_trials(tr.z, trials);
  out.cache.reserve(tr.cache.size());
  for (const auto& c : tr.cache) out.cache.push_back(restrict_trials(c, trials));
  out.clamp_events = tr.clamp_events;
  return out;
}

BlockOperators restrict_blocks(const Operator& K, const ForwardTrace& tr,
                               const std::vector<std::vector<std::size_t>>& partition) {
  const std::size_t B = tr.B();
  std::vector<int> owner(B, -1);
  for (std::size_t i = 0; i < partition.size(); ++i) {
    require(!partition[i].empty(), ErrorCode::kInvalidArgument, "restrict_blocks: empty partition cell");
    for (std::size_t b : partition[i]) {
      require(b < B, ErrorCode::kInvalidArgument, "restrict_blocks: trial index out of range");
      require(owner[b] < 0, ErrorCode::kInvalidArgument, "restrict_blocks: overlapping partition");
      owner[b] = int(i);
    }
  }
  for (int o : owner) require(o >= 0, ErrorCode::kInvalidArgument, "restrict_blocks: partition does not cover all trials");
  require(K.in_shape() == tr.z.shape(), ErrorCode::kDimension, "restrict_blocks: K does not match the trace");

  BlockOperators out;
  out.partition = partition;
  for (const auto& cell : partition) {
    const ForwardTrace sub = restrict_trace(tr, cell);
    out.P.push_back(make_p(sub));
    out.P_adjoint.push_back(make_p_adjoint(sub));
  }
  const std::size_t n = partition.size();
  out.K.assign(n, {});
  const Shape3 full = tr.z.shape();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      auto Si = std::make_shared<const std::vector<std::size_t>>(partition[i]);
      auto Sj = std::make_shared<const std::vector<std::size_t>>(partition[j]);
      const Shape3 in{Sj->size(), full.T, full.H}, outs{Si->size(), full.T, full.H};
      const double ratio = double(Sj->size()) / double(Si->size());
      Operator::Fn fwd = [K, Si, Sj, B](const Traj3& q) {
        return restrict_trials(K.apply(embed_trials(q, *Sj, B)), *Si);
      };
      Operator::Fn adj = [K, Si, Sj, B, ratio](const Traj3& r) {
        Traj3 y = restrict_trials(K.adjoint(embed_trials(r, *Si, B)), *Sj);
        y *= ratio;
        return y;
      };
      OpFlags f;
      f.self_adjoint = f.psd = (i == j) && K.flags().psd;
      out.K[i].push_back(Operator(in, outs, tr.z.dt(), fwd, adj, f,
                                  "K_" + std::to_string(i) + std::to_string(j)));
    }
  }
  return out;
}

Operator make_volterra(Shape3 shape, double dt, VolterraConvention conv, std::optional<double> step) {
  const double h = step.value_or(dt);
  const bool strict = conv == VolterraConvention::kStrict;
  Operator::Fn fwd = [h, strict](const Traj3& q) {
    Traj3 out = Traj3::zeros_like(q);
    Vec acc(Eigen::Index(q.H()));
    for (std::size_t b = 0; b < q.B(); ++b) {
      acc.setZero();
      for (std::size_t t = 0; t < q.T(); ++t) {
        if (!strict) acc += q.at(b, t);
        out.at(b, t) = h * acc;
        if (strict) acc += q.at(b, t);
      }
    }
    return out;
  };
  Operator::Fn adj = [h, strict](const Traj3& r) {
    Traj3 out = Traj3::zeros_like(r);
    Vec acc(Eigen::Index(r.H()));
    for (std::size_t b = 0; b < r.B(); ++b) {
      acc.setZero();
      for (std::size_t t = r.T(); t-- > 0;) {
        if (!strict) acc += r.at(b, t);
        out.at(b, t) = h * acc;
        if (strict) acc += r.at(b, t);
      }
    }
    return out;
  };
  OpFlags f;
  f.block_diagonal_over_trials = true;
  return Operator(shape, shape, dt, fwd, adj, f, strict ? "V_strict" : "V");
}

// ---------------------------------------------------------------------------------------------

Traj3 broadcast_axes(const Traj3& reduced, Shape3 full, AxisSet axes) {
  require(reduced.shape() == axes.reduce(full), ErrorCode::kDimension, "broadcast_axes: reduced shape mismatch");
  Traj3 out(full, reduced.dt());
  const bool ab = axes.has(kTrialAxis), at = axes.has(kTimeAxis), ah = axes.has(kUnitAxis);
  for (std::size_t b = 0; b < full.B; ++b)
    for (std::size_t t = 0; t < full.T; ++t) {
      const double* src = reduced.slice_ptr(ab ? 0 : b, at ? 0 : t);
      double* dst = out.slice_ptr(b, t);
      for (std::size_t h = 0; h < full.H; ++h) dst[h] = src[ah ? 0 : h];
    }
  return out;
}

Traj3 average_axes(const Traj3& full, AxisSet axes) {
  Traj3 out(axes.reduce(full.shape()), full.dt());
  const bool ab = axes.has(kTrialAxis), at = axes.has(kTimeAxis), ah = axes.has(kUnitAxis);
  for (std::size_t b = 0; b < full.B(); ++b)
    for (std::size_t t = 0; t < full.T(); ++t) {
      const double* src = full.slice_ptr(b, t);
      double* dst = out.slice_ptr(ab ? 0 : b, at ? 0 : t);
      for (std::size_t h = 0; h < full.H(); ++h) dst[ah ? 0 : h] += src[h];
    }
  out *= 1.0 / double(axes.averaged_count(full.shape()));
  return out;
}

Operator average(const Operator& op, AxisSet axes, std::size_t max_dense) {
  require(op.in_shape() == op.out_shape(), ErrorCode::kDimension, "average: operator must be square");
  const Shape3 full = op.in_shape();
  const Shape3 red = axes.reduce(full);
  const double dt = op.dt();
  OpFlags f;
  f.self_adjoint = op.flags().self_adjoint;
  f.psd = op.flags().psd;
  f.approximate = op.flags().approximate;
  f.block_diagonal_over_trials = op.flags().block_diagonal_over_trials || axes.has(kTrialAxis);
  const std::string tag = "avg(" + op.tag() + ")";
  Operator::Fn fwd = [op, axes, full](const Traj3& q) { return average_axes(op.apply(broadcast_axes(q, full, axes)), axes); };
  Operator::Fn adj = [op, axes, full](const Traj3& r) {
    return average_axes(op.adjoint(broadcast_axes(r, full, axes)), axes);
  };
  Operator lazy(red, red, dt, fwd, adj, f, tag);
  const std::size_t d = red.size();
  if (d > max_dense) return lazy;

  DenseRep rep;
  if (!axes.has(kTrialAxis) && op.flags().block_diagonal_over_trials) {
    // Probe every trial at once; outputs never mix trials.
    const std::size_t per = red.T * red.H;
    rep.blocks.assign(red.B, Mat(Eigen::Index(per), Eigen::Index(per)));
    Traj3 e(red, dt);
    for (std::size_t k = 0; k < per; ++k) {
      e.fill(0.0);
      for (std::size_t b = 0; b < red.B; ++b) e.data()[b * per + k] = 1.0;
      const Traj3 y = fwd(e);
      for (std::size_t b = 0; b < red.B; ++b)
        rep.blocks[b].col(Eigen::Index(k)) = Eigen::Map<const Vec>(y.data().data() + b * per, Eigen::Index(per));
    }
  } else if (op.has_factor()) {
    Traj3 e(red, dt);
    std::vector<Vec> rows;
    rows.reserve(d);
    for (std::size_t i = 0; i < d; ++i) {
      e.data()[i] = 1.0;
      rows.push_back(op.factor(broadcast_axes(e, full, axes)));
      e.data()[i] = 0.0;
    }
    Mat G(Eigen::Index(d), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < d; ++i) G.row(Eigen::Index(i)) = rows[i].transpose();
    const double c = op.factor_scale() / double(axes.averaged_count(full));
    Mat M = Mat::Zero(Eigen::Index(d), Eigen::Index(d));
    M.selfadjointView<Eigen::Lower>().rankUpdate(G, c);
    M.triangularView<Eigen::StrictlyUpper>() = M.transpose();
    rep.blocks.push_back(std::move(M));
  } else {
    rep.blocks.push_back(materialize(lazy));
  }
  return dense_operator(std::move(rep), red, red, dt, f, tag);
}

}  // namespace kpflow
