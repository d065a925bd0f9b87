// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include <cmath>

#include "core/model.hpp"

namespace kpflow {

RnnModel::RnnModel(const RnnConfig& cfg) : cfg_(cfg) {
  require(cfg.hidden > 0 && cfg.inputs > 0, ErrorCode::kDimension, "rnn: H and I must be positive");
  require(cfg.alpha > 0.0 && cfg.alpha <= 1.0, ErrorCode::kInvalidArgument, "rnn: alpha must lie in (0, 1]");
  const std::size_t H = cfg.hidden, I = cfg.inputs;
  define_blocks({{"W", 0, H, H}, {"W_in", 0, H, I}, {"b", 0, H, 1}});
}

void RnnModel::initialize(double g, Rng& rng) {
  const double H = double(cfg_.hidden), I = double(cfg_.inputs);
  auto W = block_map("W");
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = rng.normal(0.0, g / std::sqrt(H));
  auto Win = block_map("W_in");
  for (Eigen::Index i = 0; i < Win.size(); ++i) Win.data()[i] = rng.normal(0.0, 1.0 / std::sqrt(I));
  block_map("b").setZero();
}

double RnnModel::act(double v) const {
  if (cfg_.activation == Activation::kTanh) return 1.0 - 2.0 / (std::exp(2.0 * v) + 1.0);
  return v > 0 ? v : 0.0;
}

double RnnModel::dact(double v) const {
  if (cfg_.activation == Activation::kTanh) {
    const double th = act(v);
    return 1.0 - th * th;
  }
  return v > 0 ? 1.0 : 0.0;
}

nlohmann::json RnnModel::hyper_json() const {
  return {{"kind", "rnn"},
          {"H", cfg_.hidden},
          {"I", cfg_.inputs},
          {"alpha", cfg_.alpha},
          {"activation", cfg_.activation == Activation::kTanh ? "tanh" : "relu"}};
}

Vec RnnModel::step(const Vec& z, const Vec& x) const {
  const auto W = block_map("W");
  const auto Win = block_map("W_in");
  const auto b = block_map("b");
  const Vec s = cfg_.activation == Activation::kTanh ? Vec(exp_tanh(z.array()).matrix())
                                                     : Vec(z.unaryExpr([this](double v) { return act(v); }));
  return (1.0 - cfg_.alpha) * z + cfg_.alpha * (W * s + Win * x + Vec(b));
}

void RnnModel::init_cache(ForwardTrace& tr) const {
  tr.cache.assign(2, Traj3(tr.B(), tr.T(), cfg_.hidden, tr.z.dt()));
}

void RnnModel::advance(ForwardTrace& tr, std::size_t t) const {
  const auto W = block_map("W");
  const auto Win = block_map("W_in");
  const auto b = block_map("b");
  auto S = tr.cache[0].step(t);
  auto D = tr.cache[1].step(t);
  const auto Z = tr.z.step(t);
  if (cfg_.activation == Activation::kTanh) {
    S = exp_tanh(Z.array()).matrix();
    D = 1.0 - S.array().square();
  } else {
    S = Z.unaryExpr([this](double v) { return act(v); });
    D = Z.unaryExpr([this](double v) { return dact(v); });
  }
  auto Zn = tr.z.step(t + 1);
  const double a = cfg_.alpha;
  Zn.noalias() = S * W.transpose();
  Zn.noalias() += tr.inputs.step(t) * Win.transpose();
  Zn.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), b.size());
  if (a != 1.0) {
    Zn *= a;
    Zn += (1.0 - a) * Z;
  }
}

void RnnModel::jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                         StepMap out) const {
  const auto W = block_map("W");
  const auto D = tr.cache[1].step(t).middleRows(Eigen::Index(b0), in.rows());
  const double a = cfg_.alpha;
  const Mat tmp = in.cwiseProduct(D);
  out.noalias() = a * (tmp * W.transpose());
  if (a != 1.0) out += (1.0 - a) * in;
}

void RnnModel::jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                           StepMap out) const {
  const auto W = block_map("W");
  const auto D = tr.cache[1].step(t).middleRows(Eigen::Index(b0), in.rows());
  const double a = cfg_.alpha;
  const Mat tmp = in * W;
  out = a * tmp.cwiseProduct(D);
  if (a != 1.0) out += (1.0 - a) * in;
}

Vec RnnModel::param_vjp(const ForwardTrace& tr, const Traj3& q) const {
  Vec g = Vec::Zero(theta_.size());
  auto gW = block_map(block("W"), g);
  auto gWin = block_map(block("W_in"), g);
  auto gb = block_map(block("b"), g);
  for (std::size_t t = 0; t + 1 < tr.T(); ++t) {
    const auto Q = q.step(t);
    if (Q.isZero(0.0)) continue;
    gW.noalias() += Q.transpose() * tr.cache[0].step(t);
    gWin.noalias() += Q.transpose() * tr.inputs.step(t);
    gb += Q.colwise().sum().transpose();
  }
  g *= cfg_.alpha / double(tr.B());
  return g;
}

Traj3 RnnModel::param_jvp(const ForwardTrace& tr, const Vec& dtheta) const {
  const auto dW = block_map(block("W"), dtheta);
  const auto dWin = block_map(block("W_in"), dtheta);
  const auto db = block_map(block("b"), dtheta);
  Traj3 out(tr.B(), tr.T(), cfg_.hidden, tr.z.dt());
  const double a = cfg_.alpha;
  for (std::size_t t = 0; t + 1 < tr.T(); ++t) {
    auto O = out.step(t);
    O.noalias() = tr.cache[0].step(t) * dW.transpose();
    O.noalias() += tr.inputs.step(t) * dWin.transpose();
    O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(db.data(), db.size());
    if (a != 1.0) O *= a;
  }
  return out;
}

}  // namespace kpflow
