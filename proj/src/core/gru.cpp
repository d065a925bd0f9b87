// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include <cmath>

#include "core/model.hpp"

namespace kpflow {
namespace {

using RowVecMap = Eigen::Map<const Eigen::RowVectorXd>;

}  // namespace

GruModel::GruModel(const GruConfig& cfg) : cfg_(cfg) {
  require(cfg.hidden > 0 && cfg.inputs > 0, ErrorCode::kDimension, "gru: H and I must be positive");
  const std::size_t H = cfg.hidden, I = cfg.inputs;
  define_blocks({{"U_c", 0, H, I},
                 {"U_r", 0, H, I},
                 {"U_z", 0, H, I},
                 {"W_c", 0, H, H},
                 {"W_r", 0, H, H},
                 {"W_z", 0, H, H},
                 {"b_c", 0, H, 1},
                 {"b_r", 0, H, 1},
                 {"b_z", 0, H, 1}});
}

void GruModel::initialize(double g, Rng& rng) {
  const double H = double(cfg_.hidden), I = double(cfg_.inputs);
  // Draw in serialization order so the stream is easy to reproduce elsewhere.
  for (const auto& blk : blocks()) {
    auto m = block_map(blk, theta_);
    double sd = 0.0;
    if (blk.name[0] == 'U') sd = 1.0 / std::sqrt(I);
    if (blk.name[0] == 'W') sd = g / std::sqrt(H);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd > 0.0 ? rng.normal(0.0, sd) : 0.0;
  }
}

nlohmann::json GruModel::hyper_json() const { return {{"kind", "gru"}, {"H", cfg_.hidden}, {"I", cfg_.inputs}}; }

Vec GruModel::step(const Vec& h, const Vec& x) const {
  const Vec u = exp_logistic((block_map("W_z") * h + block_map("U_z") * x + Vec(block_map("b_z"))).array()).matrix();
  const Vec r = exp_logistic((block_map("W_r") * h + block_map("U_r") * x + Vec(block_map("b_r"))).array()).matrix();
  const Vec rh = r.cwiseProduct(h);
  const Eigen::ArrayXd pre_c = (block_map("W_c") * rh + block_map("U_c") * x + Vec(block_map("b_c"))).array();
  const Vec c = exp_tanh(pre_c).matrix();
  return u.cwiseProduct(h) + (Vec::Ones(h.size()) - u).cwiseProduct(c);
}

void GruModel::init_cache(ForwardTrace& tr) const {
  tr.cache.assign(3, Traj3(tr.B(), tr.T(), cfg_.hidden, tr.z.dt()));
}

void GruModel::advance(ForwardTrace& tr, std::size_t t) const {
  const auto Hs = tr.z.step(t);
  const auto X = tr.inputs.step(t);
  auto U = tr.cache[0].step(t);
  auto R = tr.cache[1].step(t);
  auto C = tr.cache[2].step(t);
  const auto bz = block_map("b_z");
  const auto br = block_map("b_r");
  const auto bc = block_map("b_c");

  Mat a = Hs * block_map("W_z").transpose();
  a.noalias() += X * block_map("U_z").transpose();
  a.rowwise() += RowVecMap(bz.data(), bz.size());
  U = exp_logistic(a.array()).matrix();

  a.noalias() = Hs * block_map("W_r").transpose();
  a.noalias() += X * block_map("U_r").transpose();
  a.rowwise() += RowVecMap(br.data(), br.size());
  R = exp_logistic(a.array()).matrix();

  const Mat rh = R.cwiseProduct(Hs);
  a.noalias() = rh * block_map("W_c").transpose();
  a.noalias() += X * block_map("U_c").transpose();
  a.rowwise() += RowVecMap(bc.data(), bc.size());
  C = exp_tanh(a.array()).matrix();

  tr.z.step(t + 1) = (U.array() * Hs.array() + (1.0 - U.array()) * C.array()).matrix();
}

void GruModel::jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                         StepMap out) const {
  const Eigen::Index n = in.rows(), r0 = Eigen::Index(b0);
  const auto Hs = tr.z.step(t).middleRows(r0, n).array();
  const auto U = tr.cache[0].step(t).middleRows(r0, n).array();
  const auto R = tr.cache[1].step(t).middleRows(r0, n).array();
  const auto C = tr.cache[2].step(t).middleRows(r0, n).array();
  const Mat wz = in * block_map("W_z").transpose();
  const Mat wr = in * block_map("W_r").transpose();
  const Mat dm = (R * in.array() + Hs * R * (1.0 - R) * wr.array()).matrix();
  const Mat wc = dm * block_map("W_c").transpose();
  out = (U * in.array() + (Hs - C) * U * (1.0 - U) * wz.array() + (1.0 - U) * (1.0 - C * C) * wc.array()).matrix();
}

void GruModel::jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                           StepMap out) const {
  const Eigen::Index n = in.rows(), r0 = Eigen::Index(b0);
  const auto Hs = tr.z.step(t).middleRows(r0, n).array();
  const auto U = tr.cache[0].step(t).middleRows(r0, n).array();
  const auto R = tr.cache[1].step(t).middleRows(r0, n).array();
  const auto C = tr.cache[2].step(t).middleRows(r0, n).array();
  const Mat gu = (in.array() * (Hs - C) * U * (1.0 - U)).matrix();
  const Mat gc = (in.array() * (1.0 - U) * (1.0 - C * C)).matrix();
  const Mat gm = gc * block_map("W_c");
  const Mat gr = (gm.array() * Hs * R * (1.0 - R)).matrix();
  Mat res = (U * in.array() + gm.array() * R).matrix();
  res.noalias() += gu * block_map("W_z");
  res.noalias() += gr * block_map("W_r");
  out = res;
}

Vec GruModel::param_vjp(const ForwardTrace& tr, const Traj3& q) const {
  Vec g = Vec::Zero(theta_.size());
  auto gWz = block_map(block("W_z"), g);
  auto gWr = block_map(block("W_r"), g);
  auto gWc = block_map(block("W_c"), g);
  auto gUz = block_map(block("U_z"), g);
  auto gUr = block_map(block("U_r"), g);
  auto gUc = block_map(block("U_c"), g);
  auto gbz = block_map(block("b_z"), g);
  auto gbr = block_map(block("b_r"), g);
  auto gbc = block_map(block("b_c"), g);
  const auto Wc = block_map("W_c");
  for (std::size_t t = 0; t + 1 < tr.T(); ++t) {
    const auto Q = q.step(t);
    if (Q.isZero(0.0)) continue;
    const auto Hs = tr.z.step(t);
    const auto X = tr.inputs.step(t);
    const auto U = tr.cache[0].step(t).array();
    const auto R = tr.cache[1].step(t).array();
    const auto C = tr.cache[2].step(t).array();
    const Mat gu = (Q.array() * (Hs.array() - C) * U * (1.0 - U)).matrix();
    const Mat gc = (Q.array() * (1.0 - U) * (1.0 - C * C)).matrix();
    const Mat gr = ((gc * Wc).array() * Hs.array() * R * (1.0 - R)).matrix();
    const Mat rh = (R * Hs.array()).matrix();
    gWz.noalias() += gu.transpose() * Hs;
    gUz.noalias() += gu.transpose() * X;
    gbz += gu.colwise().sum().transpose();
    gWc.noalias() += gc.transpose() * rh;
    gUc.noalias() += gc.transpose() * X;
    gbc += gc.colwise().sum().transpose();
    gWr.noalias() += gr.transpose() * Hs;
    gUr.noalias() += gr.transpose() * X;
    gbr += gr.colwise().sum().transpose();
  }
  g /= double(tr.B());
  return g;
}

Traj3 GruModel::param_jvp(const ForwardTrace& tr, const Vec& dtheta) const {
  const auto dWz = block_map(block("W_z"), dtheta);
  const auto dWr = block_map(block("W_r"), dtheta);
  const auto dWc = block_map(block("W_c"), dtheta);
  const auto dUz = block_map(block("U_z"), dtheta);
  const auto dUr = block_map(block("U_r"), dtheta);
  const auto dUc = block_map(block("U_c"), dtheta);
  const auto dbz = block_map(block("b_z"), dtheta);
  const auto dbr = block_map(block("b_r"), dtheta);
  const auto dbc = block_map(block("b_c"), dtheta);
  const auto Wc = block_map("W_c");
  Traj3 out(tr.B(), tr.T(), cfg_.hidden, tr.z.dt());
  for (std::size_t t = 0; t + 1 < tr.T(); ++t) {
    const auto Hs = tr.z.step(t);
    const auto X = tr.inputs.step(t);
    const auto U = tr.cache[0].step(t).array();
    const auto R = tr.cache[1].step(t).array();
    const auto C = tr.cache[2].step(t).array();
    Mat du = Hs * dWz.transpose();
    du.noalias() += X * dUz.transpose();
    du.rowwise() += RowVecMap(dbz.data(), dbz.size());
    Mat dr = Hs * dWr.transpose();
    dr.noalias() += X * dUr.transpose();
    dr.rowwise() += RowVecMap(dbr.data(), dbr.size());
    const Mat rh = (R * Hs.array()).matrix();
    const Mat drh = (Hs.array() * R * (1.0 - R) * dr.array()).matrix();
    Mat dc = rh * dWc.transpose();
    dc.noalias() += drh * Wc.transpose();
    dc.noalias() += X * dUc.transpose();
    dc.rowwise() += RowVecMap(dbc.data(), dbc.size());
    out.step(t) = ((Hs.array() - C) * U * (1.0 - U) * du.array() + (1.0 - U) * (1.0 - C * C) * dc.array()).matrix();
  }
  return out;
}

}  // namespace kpflow
