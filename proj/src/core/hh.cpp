// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include <algorithm>
#include <cmath>

#include "core/model.hpp"

namespace kpflow {
namespace {

// x / (1 - exp(-x)) and its derivative, with series near x = 0.
double vtrap(double x) {
  if (std::abs(x) < 1e-4) return 1.0 + x / 2.0 + x * x / 12.0;
  return x / -std::expm1(-x);
}

double vtrap_d(double x) {
  if (std::abs(x) < 1e-4) return 0.5 + x / 6.0;
  const double E = -std::expm1(-x);
  return (E - x * (1.0 - E)) / (E * E);
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

enum CacheSlot : std::size_t {
  kS = 0, kDS,
  kAm, kBm, kDAm, kDBm,
  kAn, kBn, kDAn, kDBn,
  kAh, kBh, kDAh, kDBh,
  kNumCache
};

}  // namespace

HhModel::Rates HhModel::rates_m(double V) {
  const double x = (V + 40.0) / 10.0;
  const double b = 4.0 * std::exp(-(V + 65.0) / 18.0);
  return {vtrap(x), b, vtrap_d(x) / 10.0, -b / 18.0};
}

HhModel::Rates HhModel::rates_n(double V) {
  const double x = (V + 55.0) / 10.0;
  const double b = 0.125 * std::exp(-(V + 65.0) / 80.0);
  return {0.1 * vtrap(x), b, 0.01 * vtrap_d(x), -b / 80.0};
}

HhModel::Rates HhModel::rates_h(double V) {
  const double a = 0.07 * std::exp(-(V + 65.0) / 20.0);
  const double b = logistic((V + 35.0) / 10.0);
  return {a, b, -a / 20.0, b * (1.0 - b) / 10.0};
}

HhModel::HhModel(const HhConfig& cfg) : cfg_(cfg) {
  require(cfg.neurons > 0 && cfg.inputs > 0, ErrorCode::kDimension, "hh: H and I must be positive");
  require(cfg.g_K >= 0 && cfg.g_Na >= 0 && cfg.g_l >= 0, ErrorCode::kInvalidArgument,
          "hh: conductances must be non-negative");
  require(cfg.K_p > 0, ErrorCode::kInvalidArgument, "hh: K_p must be positive");
  require(cfg.dt > 0, ErrorCode::kInvalidArgument, "hh: dt_hh must be positive");
  const std::size_t H = cfg.neurons, I = cfg.inputs;
  define_blocks({{"W", 0, H, H}, {"W_in", 0, H, I}});
}

void HhModel::initialize(double g, Rng& rng) {
  const double H = double(cfg_.neurons), I = double(cfg_.inputs);
  auto W = block_map("W");
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = rng.normal(0.0, g / std::sqrt(H));
  auto Win = block_map("W_in");
  for (Eigen::Index i = 0; i < Win.size(); ++i) Win.data()[i] = rng.normal(0.0, 1.0 / std::sqrt(I));
}

nlohmann::json HhModel::hyper_json() const {
  return {{"kind", "hh"},   {"H", cfg_.neurons}, {"I", cfg_.inputs}, {"g_K", cfg_.g_K},
          {"g_Na", cfg_.g_Na}, {"g_l", cfg_.g_l},   {"V_K", cfg_.V_K},   {"V_Na", cfg_.V_Na},
          {"V_l", cfg_.V_l}, {"V_t", cfg_.V_t},    {"K_p", cfg_.K_p},   {"I_app", cfg_.I_app},
          {"dt_hh", cfg_.dt}};
}

Vec HhModel::default_initial_state() const {
  const Eigen::Index H = Eigen::Index(cfg_.neurons);
  const double V = -65.0;
  Vec z(4 * H);
  const auto m = rates_m(V), n = rates_n(V), h = rates_h(V);
  z.segment(0, H).setConstant(V);
  z.segment(H, H).setConstant(m.a / (m.a + m.b));
  z.segment(2 * H, H).setConstant(n.a / (n.a + n.b));
  z.segment(3 * H, H).setConstant(h.a / (h.a + h.b));
  return z;
}

Vec HhModel::step(const Vec& z, const Vec& x) const {
  const Eigen::Index H = Eigen::Index(cfg_.neurons);
  const auto W = block_map("W");
  const auto Win = block_map("W_in");
  const Vec V = z.segment(0, H), m = z.segment(H, H), n = z.segment(2 * H, H), h = z.segment(3 * H, H);
  Vec s(H);
  for (Eigen::Index i = 0; i < H; ++i) s[i] = logistic((V[i] - cfg_.V_t) / cfg_.K_p);
  const Vec drive = W * s + Win * x;
  Vec out(4 * H);
  for (Eigen::Index i = 0; i < H; ++i) {
    const double Vi = V[i];
    const double ion = cfg_.g_K * std::pow(n[i], 4) * (Vi - cfg_.V_K) +
                       cfg_.g_Na * std::pow(m[i], 3) * h[i] * (Vi - cfg_.V_Na) + cfg_.g_l * (Vi - cfg_.V_l);
    out[i] = Vi + cfg_.dt * (-ion + drive[i] + cfg_.I_app);
    const Rates rm = rates_m(Vi), rn = rates_n(Vi), rh = rates_h(Vi);
    out[H + i] = std::clamp(m[i] + cfg_.dt * (rm.a * (1 - m[i]) - rm.b * m[i]), 0.0, 1.0);
    out[2 * H + i] = std::clamp(n[i] + cfg_.dt * (rn.a * (1 - n[i]) - rn.b * n[i]), 0.0, 1.0);
    out[3 * H + i] = std::clamp(h[i] + cfg_.dt * (rh.a * (1 - h[i]) - rh.b * h[i]), 0.0, 1.0);
  }
  return out;
}

void HhModel::init_cache(ForwardTrace& tr) const {
  tr.cache.assign(kNumCache, Traj3(tr.B(), tr.T(), cfg_.neurons, tr.z.dt()));
}

void HhModel::advance(ForwardTrace& tr, std::size_t t) const {
  const std::size_t H = cfg_.neurons;
  const auto W = block_map("W");
  const auto Win = block_map("W_in");
  const double dt = cfg_.dt;
  auto& c = tr.cache;
  for (std::size_t b = 0; b < tr.B(); ++b) {
    const double* z = tr.z.slice_ptr(b, t);
    for (std::size_t i = 0; i < H; ++i) {
      const double V = z[i];
      const double s = logistic((V - cfg_.V_t) / cfg_.K_p);
      c[kS](b, t, i) = s;
      c[kDS](b, t, i) = s * (1.0 - s) / cfg_.K_p;
      const Rates rm = rates_m(V), rn = rates_n(V), rh = rates_h(V);
      c[kAm](b, t, i) = rm.a; c[kBm](b, t, i) = rm.b; c[kDAm](b, t, i) = rm.da; c[kDBm](b, t, i) = rm.db;
      c[kAn](b, t, i) = rn.a; c[kBn](b, t, i) = rn.b; c[kDAn](b, t, i) = rn.da; c[kDBn](b, t, i) = rn.db;
      c[kAh](b, t, i) = rh.a; c[kBh](b, t, i) = rh.b; c[kDAh](b, t, i) = rh.da; c[kDBh](b, t, i) = rh.db;
    }
  }
  Mat drive = c[kS].step(t) * W.transpose();
  drive.noalias() += tr.inputs.step(t) * Win.transpose();
  for (std::size_t b = 0; b < tr.B(); ++b) {
    const double* z = tr.z.slice_ptr(b, t);
    double* zn = tr.z.slice_ptr(b, t + 1);
    for (std::size_t i = 0; i < H; ++i) {
      const double V = z[i], m = z[H + i], n = z[2 * H + i], h = z[3 * H + i];
      const double ion = cfg_.g_K * n * n * n * n * (V - cfg_.V_K) + cfg_.g_Na * m * m * m * h * (V - cfg_.V_Na) +
                         cfg_.g_l * (V - cfg_.V_l);
      zn[i] = V + dt * (-ion + drive(Eigen::Index(b), Eigen::Index(i)) + cfg_.I_app);
      const double next[3] = {m + dt * (c[kAm](b, t, i) * (1 - m) - c[kBm](b, t, i) * m),
                              n + dt * (c[kAn](b, t, i) * (1 - n) - c[kBn](b, t, i) * n),
                              h + dt * (c[kAh](b, t, i) * (1 - h) - c[kBh](b, t, i) * h)};
      for (std::size_t k = 0; k < 3; ++k) {
        double v = next[k];
        if (v < 0.0 || v > 1.0) {
          v = std::clamp(v, 0.0, 1.0);
          ++tr.clamp_events;
        }
        zn[(k + 1) * H + i] = v;
      }
    }
  }
}

void HhModel::jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                        StepMap out) const {
  const std::size_t H = cfg_.neurons;
  const Eigen::Index n = in.rows(), Hi = Eigen::Index(H);
  const double dt = cfg_.dt;
  const auto& c = tr.cache;
  const Mat ds = c[kDS].step(t).middleRows(Eigen::Index(b0), n);
  const Mat syn = in.leftCols(Hi).cwiseProduct(ds) * block_map("W").transpose();
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t b = b0 + std::size_t(r);
    const double* z = tr.z.slice_ptr(b, t);
    for (std::size_t i = 0; i < H; ++i) {
      const double V = z[i], m = z[H + i], nn = z[2 * H + i], h = z[3 * H + i];
      const Eigen::Index I = Eigen::Index(i);
      const double dV = in(r, I), dm = in(r, Hi + I), dn = in(r, 2 * Hi + I), dh = in(r, 3 * Hi + I);
      const double G = cfg_.g_K * nn * nn * nn * nn + cfg_.g_Na * m * m * m * h + cfg_.g_l;
      out(r, I) = dV + dt * (-G * dV + syn(r, I) - 3.0 * cfg_.g_Na * m * m * h * (V - cfg_.V_Na) * dm -
                             4.0 * cfg_.g_K * nn * nn * nn * (V - cfg_.V_K) * dn -
                             cfg_.g_Na * m * m * m * (V - cfg_.V_Na) * dh);
      out(r, Hi + I) = dm + dt * ((c[kDAm](b, t, i) * (1 - m) - c[kDBm](b, t, i) * m) * dV -
                                  (c[kAm](b, t, i) + c[kBm](b, t, i)) * dm);
      out(r, 2 * Hi + I) = dn + dt * ((c[kDAn](b, t, i) * (1 - nn) - c[kDBn](b, t, i) * nn) * dV -
                                      (c[kAn](b, t, i) + c[kBn](b, t, i)) * dn);
      out(r, 3 * Hi + I) = dh + dt * ((c[kDAh](b, t, i) * (1 - h) - c[kDBh](b, t, i) * h) * dV -
                                      (c[kAh](b, t, i) + c[kBh](b, t, i)) * dh);
    }
  }
}

void HhModel::jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                          StepMap out) const {
  const std::size_t H = cfg_.neurons;
  const Eigen::Index n = in.rows(), Hi = Eigen::Index(H);
  const double dt = cfg_.dt;
  const auto& c = tr.cache;
  const Mat wW = in.leftCols(Hi) * block_map("W");
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t b = b0 + std::size_t(r);
    const double* z = tr.z.slice_ptr(b, t);
    for (std::size_t i = 0; i < H; ++i) {
      const double V = z[i], m = z[H + i], nn = z[2 * H + i], h = z[3 * H + i];
      const Eigen::Index I = Eigen::Index(i);
      const double wV = in(r, I), wm = in(r, Hi + I), wn = in(r, 2 * Hi + I), wh = in(r, 3 * Hi + I);
      const double G = cfg_.g_K * nn * nn * nn * nn + cfg_.g_Na * m * m * m * h + cfg_.g_l;
      const double cm = c[kDAm](b, t, i) * (1 - m) - c[kDBm](b, t, i) * m;
      const double cn = c[kDAn](b, t, i) * (1 - nn) - c[kDBn](b, t, i) * nn;
      const double ch = c[kDAh](b, t, i) * (1 - h) - c[kDBh](b, t, i) * h;
      out(r, I) = wV + dt * (-G * wV + c[kDS](b, t, i) * wW(r, I) + cm * wm + cn * wn + ch * wh);
      out(r, Hi + I) = wm + dt * (-3.0 * cfg_.g_Na * m * m * h * (V - cfg_.V_Na) * wV -
                                  (c[kAm](b, t, i) + c[kBm](b, t, i)) * wm);
      out(r, 2 * Hi + I) = wn + dt * (-4.0 * cfg_.g_K * nn * nn * nn * (V - cfg_.V_K) * wV -
                                      (c[kAn](b, t, i) + c[kBn](b, t, i)) * wn);
      out(r, 3 * Hi + I) = wh + dt * (-cfg_.g_Na * m * m * m * (V - cfg_.V_Na) * wV -
                                      (c[kAh](b, t, i) + c[kBh](b, t, i)) * wh);
    }
  }
}

Vec HhModel::param_vjp(const ForwardTrace& tr, const Traj3& q) const {
  const Eigen::Index H = Eigen::Index(cfg_.neurons);
  Vec g = Vec::Zero(theta_.size());
  auto gW = block_map(block("W"), g);
  auto gWin = block_map(block("W_in"), g);
  for (std::size_t t = 0; t + 1 < tr.T(); ++t) {
    const auto QV = q.step(t).leftCols(H);
    if (QV.isZero(0.0)) continue;
    gW.noalias() += QV.transpose() * tr.cache[kS].step(t);
    gWin.noalias() += QV.transpose() * tr.inputs.step(t);
  }
  g *= cfg_.dt / double(tr.B());
  return g;
}

Traj3 HhModel::param_jvp(const ForwardTrace& tr, const Vec& dtheta) const {
  const Eigen::Index H = Eigen::Index(cfg_.neurons);
  const auto dW = block_map(block("W"), dtheta);
  const auto dWin = block_map(block("W_in"), dtheta);
  Traj3 out(tr.B(), tr.T(), 4 * cfg_.neurons, tr.z.dt());
  for (std::size_t t = 0; t + 1 < tr.T(); ++t) {
    Mat v = tr.cache[kS].step(t) * dW.transpose();
    v.noalias() += tr.inputs.step(t) * dWin.transpose();
    out.step(t).leftCols(H) = cfg_.dt * v;
  }
  return out;
}

}  // namespace kpflow
