// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

// Acceptance harness. Prints one PASS/FAIL line per criterion and exits non-zero if any
// selected criterion fails.

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "core/analysis.hpp"
#include "core/config.hpp"
#include "core/lyapunov.hpp"
#include "core/operators.hpp"
#include "core/runs.hpp"
#include "core/spectral.hpp"
#include "test_util.hpp"

using namespace kpflow;
using namespace kpflow::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rows of a header-first CSV as column-name maps.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::vector<std::string> head;
  std::vector<std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  if (std::getline(in, line)) head = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < head.size(); ++i) row[head[i]] = i < cells.size() ? cells[i] : std::string();
    rows.push_back(std::move(row));
  }
  return rows;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- 1 ------------------------------------------------------------------------------------------

double gradient_fd_error(const Model& m, std::size_t B, std::size_t T, Rng& rng) {
  const TrialBatch batch = random_batch(rng, B, T, m.input_dim(), 2);
  const Readout ro = Readout::init(2, m.state_dim(), rng);
  const ForwardTrace tr = m.forward(batch.inputs);
  const Vec grad = adjoint_backward(tr, loss_and_err(tr, ro, batch).err).grad;
  auto loss_at = [&](const Vec& th) {
    auto c = m.clone();
    c->set_params(th);
    return loss_and_err(c->forward(batch.inputs), ro, batch).loss;
  };
  double worst = 0.0;
  const double eps = 1e-5;
  for (int k = 0; k < 10; ++k) {
    const Vec d = random_vec(rng, m.num_params());
    const double fd = (loss_at(m.params() + eps * d) - loss_at(m.params() - eps * d)) / (2.0 * eps);
    worst = std::max(worst, rel_err(grad.dot(d), fd));
  }
  return worst;
}

Verdict criterion1() {
  Rng rng(mix_seed(101));
  const double er = gradient_fd_error(make_rnn(rng, 16, 2, 1.5), 4, 20, rng);
  const double eg = gradient_fd_error(make_gru(rng, 12, 2, 1.5), 3, 15, rng);
  return {er <= 1e-6 && eg <= 1e-6, fmt("rnn max rel err %.2e, gru %.2e (limit 1e-6)", er, eg)};
}

// ---- 2 ------------------------------------------------------------------------------------------

Verdict criterion2() {
  Rng rng(mix_seed(102));
  const RnnModel m = make_rnn(rng, 16, 2, 1.2);
  TaskSpec spec;
  spec.T_stim = spec.T_mem = spec.T_resp = 6;
  const TrialBatch batch = gen_batch(spec, 6, 102);
  const Readout ro = Readout::init(2, 16, rng);
  const auto checks = verify_flow(m, ro, batch, {1e-3, 1e-4, 1e-5, 1e-6});
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& c : checks) {
    const double x = std::log(c.eta), y = std::log(c.rel_err);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double n = double(checks.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double at = checks[1].rel_err;
  return {at <= 0.05 && slope >= 0.8 && slope <= 1.2,
          fmt("rel err %.3e at eta=1e-4 (limit 0.05), log-log slope %.3f (range [0.8, 1.2])", at, slope)};
}

// ---- 3 ------------------------------------------------------------------------------------------

Verdict criterion3() {
  Rng rng(mix_seed(103));
  double worst_adj = 0.0, worst_psd = 0.0;
  auto probe = [&](const Model& m, std::size_t B, std::size_t T) {
    const ForwardTrace tr = m.forward(random_traj(rng, B, T, m.input_dim()));
    const Operator P = make_p(tr), Ps = make_p_adjoint(tr), K = make_k(tr);
    SvdOptions o;
    o.k = 1;
    o.want_vectors = false;
    const double lmax = top_svd(K, o).singular_values.at(0);
    for (int k = 0; k < 100; ++k) {
      const Traj3 q = random_traj(rng, B, T, m.state_dim()), r = random_traj(rng, B, T, m.state_dim());
      worst_adj = std::max(worst_adj, rel_err(inner(P.apply(q), r), inner(q, Ps.apply(r))));
      worst_psd = std::min(worst_psd, inner(K.apply(q), q) / inner(q, q) / lmax);
    }
  };
  probe(make_rnn(rng, 16, 2, 1.5), 4, 20);
  probe(make_gru(rng, 12, 2, 1.5), 3, 15);
  return {worst_adj <= 1e-10 && worst_psd >= -1e-10,
          fmt("max adjointness rel err %.2e (limit 1e-10), min Rayleigh/lambda_max %.2e (limit -1e-10)", worst_adj,
              worst_psd)};
}

// ---- 4 ------------------------------------------------------------------------------------------

Verdict criterion4() {
  Rng rng(mix_seed(104));
  // Factorisation on a well-conditioned trace.
  const RnnModel m = make_rnn(rng, 8, 2, 0.5, 0.2);
  const ForwardTrace tr = m.forward(random_traj(rng, 3, 15, 2));
  double fact = 0.0;
  for (bool qr : {false, true}) {
    const Operator Pf = make_factorized_p(Fundamental(tr, qr));
    const Operator P = make_p(tr);
    for (int k = 0; k < 10; ++k) {
      Traj3 q = random_traj(rng, 3, 15, 8);
      q.zero_time(14);
      fact = std::max(fact, rel_err(Pf.apply(q), P.apply(q)));
    }
  }
  // Fundamental operator of constant diagonal Jacobians.
  const std::vector<double> lam{0.25, -0.1, -0.7, -1.3};
  Mat A = Mat::Zero(4, 4);
  for (int i = 0; i < 4; ++i) A(i, i) = std::exp(lam[std::size_t(i)]);
  const ForwardTrace lt = LinearModel(A, 4).forward(random_traj(rng, 2, 12, 4));
  double fund = 0.0;
  const Fundamental U(lt, true);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 12; ++t) {
      const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(U.matrix(b, t)).singularValues();
      for (int j = 0; j < 4; ++j) fund = std::max(fund, rel_err(sv[j], std::exp(lam[std::size_t(j)] * double(t))));
    }
  // Volterra spectrum.
  const std::size_t T = 200;
  const double dt = 1.0 / double(T);
  SvdOptions o;
  o.k = 5;
  o.want_vectors = false;
  o.force_matrix_free = true;
  const SpectralSummary s = top_svd(make_volterra({1, T, 1}, dt, VolterraConvention::kInclusive), o);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(Eigen::Index(T), Eigen::Index(T));
  for (Eigen::Index i = 0; i < Eigen::Index(T); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) L(i, j) = dt;
  const Eigen::VectorXd dense = Eigen::JacobiSVD<Eigen::MatrixXd>(L).singularValues();
  double vc = 0.0, vd = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    vc = std::max(vc, rel_err(s.singular_values.at(j), 2.0 / ((2.0 * double(j + 1) - 1.0) * std::numbers::pi)));
    vd = std::max(vd, std::abs(s.singular_values.at(j) - dense[Eigen::Index(j)]));
  }
  return {fact <= 1e-6 && fund <= 1e-12 && vc <= 0.02 && vd <= 1e-8,
          fmt("factorisation rel err %.2e (1e-6), exp(lambda t) rel err %.2e, Volterra vs continuous %.2e (0.02), "
              "vs dense %.2e (1e-8)",
              fact, fund, vc, vd)};
}

// ---- 5 ------------------------------------------------------------------------------------------

Verdict criterion5() {
  Rng rng(mix_seed(105));
  const std::size_t H = 32, I = 6, B = 8, T = 30;
  std::string detail;
  bool ok = true;
  for (std::size_t rx : {1u, 2u, 4u}) {
    const RnnModel m = make_rnn(rng, H, I, 1.0);
    // Inputs x[b, t] = A c[b, t] with A of rank rx.
    Mat Amix = Mat::Zero(Eigen::Index(I), Eigen::Index(rx));
    for (Eigen::Index i = 0; i < Amix.size(); ++i) Amix.data()[i] = rng.normal();
    Traj3 x(B, T, I);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        Vec c(static_cast<Eigen::Index>(rx));
        for (auto& v : c) v = rng.normal();
        x.at(b, t) = Amix * c;
      }
    const ForwardTrace tr = m.forward(x);
    Traj3 s = tr.z;
    for (auto& v : s.data()) v = std::tanh(v);
    const std::size_t rz = effdim(s, 0.95);
    SvdOptions o;
    o.k = 1;
    o.want_vectors = false;
    const SpectralSummary k = top_svd(average(make_k(tr), AxisSet(kUnitAxis)), o);
    const std::size_t rk = effective_rank(k.singular_values, Energy::kSv, 0.95);
    ok = ok && rk <= rx + rz + 1;
    detail += fmt("%sr_x=%zu: effrank(K)=%zu <= %zu", detail.empty() ? "" : "; ", rx, rk, rx + rz + 1);
  }
  return {ok, detail};
}

// ---- 6 ------------------------------------------------------------------------------------------

Verdict criterion6() {
  std::string detail;
  std::size_t passes = 0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.model.H = 64;
    cfg.model.g = 1.0;
    cfg.task.eval_size = 30;
    cfg.task.pool_size = 30;
    const auto model = build_model(cfg);
    const TaskData data = build_task_data(cfg);
    const ConsensusRanks r = consensus_effranks(model->forward(data.eval.inputs), 0.95);
    const bool ok = double(r.K_sv) <= 0.3 * double(r.P_sv_squared);
    passes += ok ? 1 : 0;
    detail += fmt("%sseed %llu: K %zu vs P %zu (ratio %.3f)", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(seed), r.K_sv, r.P_sv_squared,
                  double(r.K_sv) / double(std::max<std::size_t>(1, r.P_sv_squared)));
  }
  return {passes == 3, detail + fmt(" [%zu/3 seeds within 0.3]", passes)};
}

// ---- 7 ------------------------------------------------------------------------------------------

Verdict criterion7(const fs::path& work) {
  const RunConfig cfg = command_defaults("experiment1");
  fs::path root;
  try {
    root = cmd_experiment1(cfg, work / "criterion7", 1);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDivergence) throw;
    root = work / "criterion7" / cfg.run_id;
  }
  const auto rows = read_csv(root / "summary.csv");
  // Never-converged runs rank after every converged one.
  const double never = std::numeric_limits<double>::infinity();
  std::map<double, std::vector<double>> iters;
  std::map<std::uint64_t, std::map<double, double>> k_after;
  for (const auto& r : rows) {
    const double g = std::stod(r.at("g"));
    const std::string& c = r.at("converged_iter");
    iters[g].push_back(c.empty() ? never : std::stod(c));
    if (!r.at("effrank_K_after").empty())
      k_after[std::stoull(r.at("seed"))][g] = std::stod(r.at("effrank_K_after"));
  }
  std::string detail = "median convergence:";
  bool monotone = true;
  double prev = never;
  bool first = true;
  for (const double g : cfg.experiment1.g_list) {
    const double med = median(iters[g]);
    detail += fmt(" g=%g %s", g, std::isinf(med) ? "never" : fmt("%.0f", med).c_str());
    if (!first && med > prev) monotone = false;
    prev = med;
    first = false;
  }
  std::size_t within = 0;
  for (const auto& [seed, by_g] : k_after) {
    if (by_g.size() != cfg.experiment1.g_list.size()) continue;
    double lo = never, hi = 0.0;
    for (const auto& [g, k] : by_g) lo = std::min(lo, k), hi = std::max(hi, k);
    within += hi <= 2.0 * lo ? 1 : 0;
  }
  detail += fmt("; non-increasing: %s; effrank(K) after within x2 in %zu/3 seed-triples", monotone ? "yes" : "no",
                within);
  return {monotone && within >= 2, detail};
}

// ---- 8 ------------------------------------------------------------------------------------------

Verdict criterion8(const fs::path& work) {
  const RunConfig cfg = command_defaults("experiment2");
  fs::path root;
  try {
    root = cmd_experiment2(cfg, work / "criterion8", 1);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDivergence) throw;
    root = work / "criterion8" / cfg.run_id;
  }
  std::size_t both = 0;
  std::string detail;
  for (const auto& r : read_csv(root / "summary.csv")) {
    auto num = [&](const char* k) { return r.at(k).empty() ? std::nan("") : std::stod(r.at(k)); };
    const double cpa = num("cum_pro_anti"), cmd = num("cum_mem_del");
    const double apa = num("align_pro_anti"), amd = num("align_mem_del");
    const bool ok = cpa > cmd && apa > amd;
    both += ok ? 1 : 0;
    detail += fmt("%sseed %s: cum %.3f vs %.3f, align %.3f vs %.3f", detail.empty() ? "" : "; ",
                  r.at("seed").c_str(), cpa, cmd, apa, amd);
  }
  return {both >= 2, detail + fmt(" [pro/anti ahead on both in %zu/3 seeds]", both)};
}

// ---- 9 ------------------------------------------------------------------------------------------

Verdict criterion9() {
  Rng rng(mix_seed(109));
  double diag = 0.0, rot = 0.0;
  Mat D = Mat::Zero(3, 3);
  D.diagonal() << 1.4, 0.7, 0.2;
  const LyapunovReport rd = lyapunov_spectrum(LinearModel(D, 3).forward(random_traj(rng, 3, 25, 3)));
  const std::vector<double> ed{std::log(1.4), std::log(0.7), std::log(0.2)};
  for (std::size_t i = 0; i < 3; ++i) {
    diag = std::max(diag, std::abs(rd.consensus[i] - ed[i]));
    for (const auto& pt : rd.per_trial) diag = std::max(diag, std::abs(pt[i] - ed[i]));
  }
  const double r = 0.8, th = 1.1;
  Mat R(2, 2);
  R << r * std::cos(th), -r * std::sin(th), r * std::sin(th), r * std::cos(th);
  const LyapunovReport rr = lyapunov_spectrum(LinearModel(R, 2).forward(random_traj(rng, 2, 30, 2)));
  for (const auto& pt : rr.per_trial)
    for (double l : pt) rot = std::max(rot, std::abs(l - std::log(r)));
  for (double l : rr.consensus) rot = std::max(rot, std::abs(l - std::log(r)));

  const bool ky = kaplan_yorke({0.5, -1.0}) == 1.5 && kaplan_yorke({1.0, -0.5, -1.0}) == 2.5 &&
                  kaplan_yorke({-0.1, -0.2}) == 0.0 && kaplan_yorke({0.2, 0.1}) == 2.0;

  const RnnModel m = make_rnn(rng, 8, 2, 1.5, 0.5);
  const Traj3 one = random_traj(rng, 1, 30, 2);
  Traj3 x(5, 30, 2);
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t t = 0; t < 30; ++t) x.at(b, t) = one.at(0, t);
  const LyapunovReport rh = lyapunov_spectrum(m.forward(x));
  double homo = 0.0;
  for (std::size_t i = 0; i < 8; ++i)
    homo = std::max(homo, std::abs(rh.consensus[i] - rh.per_trial_svd[0][i]) /
                              std::max(std::abs(rh.per_trial_svd[0][i]), 1e-300));
  return {diag <= 1e-10 && rot <= 1e-10 && ky && homo <= 1e-8,
          fmt("diagonal err %.2e, rotation err %.2e (1e-10), KY %s, homogeneous consensus rel err %.2e (1e-8)", diag,
              rot, ky ? "exact" : "wrong", homo)};
}

// ---- 10 -----------------------------------------------------------------------------------------

double hh_jacobian_error(std::size_t H, Rng& rng) {
  HhConfig cfg;
  cfg.neurons = H;
  HhModel m(cfg);
  m.initialize(1.0, rng);
  const ForwardTrace tr = m.forward(random_traj(rng, 2, 60, 2));
  const std::size_t S = tr.S();
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t + 1 < tr.T(); t += 7) {
      const Vec z = tr.z.at(b, t), xin = tr.inputs.at(b, t);
      for (int k = 0; k < 3; ++k) {
        const Vec v = random_vec(rng, S), w = random_vec(rng, S);
        const Vec fd = (m.step(z + eps * v, xin) - m.step(z - eps * v, xin)) / (2.0 * eps);
        worst = std::max(worst, rel_err(jac_z_apply(tr, b, t, v), fd));
        Vec fdt(static_cast<Eigen::Index>(S));
        for (std::size_t i = 0; i < S; ++i) {
          Vec e = Vec::Zero(Eigen::Index(S));
          e[Eigen::Index(i)] = eps;
          fdt[Eigen::Index(i)] = w.dot(m.step(z + e, xin) - m.step(z - e, xin)) / (2.0 * eps);
        }
        worst = std::max(worst, rel_err(jac_z_tapply(tr, b, t, w), fdt));
      }
    }
  return worst;
}

Verdict criterion10() {
  Rng rng(mix_seed(110));
  const double j1 = hh_jacobian_error(1, rng), j4 = hh_jacobian_error(4, rng);

  HhConfig cfg;
  cfg.neurons = 3;
  HhModel m(cfg);
  m.initialize(1.0, rng);
  const std::size_t B = 2, T = 6, H = 3, S = 4 * H;
  const ForwardTrace tr = m.forward(random_traj(rng, B, T, 2));
  const Operator K = make_k(tr);
  const Mat M = materialize(K);
  // K q on the voltage rows: dt^2 / B * sum (x.x' + s(V).s(V')) q_V over transition slots.
  Mat expect = Mat::Zero(M.rows(), M.cols());
  auto idx = [&](std::size_t b, std::size_t t, std::size_t h) { return Eigen::Index((b * T + t) * S + h); };
  auto sig = [&](std::size_t b, std::size_t t) {
    Vec v = tr.z.at(b, t).head(Eigen::Index(H));
    for (auto& e : v) e = 1.0 / (1.0 + std::exp(-(e - cfg.V_t) / cfg.K_p));
    return v;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t + 1 < T; ++t)
      for (std::size_t b2 = 0; b2 < B; ++b2)
        for (std::size_t t2 = 0; t2 + 1 < T; ++t2) {
          const double k = (Vec(tr.inputs.at(b, t)).dot(Vec(tr.inputs.at(b2, t2))) + sig(b, t).dot(sig(b2, t2))) *
                           cfg.dt * cfg.dt / double(B);
          for (std::size_t h = 0; h < H; ++h) expect(idx(b, t, h), idx(b2, t2, h)) = k;
        }
  const double kern = (M - expect).norm() / expect.norm();

  const double lmax = Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (M + M.transpose())).eigenvalues().maxCoeff();
  double psd = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Traj3 q = random_traj(rng, B, T, S);
    psd = std::min(psd, inner(K.apply(q), q) / inner(q, q) / lmax);
  }
  return {j1 <= 1e-5 && j4 <= 1e-5 && kern <= 1e-8 && psd >= -1e-10,
          fmt("Jacobian FD rel err H=1 %.2e, H=4 %.2e (1e-5), kernel rel err %.2e (1e-8), min Rayleigh/lambda_max "
              "%.2e",
              j1, j4, kern, psd)};
}

// ---- 11 -----------------------------------------------------------------------------------------

// Every regular file below root, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

Verdict criterion11(const fs::path& work) {
  const std::string small_task = R"("task": {"T_stim": 8, "T_mem": 8, "T_resp": 8, "pool_size": 64, "eval_size": 12})";
  const std::string train_cfg = R"({"run_id": "train", "seed": 4, "model": {"H": 16},)" + small_task +
                                R"(, "train": {"batch_size": 16, "max_iters": 40, "snapshot_every": 20},
      "analysis": {"spectra_every": 20, "spectra_trials": 8, "lyapunov": true}})";
  const std::string e1_cfg = R"({"model": {"H": 12}, )" + small_task +
                             R"(, "train": {"batch_size": 16, "max_iters": 30},
      "analysis": {"spectra_trials": 6}, "experiment1": {"g_list": [0.5, 2.0], "seeds": [0, 1]}})";
  const std::string e2_cfg = R"({"model": {"H": 12}, "task": {"kind": "multitask", "T_ctx": 4, "T_stim": 5,
      "T_mem": 5, "T_resp": 5, "pool_size": 64, "eval_size": 8}, "train": {"batch_size": 16, "max_iters": 30},
      "experiment2": {"seeds": [0, 1], "snapshot_every": 10, "analysis_trials_per_task": 4}})";

  // The spectra command reads a snapshot by path; both repetitions use the same one so the
  // recorded path matches.
  const fs::path shared = work / "criterion11" / "shared";
  fs::remove_all(shared);
  const fs::path snap = cmd_train(parse_run_config(train_cfg, std::nullopt, "train"), shared) / "snapshots" / "final";
  const std::string spectra_cfg = R"({"run_id": "spectra", "spectra": {"snapshot": ")" + snap.generic_string() +
                                  R"(", "operator": "K", "k": 4}, "model": {"H": 16}, )" + small_task + "}";
  auto run_all = [&](const fs::path& out) {
    fs::remove_all(out);
    cmd_train(parse_run_config(train_cfg, std::nullopt, "train"), out);
    cmd_experiment1(parse_run_config(e1_cfg, std::nullopt, "experiment1"), out, 2);
    cmd_experiment2(parse_run_config(e2_cfg, std::nullopt, "experiment2"), out, 1);
    cmd_verify(parse_run_config(R"({"run_id": "verify"})", std::nullopt, "verify"), out);
    cmd_spectra(parse_run_config(spectra_cfg, std::nullopt, "spectra"), out);
  };
  run_all(work / "criterion11" / "a");
  run_all(work / "criterion11" / "b");
  const auto a = tree(work / "criterion11" / "a"), b = tree(work / "criterion11" / "b");
  std::size_t differing = 0;
  std::string first;
  for (const auto& [path, bytes] : a) {
    const auto it = b.find(path);
    if (it == b.end() || it->second != bytes) {
      if (differing++ == 0) first = path;
    }
  }
  differing += b.size() > a.size() ? b.size() - a.size() : 0;
  return {differing == 0 && !a.empty(),
          fmt("%zu files compared across train, experiment1, experiment2, verify, spectra; %zu differ%s%s", a.size(),
              differing, first.empty() ? "" : ", first: ", first.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kpflow acceptance criteria"};
  int only = 0;
  std::string work = "acceptance_work";
  app.add_option("--criterion", only, "Run a single criterion (1-11); 0 runs all")->check(CLI::Range(0, 11));
  app.add_option("--work", work, "Scratch directory for command outputs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  // Runtime limits in seconds; 0 means none stated.
  const std::vector<std::pair<std::function<Verdict()>, double>> criteria{
      {criterion1, 10},
      {criterion2, 30},
      {criterion3, 10},
      {criterion4, 20},
      {criterion5, 30},
      {criterion6, 300},
      {[&] { return criterion7(work); }, 7200},
      {[&] { return criterion8(work); }, 7200},
      {criterion9, 10},
      {criterion10, 30},
      {[&] { return criterion11(work); }, 0},
  };
  int failed = 0;
  for (int i = 1; i <= int(criteria.size()); ++i) {
    if (only != 0 && only != i) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[std::size_t(i - 1)].first();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double limit = criteria[std::size_t(i - 1)].second;
    if (limit > 0 && secs > limit) {
      v.pass = false;
      v.detail += fmt("; runtime %.1f s over the %.0f s limit", secs, limit);
    }
    std::printf("criterion %d: %s: %s (%.1f s)\n", i, v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
