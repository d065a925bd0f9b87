// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

// Invariant suite behind `kpflow verify`. Every check records the measured quantity next to its
// tolerance so reports are comparable across builds.

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "core/analysis.hpp"
#include "core/lyapunov.hpp"
#include "core/operators.hpp"
#include "core/runs.hpp"
#include "core/spectral.hpp"
#include "kpflow/version.hpp"

namespace kpflow {

namespace {

using nlohmann::json;

// Wraps a model and perturbs J_z^T, leaving everything else intact. Used to show that the
// gradient and adjointness checks detect a broken Jacobian.
class FaultyModel final : public Model {
 public:
  explicit FaultyModel(std::shared_ptr<const Model> inner) : inner_(std::move(inner)) {
    define_blocks(inner_->blocks());
    theta_ = inner_->params();
  }
  ModelKind kind() const override { return inner_->kind(); }
  std::string kind_name() const override { return inner_->kind_name(); }
  std::size_t state_dim() const override { return inner_->state_dim(); }
  std::size_t input_dim() const override { return inner_->input_dim(); }
  std::unique_ptr<Model> clone() const override { return std::make_unique<FaultyModel>(inner_); }
  bool trainable() const override { return inner_->trainable(); }
  Vec default_initial_state() const override { return inner_->default_initial_state(); }
  Vec step(const Vec& z, const Vec& x) const override { return inner_->step(z, x); }
  void jac_block(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                 StepMap out) const override {
    inner_->jac_block(tr, t, b0, in, out);
  }
  void jac_block_t(const ForwardTrace& tr, std::size_t t, std::size_t b0, ConstStepMap in,
                   StepMap out) const override {
    inner_->jac_block_t(tr, t, b0, in, out);
    out += 1e-3 * in;
  }
  Vec param_vjp(const ForwardTrace& tr, const Traj3& q) const override { return inner_->param_vjp(tr, q); }
  Traj3 param_jvp(const ForwardTrace& tr, const Vec& d) const override { return inner_->param_jvp(tr, d); }
  json hyper_json() const override { return inner_->hyper_json(); }

 protected:
  void init_cache(ForwardTrace&) const override { fail(ErrorCode::kInvalidArgument, "FaultyModel cannot simulate"); }
  void advance(ForwardTrace&, std::size_t) const override {
    fail(ErrorCode::kInvalidArgument, "FaultyModel cannot simulate");
  }

 private:
  std::shared_ptr<const Model> inner_;
};

struct Suite {
  bool faulty = false;
  Rng rng{0};
  json checks = json::array();
  std::size_t failed = 0;

  // Trace of `m`, optionally with the corrupted Jacobian.
  ForwardTrace trace(const Model& m, const Traj3& x) {
    ForwardTrace tr = m.forward(x);
    if (faulty) tr.model = std::make_shared<FaultyModel>(tr.model);
    return tr;
  }

  Traj3 random(std::size_t B, std::size_t T, std::size_t H) {
    Traj3 q(B, T, H);
    for (double& v : q.data()) v = rng.normal();
    return q;
  }
  Vec random_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
  }

  // measured <= tol passes.
  void record(const std::string& name, const std::string& module, double measured, double tol, json detail = {}) {
    const bool ok = std::isfinite(measured) && measured <= tol;
    if (!ok) ++failed;
    json c{{"name", name}, {"module", module}, {"measured", std::isfinite(measured) ? json(measured) : json(nullptr)},
           {"tolerance", tol}, {"passed", ok}};
    if (!detail.is_null()) c["detail"] = detail;
    checks.push_back(c);
  }

  template <typename F>
  void guarded(const std::string& name, const std::string& module, F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      ++failed;
      checks.push_back({{"name", name}, {"module", module}, {"passed", false}, {"error", e.what()}});
    }
  }
};

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }
double rel(const Vec& a, const Vec& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300}); }
double rel(const Traj3& a, const Traj3& b) {
  Traj3 d = a;
  d -= b;
  return norm(d) / std::max({norm(a), norm(b), 1e-300});
}

RnnModel make_rnn(std::size_t H, std::size_t I, double g, double alpha, Rng& rng) {
  RnnConfig c;
  c.hidden = H;
  c.inputs = I;
  c.alpha = alpha;
  RnnModel m(c);
  m.initialize(g, rng);
  Vec th = m.params();
  const auto& b = m.block("b");
  for (std::size_t i = 0; i < b.size(); ++i) th[Eigen::Index(b.offset + i)] = 0.1 * rng.normal();
  m.set_params(th);
  return m;
}

GruModel make_gru(std::size_t H, std::size_t I, double g, Rng& rng) {
  GruConfig c;
  c.hidden = H;
  c.inputs = I;
  GruModel m(c);
  m.initialize(g, rng);
  Vec th = m.params();
  for (const char* n : {"b_c", "b_r", "b_z"}) {
    const auto& b = m.block(n);
    for (std::size_t i = 0; i < b.size(); ++i) th[Eigen::Index(b.offset + i)] = 0.1 * rng.normal();
  }
  m.set_params(th);
  return m;
}

// Worst relative error of J_z v against central differences of step() over a few (b, t).
double jacobian_fd(Suite& s, const Model& m, const Traj3& x, double eps) {
  const ForwardTrace tr = s.trace(m, x);
  double worst = 0.0;
  for (std::size_t b = 0; b < tr.B(); ++b)
    for (std::size_t t = 0; t + 1 < tr.T(); t += std::max<std::size_t>(1, tr.T() / 3)) {
      const Vec v = s.random_vec(Eigen::Index(tr.S()));
      const Vec z = tr.z.at(b, t), xt = x.at(b, t);
      const Vec fd = (m.step(z + eps * v, xt) - m.step(z - eps * v, xt)) / (2.0 * eps);
      worst = std::max(worst, rel(jac_z_apply(tr, b, t, v), fd));
      // Transpose consistency: <J v, w> = <v, J^T w>.
      const Vec w = s.random_vec(Eigen::Index(tr.S()));
      worst = std::max(worst, rel(jac_z_apply(tr, b, t, v).dot(w), v.dot(jac_z_tapply(tr, b, t, w))));
    }
  return worst;
}

double param_adjointness(Suite& s, const Model& m, const Traj3& x) {
  const ForwardTrace tr = s.trace(m, x);
  const Traj3 q = s.random(tr.B(), tr.T(), tr.S());
  const Vec d = s.random_vec(Eigen::Index(m.num_params()));
  const Traj3 jd = param_jvp(tr, d);
  double lhs = 0.0;
  for (std::size_t i = 0; i < q.data().size(); ++i) lhs += jd.data()[i] * q.data()[i];
  lhs /= double(tr.B());
  return rel(lhs, d.dot(param_vjp(tr, q)));
}

// Worst relative error of dL/dtheta . d against central differences along `dirs` directions.
double gradient_fd(Suite& s, const Model& m, std::size_t B, std::size_t T, std::size_t dirs, json& values) {
  const Traj3 x = s.random(B, T, m.input_dim());
  TrialBatch batch;
  batch.inputs = x;
  batch.targets = s.random(B, T, 2);
  batch.mask = Traj3(B, T, 1);
  batch.mask.fill(1.0);
  Rng ro_rng(s.rng.next_u64());
  const Readout ro = Readout::init(2, m.state_dim(), ro_rng);
  const ForwardTrace tr = s.trace(m, x);
  const Vec grad = adjoint_backward(tr, loss_and_err(tr, ro, batch).err).grad;
  auto loss_at = [&](const Vec& th) {
    auto c = m.clone();
    c->set_params(th);
    return loss_and_err(c->forward(x), ro, batch).loss;
  };
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < dirs; ++k) {
    const Vec d = s.random_vec(Eigen::Index(m.num_params()));
    const double fd = (loss_at(m.params() + eps * d) - loss_at(m.params() - eps * d)) / (2.0 * eps);
    const double an = grad.dot(d);
    values.push_back({{"fd", fd}, {"adjoint", an}});
    worst = std::max(worst, rel(an, fd));
  }
  return worst;
}

}  // namespace

json run_invariant_suite(const std::string& fault, std::uint64_t seed) {
  require(fault == "none" || fault == "jacobian", ErrorCode::kConfig,
          "config error at '/verify/fault': unknown fault '" + fault + "'");
  Suite s;
  s.faulty = fault == "jacobian";
  s.rng = Rng(mix_seed(seed ^ 0x766572696679ull));

  s.guarded("inner_symmetry", "trajspace", [&] {
    const Traj3 q = s.random(3, 5, 2), r = s.random(3, 5, 2);
    s.record("inner_symmetry", "trajspace", rel(inner(q, r), inner(r, q)), 1e-12);
  });

  s.guarded("rnn_jacobian_fd", "models", [&] {
    const RnnModel m = make_rnn(6, 2, 1.5, 0.7, s.rng);
    s.record("rnn_jacobian_fd", "models", jacobian_fd(s, m, s.random(2, 6, 2), 1e-6), 1e-6);
  });
  s.guarded("gru_jacobian_fd", "models", [&] {
    const GruModel m = make_gru(5, 2, 1.5, s.rng);
    s.record("gru_jacobian_fd", "models", jacobian_fd(s, m, s.random(2, 6, 2), 1e-6), 1e-6);
  });
  s.guarded("hh_jacobian_fd", "models", [&] {
    HhConfig c;
    c.neurons = 2;
    HhModel m(c);
    m.initialize(1.0, s.rng);
    Traj3 x = s.random(2, 40, 2);
    s.record("hh_jacobian_fd", "models", jacobian_fd(s, m, x, 1e-6), 1e-5);
  });
  s.guarded("param_adjointness", "models", [&] {
    const RnnModel r = make_rnn(6, 2, 1.5, 1.0, s.rng);
    const GruModel g = make_gru(5, 2, 1.5, s.rng);
    const double e = std::max(param_adjointness(s, r, s.random(3, 5, 2)), param_adjointness(s, g, s.random(3, 5, 2)));
    s.record("param_adjointness", "models", e, 1e-10);
  });

  s.guarded("gradient_fd_rnn", "training", [&] {
    const RnnModel m = make_rnn(16, 2, 1.5, 1.0, s.rng);
    json vals = json::array();
    const double e = gradient_fd(s, m, 4, 20, 10, vals);
    s.record("gradient_fd_rnn", "training", e, 1e-6, vals);
  });
  s.guarded("gradient_fd_gru", "training", [&] {
    const GruModel m = make_gru(12, 2, 1.5, s.rng);
    json vals = json::array();
    const double e = gradient_fd(s, m, 3, 15, 10, vals);
    s.record("gradient_fd_gru", "training", e, 1e-6, vals);
  });

  s.guarded("p_adjointness", "operators", [&] {
    const RnnModel m = make_rnn(6, 2, 1.5, 1.0, s.rng);
    const ForwardTrace tr = s.trace(m, s.random(3, 8, 2));
    const Operator P = make_p(tr), Ps = make_p_adjoint(tr);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      Traj3 q = s.random(3, 8, 6), r = s.random(3, 8, 6);
      q.zero_time(7);
      worst = std::max(worst, rel(inner(P.apply(q), r), inner(q, Ps.apply(r))));
    }
    s.record("p_adjointness", "operators", worst, 1e-10);
  });
  s.guarded("k_psd", "operators", [&] {
    const RnnModel m = make_rnn(6, 2, 1.5, 1.0, s.rng);
    const ForwardTrace tr = s.trace(m, s.random(3, 8, 2));
    const Operator K = make_k(tr);
    SvdOptions o;
    o.k = 1;
    o.want_vectors = false;
    const double lmax = top_svd(K, o).singular_values.at(0);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) worst = std::max(worst, -rayleigh(K, s.random(3, 8, 6)) / lmax);
    s.record("k_psd", "operators", worst, 1e-10, {{"lambda_max", lmax}});
  });
  s.guarded("factorization", "operators", [&] {
    const RnnModel m = make_rnn(4, 2, 0.8, 1.0, s.rng);
    const ForwardTrace tr = s.trace(m, s.random(2, 10, 2));
    const Fundamental U(tr, false);
    Traj3 q = s.random(2, 10, 4);
    q.zero_time(9);
    s.record("factorization", "operators", rel(make_p(tr).apply(q), make_factorized_p(U).apply(q)), 1e-6,
             {{"max_condition", U.max_condition()}});
  });
  s.guarded("volterra_spectrum", "operators", [&] {
    const std::size_t T = 200;
    const double dt = 1.0 / double(T);
    const Operator V = make_volterra({1, T, 1}, dt, VolterraConvention::kInclusive);
    SvdOptions o;
    o.k = 5;
    o.force_matrix_free = true;
    o.want_vectors = false;
    const SpectralSummary sv = top_svd(V, o);
    Mat L = Mat::Zero(Eigen::Index(T), Eigen::Index(T));
    for (Eigen::Index i = 0; i < Eigen::Index(T); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) L(i, j) = dt;
    const Eigen::JacobiSVD<Eigen::MatrixXd> dense(L);
    double worst_dense = 0.0, worst_cont = 0.0;
    json vals = json::array();
    for (std::size_t j = 0; j < 5; ++j) {
      const double cont = 2.0 / ((2.0 * double(j + 1) - 1.0) * std::numbers::pi);
      const double d = dense.singularValues()[Eigen::Index(j)];
      const double m = sv.singular_values.at(j);
      worst_dense = std::max(worst_dense, rel(m, d));
      worst_cont = std::max(worst_cont, rel(m, cont));
      vals.push_back({{"j", j + 1}, {"lanczos", m}, {"dense", d}, {"continuous", cont}});
    }
    s.record("volterra_vs_dense", "operators", worst_dense, 1e-8, vals);
    s.record("volterra_vs_continuous", "operators", worst_cont, 0.02, vals);
  });
  s.guarded("lanczos_vs_dense", "spectral", [&] {
    const RnnModel m = make_rnn(4, 2, 1.5, 1.0, s.rng);
    const ForwardTrace tr = s.trace(m, s.random(3, 8, 2));
    const Operator K = make_k(tr);
    SvdOptions o;
    o.k = 5;
    o.want_vectors = false;
    o.force_matrix_free = true;
    const SpectralSummary mf = top_svd(K, o);
    const Eigen::JacobiSVD<Eigen::MatrixXd> dense(materialize(K));
    // Euclidean matrix of an operator with equal in/out weights has the same singular values.
    double worst = 0.0;
    for (std::size_t j = 0; j < 5; ++j)
      worst = std::max(worst, rel(mf.singular_values.at(j), dense.singularValues()[Eigen::Index(j)]));
    s.record("lanczos_vs_dense", "spectral", worst, 1e-8);
  });

  s.guarded("flow_identity", "analysis", [&] {
    const RnnModel m = make_rnn(8, 2, 1.2, 1.0, s.rng);
    TrialBatch batch;
    batch.inputs = s.random(4, 10, 2);
    batch.targets = s.random(4, 10, 2);
    batch.mask = Traj3(4, 10, 1);
    batch.mask.fill(1.0);
    Rng ro_rng(s.rng.next_u64());
    const Readout ro = Readout::init(2, 8, ro_rng);
    const auto checks = verify_flow(m, ro, batch, {1e-4});
    s.record("flow_identity", "analysis", checks.at(0).rel_err, 0.05);
  });
  s.guarded("lyapunov_diagonal", "analysis", [&] {
    RnnConfig c;
    c.hidden = 3;
    c.inputs = 1;
    c.alpha = 0.5;
    const RnnModel m(c);  // W = 0: J_z = (1 - alpha) I
    const LyapunovReport rep = lyapunov_spectrum(s.trace(m, s.random(2, 12, 1)), true);
    double worst = 0.0;
    for (const auto& lam : rep.per_trial)
      for (double l : lam) worst = std::max(worst, std::abs(l - std::log(0.5)));
    for (double l : rep.consensus) worst = std::max(worst, std::abs(l - std::log(0.5)));
    s.record("lyapunov_diagonal", "analysis", worst, 1e-10);
  });
  s.guarded("kaplan_yorke", "analysis", [&] {
    s.record("kaplan_yorke", "analysis", std::abs(kaplan_yorke({0.5, -1.0}) - 1.5), 1e-12);
  });

  return {{"suite", "kpflow-invariants"},
          {"version", kVersion},
          {"fault", fault},
          {"seed", seed},
          {"checks", s.checks},
          {"failed", s.failed},
          {"passed", s.failed == 0}};
}

}  // namespace kpflow
