// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "kpflow/kpflow.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "core/config.hpp"
#include "core/error.hpp"
#include "core/kpf_io.hpp"
#include "core/operators.hpp"
#include "core/runs.hpp"
#include "core/spectral.hpp"
#include "kpflow/schema_embed.hpp"
#include "kpflow/version.hpp"

struct kpf_tensor {
  kpflow::Traj3 t;
};
struct kpf_model {
  std::unique_ptr<kpflow::Model> m;
};
struct kpf_trace {
  kpflow::ForwardTrace tr;
};
struct kpf_operator {
  kpflow::Operator op;
};

namespace {

thread_local std::string g_last_error;

kpf_status to_status(kpflow::ErrorCode c) {
  using kpflow::ErrorCode;
  switch (c) {
    case ErrorCode::kInvalidArgument: return KPF_ERR_INVALID_ARGUMENT;
    case ErrorCode::kDimension: return KPF_ERR_DIMENSION;
    case ErrorCode::kConfig: return KPF_ERR_CONFIG;
    case ErrorCode::kDivergence: return KPF_ERR_DIVERGENCE;
    case ErrorCode::kVerification: return KPF_ERR_VERIFICATION;
    case ErrorCode::kIo: return KPF_ERR_IO;
    case ErrorCode::kSingular: return KPF_ERR_SINGULAR;
    case ErrorCode::kUndefined: return KPF_ERR_UNDEFINED;
    case ErrorCode::kNotConverged: return KPF_ERR_NOT_CONVERGED;
  }
  return KPF_ERR_INTERNAL;
}

template <typename F>
kpf_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return KPF_OK;
  } catch (const kpflow::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return KPF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return KPF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return KPF_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) kpflow::fail(kpflow::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* kpf_version(void) { return kpflow::kVersion; }
const char* kpf_last_error(void) { return g_last_error.c_str(); }

const char* kpf_status_name(kpf_status s) {
  switch (s) {
    case KPF_OK: return "ok";
    case KPF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case KPF_ERR_DIMENSION: return "dimension error";
    case KPF_ERR_CONFIG: return "config error";
    case KPF_ERR_DIVERGENCE: return "divergence";
    case KPF_ERR_VERIFICATION: return "verification failure";
    case KPF_ERR_IO: return "i/o error";
    case KPF_ERR_SINGULAR: return "singular";
    case KPF_ERR_UNDEFINED: return "undefined";
    case KPF_ERR_NOT_CONVERGED: return "not converged";
    case KPF_ERR_INTERNAL: return "internal error";
  }
  return "unknown";
}

int kpf_exit_code(kpf_status s) {
  switch (s) {
    case KPF_OK: return 0;
    case KPF_ERR_CONFIG: return 2;
    case KPF_ERR_DIVERGENCE: return 3;
    case KPF_ERR_VERIFICATION: return 4;
    default: return 1;
  }
}

kpf_status kpf_tensor_create(size_t B, size_t T, size_t H, double dt, const double* data, kpf_tensor** out) {
  return guard([&] {
    need(out, "out");
    auto t = std::make_unique<kpf_tensor>();
    t->t = kpflow::Traj3(B, T, H, dt);
    if (data) std::memcpy(t->t.data().data(), data, B * T * H * sizeof(double));
    *out = t.release();
  });
}

void kpf_tensor_destroy(kpf_tensor* t) { delete t; }

kpf_status kpf_tensor_shape(const kpf_tensor* t, size_t* B, size_t* T, size_t* H, double* dt) {
  return guard([&] {
    need(t, "tensor");
    if (B) *B = t->t.B();
    if (T) *T = t->t.T();
    if (H) *H = t->t.H();
    if (dt) *dt = t->t.dt();
  });
}

kpf_status kpf_tensor_copy_out(const kpf_tensor* t, double* dst, size_t n) {
  return guard([&] {
    need(t, "tensor");
    need(dst, "dst");
    kpflow::require(n == t->t.data().size(), kpflow::ErrorCode::kDimension, "kpf_tensor_copy_out: wrong length");
    std::memcpy(dst, t->t.data().data(), n * sizeof(double));
  });
}

kpf_status kpf_tensor_read(const char* path, kpf_tensor** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    auto t = std::make_unique<kpf_tensor>();
    t->t = kpflow::traj_from_kpf(kpflow::read_kpf(path));
    *out = t.release();
  });
}

kpf_status kpf_tensor_write(const kpf_tensor* t, const char* path) {
  return guard([&] {
    need(t, "tensor");
    need(path, "path");
    kpflow::write_kpf(path, kpflow::to_kpf(t->t));
  });
}

kpf_status kpf_inner(const kpf_tensor* q, const kpf_tensor* r, double* out) {
  return guard([&] {
    need(q, "q");
    need(r, "r");
    need(out, "out");
    *out = kpflow::inner(q->t, r->t);
  });
}

kpf_status kpf_cosine_sim(const kpf_tensor* q, const kpf_tensor* r, double* out) {
  return guard([&] {
    need(q, "q");
    need(r, "r");
    need(out, "out");
    *out = kpflow::cosine_sim(q->t, r->t);
  });
}

kpf_status kpf_effdim(const kpf_tensor* q, double threshold, size_t* out) {
  return guard([&] {
    need(q, "q");
    need(out, "out");
    kpflow::require(threshold > 0.0 && threshold <= 1.0, kpflow::ErrorCode::kInvalidArgument,
                    "kpf_effdim: threshold must lie in (0, 1]");
    *out = kpflow::effdim(q->t, threshold);
  });
}

kpf_status kpf_model_create(const char* hyper_json, double g, uint64_t seed, kpf_model** out) {
  return guard([&] {
    need(hyper_json, "hyper_json");
    need(out, "out");
    nlohmann::json hyper;
    try {
      hyper = nlohmann::json::parse(hyper_json);
    } catch (const nlohmann::json::exception& e) {
      kpflow::fail(kpflow::ErrorCode::kConfig, std::string("model JSON: ") + e.what());
    }
    auto m = std::make_unique<kpf_model>();
    m->m = kpflow::model_from_json(hyper);
    kpflow::Rng rng(kpflow::mix_seed(seed));
    if (auto* r = dynamic_cast<kpflow::RnnModel*>(m->m.get())) r->initialize(g, rng);
    else if (auto* gr = dynamic_cast<kpflow::GruModel*>(m->m.get())) gr->initialize(g, rng);
    else if (auto* h = dynamic_cast<kpflow::HhModel*>(m->m.get())) h->initialize(g, rng);
    *out = m.release();
  });
}

kpf_status kpf_model_load(const char* snapshot_dir, kpf_model** out) {
  return guard([&] {
    need(snapshot_dir, "snapshot_dir");
    need(out, "out");
    auto m = std::make_unique<kpf_model>();
    m->m = kpflow::load_snapshot(snapshot_dir).model;
    *out = m.release();
  });
}

void kpf_model_destroy(kpf_model* m) { delete m; }
size_t kpf_model_num_params(const kpf_model* m) { return m ? m->m->num_params() : 0; }
size_t kpf_model_state_dim(const kpf_model* m) { return m ? m->m->state_dim() : 0; }
size_t kpf_model_input_dim(const kpf_model* m) { return m ? m->m->input_dim() : 0; }

kpf_status kpf_model_get_params(const kpf_model* m, double* dst, size_t n) {
  return guard([&] {
    need(m, "model");
    need(dst, "dst");
    kpflow::require(n == m->m->num_params(), kpflow::ErrorCode::kDimension, "kpf_model_get_params: wrong length");
    std::memcpy(dst, m->m->params().data(), n * sizeof(double));
  });
}

kpf_status kpf_model_set_params(kpf_model* m, const double* src, size_t n) {
  return guard([&] {
    need(m, "model");
    need(src, "src");
    kpflow::require(n == m->m->num_params(), kpflow::ErrorCode::kDimension, "kpf_model_set_params: wrong length");
    m->m->set_params(Eigen::Map<const kpflow::Vec>(src, Eigen::Index(n)));
  });
}

kpf_status kpf_model_forward(const kpf_model* m, const kpf_tensor* inputs, kpf_trace** out) {
  return guard([&] {
    need(m, "model");
    need(inputs, "inputs");
    need(out, "out");
    auto t = std::make_unique<kpf_trace>();
    t->tr = m->m->forward(inputs->t);
    *out = t.release();
  });
}

void kpf_trace_destroy(kpf_trace* tr) { delete tr; }

kpf_status kpf_trace_states(const kpf_trace* tr, kpf_tensor** out) {
  return guard([&] {
    need(tr, "trace");
    need(out, "out");
    auto t = std::make_unique<kpf_tensor>();
    t->t = tr->tr.z;
    *out = t.release();
  });
}

kpf_status kpf_operator_create(const kpf_trace* tr, kpf_operator_kind kind, kpf_operator** out) {
  return guard([&] {
    need(tr, "trace");
    need(out, "out");
    auto o = std::make_unique<kpf_operator>();
    switch (kind) {
      case KPF_OP_P: o->op = kpflow::make_p(tr->tr); break;
      case KPF_OP_P_ADJOINT: o->op = kpflow::make_p_adjoint(tr->tr); break;
      case KPF_OP_K: o->op = kpflow::make_k(tr->tr); break;
      case KPF_OP_PKP: o->op = kpflow::make_pkp(tr->tr); break;
      case KPF_OP_PPSTAR: o->op = kpflow::make_ppstar(tr->tr); break;
      default: kpflow::fail(kpflow::ErrorCode::kInvalidArgument, "kpf_operator_create: unknown operator kind");
    }
    *out = o.release();
  });
}

kpf_status kpf_operator_average(const kpf_operator* op, unsigned axes_mask, kpf_operator** out) {
  return guard([&] {
    need(op, "operator");
    need(out, "out");
    auto o = std::make_unique<kpf_operator>();
    o->op = kpflow::average(op->op, kpflow::AxisSet(axes_mask));
    *out = o.release();
  });
}

void kpf_operator_destroy(kpf_operator* op) { delete op; }

kpf_status kpf_operator_apply(const kpf_operator* op, const kpf_tensor* q, kpf_tensor** out) {
  return guard([&] {
    need(op, "operator");
    need(q, "q");
    need(out, "out");
    auto t = std::make_unique<kpf_tensor>();
    t->t = op->op.apply(q->t);
    *out = t.release();
  });
}

kpf_status kpf_operator_adjoint(const kpf_operator* op, const kpf_tensor* r, kpf_tensor** out) {
  return guard([&] {
    need(op, "operator");
    need(r, "r");
    need(out, "out");
    auto t = std::make_unique<kpf_tensor>();
    t->t = op->op.adjoint(r->t);
    *out = t.release();
  });
}

kpf_status kpf_operator_svd(const kpf_operator* op, size_t k, uint64_t seed, double* values, size_t* n_values,
                            size_t* effrank_sv, size_t* effrank_sv_squared) {
  return guard([&] {
    need(op, "operator");
    need(n_values, "n_values");
    kpflow::require(*n_values == 0 || values, kpflow::ErrorCode::kInvalidArgument, "values must not be NULL");
    kpflow::SvdOptions o;
    o.k = k;
    o.seed = seed;
    o.want_vectors = false;
    const kpflow::SpectralSummary s = kpflow::top_svd(op->op, o);
    const size_t n = std::min(*n_values, s.singular_values.size());
    for (size_t i = 0; i < n; ++i) values[i] = s.singular_values[i];
    *n_values = n;
    if (effrank_sv) *effrank_sv = s.effective_rank_95_sv;
    if (effrank_sv_squared) *effrank_sv_squared = s.effective_rank_95_sv_squared;
  });
}

const char* kpf_config_schema(void) { return kpflow::detail::kRunConfigSchema; }

kpf_status kpf_validate_config(const char* config_json) {
  return guard([&] {
    need(config_json, "config_json");
    kpflow::parse_run_config(config_json);
  });
}

kpf_status kpf_run_command(const char* command, const char* config_json, const char* out_dir,
                           const uint64_t* seed_override, size_t jobs, char* run_dir, size_t run_dir_len) {
  std::string dir;
  const kpf_status st = guard([&] {
    need(command, "command");
    need(out_dir, "out_dir");
    const std::string cmd = command;
    const kpflow::RunConfig cfg = kpflow::parse_run_config(
        config_json ? config_json : "{}",
        seed_override ? std::optional<std::uint64_t>(*seed_override) : std::nullopt, cmd);
    const std::filesystem::path root(out_dir);
    dir = (root / cfg.run_id).string();
    if (cmd == "train") kpflow::cmd_train(cfg, root);
    else if (cmd == "experiment1") kpflow::cmd_experiment1(cfg, root, jobs);
    else if (cmd == "experiment2") kpflow::cmd_experiment2(cfg, root, jobs);
    else if (cmd == "verify") kpflow::cmd_verify(cfg, root);
    else if (cmd == "spectra") kpflow::cmd_spectra(cfg, root);
    else kpflow::fail(kpflow::ErrorCode::kInvalidArgument, "unknown command '" + cmd + "'");
  });
  if (run_dir && run_dir_len > 0) {
    const size_t n = std::min(dir.size(), run_dir_len - 1);
    std::memcpy(run_dir, dir.data(), n);
    run_dir[n] = '\0';
  }
  return st;
}

}  // extern "C"
