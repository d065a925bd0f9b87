// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "kpflow/kpflow.h"

namespace fs = std::filesystem;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(gen);
  return v;
}

kpf_tensor* tensor(std::size_t B, std::size_t T, std::size_t H, double dt, unsigned seed) {
  const auto v = noise(B * T * H, seed);
  kpf_tensor* t = nullptr;
  REQUIRE(kpf_tensor_create(B, T, H, dt, v.data(), &t) == KPF_OK);
  return t;
}

double dot(const kpf_tensor* a, const kpf_tensor* b) {
  double v = 0.0;
  REQUIRE(kpf_inner(a, b, &v) == KPF_OK);
  return v;
}

struct Fixture {
  kpf_model* model = nullptr;
  kpf_trace* trace = nullptr;
  Fixture() {
    REQUIRE(kpf_model_create(R"({"kind": "rnn", "H": 6, "I": 2})", 1.2, 3, &model) == KPF_OK);
    kpf_tensor* x = tensor(3, 8, 2, 1.0, 4);
    REQUIRE(kpf_model_forward(model, x, &trace) == KPF_OK);
    kpf_tensor_destroy(x);
  }
  ~Fixture() {
    kpf_trace_destroy(trace);
    kpf_model_destroy(model);
  }
};

}  // namespace

TEST_CASE("status helpers") {
  CHECK(std::strlen(kpf_version()) > 0);
  CHECK(kpf_exit_code(KPF_OK) == 0);
  CHECK(kpf_exit_code(KPF_ERR_CONFIG) == 2);
  CHECK(kpf_exit_code(KPF_ERR_DIVERGENCE) == 3);
  CHECK(kpf_exit_code(KPF_ERR_VERIFICATION) == 4);
  CHECK(kpf_exit_code(KPF_ERR_IO) == 1);
  CHECK(std::string(kpf_status_name(KPF_ERR_SINGULAR)).size() > 0);
}

TEST_CASE("tensors round trip through the C interface") {
  const auto v = noise(2 * 3 * 4, 1);
  kpf_tensor* t = nullptr;
  REQUIRE(kpf_tensor_create(2, 3, 4, 0.5, v.data(), &t) == KPF_OK);
  size_t B = 0, T = 0, H = 0;
  double dt = 0.0;
  REQUIRE(kpf_tensor_shape(t, &B, &T, &H, &dt) == KPF_OK);
  CHECK(B == 2);
  CHECK(T == 3);
  CHECK(H == 4);
  CHECK(dt == 0.5);
  std::vector<double> back(v.size());
  REQUIRE(kpf_tensor_copy_out(t, back.data(), back.size()) == KPF_OK);
  CHECK(back == v);
  CHECK(kpf_tensor_copy_out(t, back.data(), back.size() - 1) != KPF_OK);
  CHECK(std::strlen(kpf_last_error()) > 0);

  double expect = 0.0;
  for (double x : v) expect += x * x;
  CHECK(dot(t, t) == doctest::Approx(0.5 / 2.0 * expect).epsilon(1e-14));

  const fs::path p = fs::current_path() / "capi_tensor.kpf";
  REQUIRE(kpf_tensor_write(t, p.string().c_str()) == KPF_OK);
  kpf_tensor* r = nullptr;
  REQUIRE(kpf_tensor_read(p.string().c_str(), &r) == KPF_OK);
  REQUIRE(kpf_tensor_copy_out(r, back.data(), back.size()) == KPF_OK);
  CHECK(back == v);
  kpf_tensor_destroy(r);
  kpf_tensor_destroy(t);

  kpf_tensor* bad = nullptr;
  CHECK(kpf_tensor_read("/nonexistent/none.kpf", &bad) == KPF_ERR_IO);
  CHECK(kpf_tensor_create(1, 1, 1, 1.0, nullptr, nullptr) == KPF_ERR_INVALID_ARGUMENT);
  kpf_tensor_destroy(nullptr);
}

TEST_CASE("mismatched tensors report a dimension error") {
  kpf_tensor* a = tensor(2, 3, 4, 1.0, 1);
  kpf_tensor* b = tensor(2, 3, 5, 1.0, 2);
  double v = 0.0;
  CHECK(kpf_inner(a, b, &v) == KPF_ERR_DIMENSION);
  kpf_tensor_destroy(a);
  kpf_tensor_destroy(b);
}

TEST_CASE("model parameters and forward pass") {
  Fixture f;
  CHECK(kpf_model_state_dim(f.model) == 6);
  CHECK(kpf_model_input_dim(f.model) == 2);
  const size_t n = kpf_model_num_params(f.model);
  CHECK(n == 6 * 6 + 6 * 2 + 6);
  std::vector<double> p(n);
  REQUIRE(kpf_model_get_params(f.model, p.data(), n) == KPF_OK);
  for (auto& x : p) x *= 0.5;
  REQUIRE(kpf_model_set_params(f.model, p.data(), n) == KPF_OK);
  std::vector<double> q(n);
  REQUIRE(kpf_model_get_params(f.model, q.data(), n) == KPF_OK);
  CHECK(p == q);
  CHECK(kpf_model_set_params(f.model, p.data(), n + 1) != KPF_OK);

  kpf_tensor* z = nullptr;
  REQUIRE(kpf_trace_states(f.trace, &z) == KPF_OK);
  size_t B, T, H;
  double dt;
  kpf_tensor_shape(z, &B, &T, &H, &dt);
  CHECK(B == 3);
  CHECK(T == 8);
  CHECK(H == 6);
  kpf_tensor_destroy(z);

  kpf_model* bad = nullptr;
  CHECK(kpf_model_create("{\"kind\": \"lstm\", \"H\": 2, \"I\": 1}", 1.0, 0, &bad) != KPF_OK);
  CHECK(kpf_model_create("{oops", 1.0, 0, &bad) == KPF_ERR_CONFIG);
}

TEST_CASE("operators through the C interface") {
  Fixture f;
  kpf_operator *P = nullptr, *Ps = nullptr, *K = nullptr, *Kc = nullptr;
  REQUIRE(kpf_operator_create(f.trace, KPF_OP_P, &P) == KPF_OK);
  REQUIRE(kpf_operator_create(f.trace, KPF_OP_P_ADJOINT, &Ps) == KPF_OK);
  REQUIRE(kpf_operator_create(f.trace, KPF_OP_K, &K) == KPF_OK);
  kpf_tensor* q = tensor(3, 8, 6, 1.0, 10);
  kpf_tensor* r = tensor(3, 8, 6, 1.0, 11);
  kpf_tensor *Pq = nullptr, *Psr = nullptr, *Kq = nullptr, *Kr = nullptr, *Padj_r = nullptr;
  REQUIRE(kpf_operator_apply(P, q, &Pq) == KPF_OK);
  REQUIRE(kpf_operator_apply(Ps, r, &Psr) == KPF_OK);
  REQUIRE(kpf_operator_adjoint(P, r, &Padj_r) == KPF_OK);
  CHECK(dot(Pq, r) == doctest::Approx(dot(q, Psr)).epsilon(1e-12));
  CHECK(dot(q, Padj_r) == doctest::Approx(dot(q, Psr)).epsilon(1e-12));
  REQUIRE(kpf_operator_apply(K, q, &Kq) == KPF_OK);
  REQUIRE(kpf_operator_apply(K, r, &Kr) == KPF_OK);
  CHECK(dot(Kq, r) == doctest::Approx(dot(q, Kr)).epsilon(1e-12));
  CHECK(dot(Kq, q) >= 0.0);

  double sv[8];
  size_t n = 8, er = 0, er2 = 0;
  REQUIRE(kpf_operator_svd(K, 8, 0, sv, &n, &er, &er2) == KPF_OK);
  REQUIRE(n > 0);
  for (size_t i = 1; i < n; ++i) CHECK(sv[i] <= sv[i - 1] * (1 + 1e-12));
  CHECK(er2 <= er);
  CHECK(er >= 1);

  REQUIRE(kpf_operator_average(K, KPF_AXIS_UNIT, &Kc) == KPF_OK);
  n = 8;
  REQUIRE(kpf_operator_svd(Kc, 8, 0, sv, &n, nullptr, nullptr) == KPF_OK);
  CHECK(n <= 8);

  kpf_tensor* wrong = tensor(2, 8, 6, 1.0, 12);
  kpf_tensor* out = nullptr;
  CHECK(kpf_operator_apply(P, wrong, &out) == KPF_ERR_DIMENSION);

  for (kpf_tensor* t : {q, r, Pq, Psr, Kq, Kr, Padj_r, wrong}) kpf_tensor_destroy(t);
  for (kpf_operator* o : {P, Ps, K, Kc}) kpf_operator_destroy(o);
}

TEST_CASE("config validation and commands") {
  CHECK(std::string(kpf_config_schema()).find("\"properties\"") != std::string::npos);
  CHECK(kpf_validate_config("{}") == KPF_OK);
  CHECK(kpf_validate_config(R"({"model": {"H": -1}})") == KPF_ERR_CONFIG);
  CHECK(std::string(kpf_last_error()).find("/model/H") != std::string::npos);

  const fs::path out = fs::current_path() / "capi_runs";
  fs::remove_all(out);
  const char* cfg = R"({"run_id": "lr0", "model": {"H": 6},
    "task": {"T_stim": 4, "T_mem": 4, "T_resp": 4, "pool_size": 20, "eval_size": 6},
    "train": {"learning_rate": 0.0, "batch_size": 5, "max_iters": 6},
    "analysis": {"spectra_trials": 4}})";
  char dir[512];
  const uint64_t seed = 9;
  REQUIRE(kpf_run_command("train", cfg, out.string().c_str(), &seed, 1, dir, sizeof dir) == KPF_OK);
  CHECK(fs::path(dir) == out / "lr0");
  CHECK(fs::exists(fs::path(dir) / "loss.csv"));

  kpf_model* loaded = nullptr;
  REQUIRE(kpf_model_load((fs::path(dir) / "snapshots" / "final").string().c_str(), &loaded) == KPF_OK);
  CHECK(kpf_model_state_dim(loaded) == 6);
  kpf_model_destroy(loaded);

  CHECK(kpf_run_command("train", R"({"bogus": 1})", out.string().c_str(), nullptr, 1, nullptr, 0) ==
        KPF_ERR_CONFIG);
  CHECK(kpf_run_command("dance", "{}", out.string().c_str(), nullptr, 1, nullptr, 0) == KPF_ERR_INVALID_ARGUMENT);
}
