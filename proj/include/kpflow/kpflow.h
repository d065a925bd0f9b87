/* SPDX-License-Identifier: Apache-2.0 */
/* Copyright 2026 The KPFlow Authors. */

/*
 * C interface of the kpflow shared library.
 *
 * Every function returns a kpf_status. On failure kpf_last_error() describes the problem; the
 * message is thread-local and valid until the next call on the same thread. Objects are opaque
 * handles owned by the caller and released with the matching *_destroy function (NULL is
 * accepted). Tensors are [B, T, H] row-major doubles with a time step dt.
 */

#ifndef KPFLOW_KPFLOW_H_
#define KPFLOW_KPFLOW_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KPF_API __declspec(dllexport)
#elif defined(KPFLOW_BUILDING_LIBRARY)
#define KPF_API __attribute__((visibility("default")))
#else
#define KPF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kpf_status {
  KPF_OK = 0,
  KPF_ERR_INVALID_ARGUMENT = 1,
  KPF_ERR_DIMENSION = 2,
  KPF_ERR_CONFIG = 3,
  KPF_ERR_DIVERGENCE = 4,
  KPF_ERR_VERIFICATION = 5,
  KPF_ERR_IO = 6,
  KPF_ERR_SINGULAR = 7,
  KPF_ERR_UNDEFINED = 8,
  KPF_ERR_NOT_CONVERGED = 9,
  KPF_ERR_INTERNAL = 100
} kpf_status;

/* Library version, e.g. "0.3.0". */
KPF_API const char* kpf_version(void);
KPF_API const char* kpf_last_error(void);
KPF_API const char* kpf_status_name(kpf_status s);
/* Process exit code for a status: 0 ok, 2 config, 3 divergence, 4 verification, 1 otherwise. */
KPF_API int kpf_exit_code(kpf_status s);

/* ---- tensors ------------------------------------------------------------------------------ */

typedef struct kpf_tensor kpf_tensor;

/* data may be NULL (zero tensor); otherwise it holds B*T*H values. */
KPF_API kpf_status kpf_tensor_create(size_t B, size_t T, size_t H, double dt, const double* data, kpf_tensor** out);
KPF_API void kpf_tensor_destroy(kpf_tensor* t);
KPF_API kpf_status kpf_tensor_shape(const kpf_tensor* t, size_t* B, size_t* T, size_t* H, double* dt);
/* Copies the payload into dst, which must hold B*T*H values (n). */
KPF_API kpf_status kpf_tensor_copy_out(const kpf_tensor* t, double* dst, size_t n);
KPF_API kpf_status kpf_tensor_read(const char* path, kpf_tensor** out);
KPF_API kpf_status kpf_tensor_write(const kpf_tensor* t, const char* path);

/* (dt/B) sum q r */
KPF_API kpf_status kpf_inner(const kpf_tensor* q, const kpf_tensor* r, double* out);
KPF_API kpf_status kpf_cosine_sim(const kpf_tensor* q, const kpf_tensor* r, double* out);
KPF_API kpf_status kpf_effdim(const kpf_tensor* q, double threshold, size_t* out);

/* ---- models and traces -------------------------------------------------------------------- */

typedef struct kpf_model kpf_model;
typedef struct kpf_trace kpf_trace;

/*
 * hyper_json: {"kind": "rnn"|"gru"|"hh", "H": n, "I": n, ...} as written in snapshot sidecars.
 * Weights are initialised with recurrent scale g from seed.
 */
KPF_API kpf_status kpf_model_create(const char* hyper_json, double g, uint64_t seed, kpf_model** out);
/* Loads a snapshot directory written by the train command. */
KPF_API kpf_status kpf_model_load(const char* snapshot_dir, kpf_model** out);
KPF_API void kpf_model_destroy(kpf_model* m);
KPF_API size_t kpf_model_num_params(const kpf_model* m);
KPF_API size_t kpf_model_state_dim(const kpf_model* m);
KPF_API size_t kpf_model_input_dim(const kpf_model* m);
KPF_API kpf_status kpf_model_get_params(const kpf_model* m, double* dst, size_t n);
KPF_API kpf_status kpf_model_set_params(kpf_model* m, const double* src, size_t n);

/* Simulates the model on inputs [B, T, I] from its default initial state. */
KPF_API kpf_status kpf_model_forward(const kpf_model* m, const kpf_tensor* inputs, kpf_trace** out);
KPF_API void kpf_trace_destroy(kpf_trace* tr);
/* New tensor holding the hidden states [B, T, S]. */
KPF_API kpf_status kpf_trace_states(const kpf_trace* tr, kpf_tensor** out);

/* ---- operators ---------------------------------------------------------------------------- */

typedef struct kpf_operator kpf_operator;

typedef enum kpf_operator_kind {
  KPF_OP_P = 0,
  KPF_OP_P_ADJOINT = 1,
  KPF_OP_K = 2,
  KPF_OP_PKP = 3,
  KPF_OP_PPSTAR = 4
} kpf_operator_kind;

/* Axis bits for consensus averaging. */
enum { KPF_AXIS_TRIAL = 1, KPF_AXIS_TIME = 2, KPF_AXIS_UNIT = 4 };

KPF_API kpf_status kpf_operator_create(const kpf_trace* tr, kpf_operator_kind kind, kpf_operator** out);
/* Consensus operator averaged over the axes in axes_mask. */
KPF_API kpf_status kpf_operator_average(const kpf_operator* op, unsigned axes_mask, kpf_operator** out);
KPF_API void kpf_operator_destroy(kpf_operator* op);
KPF_API kpf_status kpf_operator_apply(const kpf_operator* op, const kpf_tensor* q, kpf_tensor** out);
KPF_API kpf_status kpf_operator_adjoint(const kpf_operator* op, const kpf_tensor* r, kpf_tensor** out);

/*
 * Leading singular values. On input *n_values is the capacity of values; on output the number
 * written. effrank_* receive the 0.95 effective ranks (sigma and sigma^2 energy); either may be
 * NULL.
 */
KPF_API kpf_status kpf_operator_svd(const kpf_operator* op, size_t k, uint64_t seed, double* values,
                                    size_t* n_values, size_t* effrank_sv, size_t* effrank_sv_squared);

/* ---- commands ----------------------------------------------------------------------------- */

/* The published JSON schema of run configurations. */
KPF_API const char* kpf_config_schema(void);
/* KPF_OK if the document is a valid run configuration, else KPF_ERR_CONFIG with the pointer. */
KPF_API kpf_status kpf_validate_config(const char* config_json);

/*
 * Runs "train", "experiment1", "experiment2", "verify" or "spectra". config_json may be NULL
 * (all defaults). seed_override may be NULL. The run directory is copied into run_dir
 * (truncated to run_dir_len) when run_dir is non-NULL; it is also filled when a run diverged or
 * failed verification after writing its outputs.
 */
KPF_API kpf_status kpf_run_command(const char* command, const char* config_json, const char* out_dir,
                                   const uint64_t* seed_override, size_t jobs, char* run_dir, size_t run_dir_len);

#ifdef __cplusplus
}
#endif

#endif /* KPFLOW_KPFLOW_H_ */
