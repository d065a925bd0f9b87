// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace kpflow {

struct SchemaError {
  std::string pointer;  // JSON pointer of the offending value ("" for the root)
  std::string message;
};

/// Validates `doc` against the subset of JSON Schema used by our schemas: type, properties,
/// additionalProperties (false), required, enum, minimum, maximum, items.
std::optional<SchemaError> validate_json(const nlohmann::json& doc, const nlohmann::json& schema);

const nlohmann::json& run_config_schema();

std::uint64_t fnv1a64(const std::string& bytes);

struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;

  struct ModelBlock {
    std::string kind = "rnn";
    std::size_t H = 64;
    double g = 1.5;
    double alpha = 1.0;
    std::string activation = "tanh";
    double hh_dt = 0.01;
    double hh_I_app = 10.0;
  } model;

  struct TaskBlock {
    std::string kind = "memory_pro";
    std::size_t T_ctx = 0, T_stim = 30, T_mem = 30, T_resp = 30;
    double noise_std = 0.1;
    std::size_t pool_size = 3000;
    std::size_t eval_size = 30;
    bool matched_stimuli = true;
  } task;

  struct TrainBlock {
    double learning_rate = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double grad_clip_norm = 1e-4;
    std::size_t batch_size = 200;
    std::size_t max_iters = 20000;
    std::string optimizer = "adam";
    std::string threshold_mode = "baseline";
    double convergence_loss_threshold = 0.01665;
    double baseline_factor = 0.05;
    std::size_t snapshot_every = 0;
  } train;

  struct AnalysisBlock {
    std::size_t spectra_every = 0;
    std::size_t spectra_trials = 30;
    bool interference = false;
    bool lyapunov = false;
    double effrank_threshold = 0.95;
  } analysis;

  struct Experiment1Block {
    std::vector<double> g_list{0.5, 1.5, 2.5};
    std::vector<std::uint64_t> seeds{0, 1, 2};
  } experiment1;

  struct Experiment2Block {
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t analysis_trials_per_task = 8;
    std::size_t snapshot_every = 50;
  } experiment2;

  struct VerifyBlock {
    std::string fault = "none";
  } verify;

  struct SpectraBlock {
    std::string snapshot;
    std::string op = "K";
    std::size_t k = 10;
    bool consensus = true;
  } spectra;

  /// The configuration with every default filled in; hashed into the manifest.
  nlohmann::json effective() const;
  std::uint64_t hash() const;
};

/// Defaults a command starts from before the document is applied. "experiment2" switches to the
/// GRU multitask preset with interference analysis and a 5000-iteration budget; every other
/// command uses RunConfig{}.
RunConfig command_defaults(const std::string& command);

/// Parses and validates a configuration document. Throws Error(kConfig) with the JSON pointer
/// of the first offending value.
RunConfig parse_run_config(const std::string& text, std::optional<std::uint64_t> seed_override = std::nullopt,
                           const std::string& command = "train");

}  // namespace kpflow
