// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/config.hpp"
#include "core/model.hpp"
#include "core/tasks.hpp"
#include "core/training.hpp"

namespace kpflow {

/// Effective ranks of the unit-axis consensus of K and P plus the hidden-state effdim.
struct ConsensusRanks {
  std::size_t K_sv = 0, K_sv_squared = 0;
  std::size_t P_sv = 0, P_sv_squared = 0;
  std::size_t hidden_effdim = 0;

  nlohmann::json to_json() const;
};
ConsensusRanks consensus_effranks(const ForwardTrace& tr, double threshold = 0.95);

/// Task specs of a run config (four specs for "multitask").
std::vector<TaskSpec> task_specs(const RunConfig& cfg);
/// Model built and initialised from the config and its master seed.
std::unique_ptr<Model> build_model(const RunConfig& cfg);

struct TaskData {
  TrialBatch pool;      // noisy training trials
  TrialBatch eval;      // noise-free evaluation trials
  TrialBatch analysis;  // noise-free, matched stimuli; multitask only
};
TaskData build_task_data(const RunConfig& cfg);

/// Fixed threshold, or baseline_factor times the loss of the zero output on the eval set.
double convergence_threshold(const RunConfig& cfg, const TrialBatch& eval);

struct TrainOutcome {
  std::filesystem::path dir;
  TrainRecord record;
  double threshold = 0.0;
  double final_eval_loss = 0.0;
  std::optional<ConsensusRanks> before, after;
  nlohmann::json interference;  // multitask summary, null otherwise
};

/// Trains one model and writes config.json, manifest.json, loss.csv, snapshots and the enabled
/// analyses into `dir`. Divergence is recorded, not thrown.
TrainOutcome run_train(const RunConfig& cfg, const std::filesystem::path& dir, bool consensus_ranks = true);

/// The command entry points write below out_root / run_id and return that directory. They throw
/// Error(kDivergence) after writing partial outputs when a run diverged.
std::filesystem::path cmd_train(const RunConfig& cfg, const std::filesystem::path& out_root);
std::filesystem::path cmd_experiment1(const RunConfig& cfg, const std::filesystem::path& out_root, std::size_t jobs);
std::filesystem::path cmd_experiment2(const RunConfig& cfg, const std::filesystem::path& out_root, std::size_t jobs);
/// One-shot operator SVD on a saved snapshot directory (cfg.spectra.snapshot).
std::filesystem::path cmd_spectra(const RunConfig& cfg, const std::filesystem::path& out_root);

/// Invariant suite; `fault` = "none" or "jacobian" (corrupts J_z to show the checks bite).
nlohmann::json run_invariant_suite(const std::string& fault, std::uint64_t seed);
/// Writes verify.json and throws Error(kVerification) if any check failed.
std::filesystem::path cmd_verify(const RunConfig& cfg, const std::filesystem::path& out_root);

/// Saves parameters (KPF1 + JSON sidecar) and the readout into `dir`.
void save_snapshot(const std::filesystem::path& dir, const Model& model, const Readout& ro);
struct LoadedSnapshot {
  std::unique_ptr<Model> model;
  Readout readout;
};
LoadedSnapshot load_snapshot(const std::filesystem::path& dir);

/// %.17g rendering used in every CSV.
std::string fmt_double(double v);

}  // namespace kpflow
