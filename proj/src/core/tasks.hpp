// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/tensor.hpp"

namespace kpflow {

enum class TaskKind { kMemoryPro = 0, kMemoryAnti = 1, kDelayPro = 2, kDelayAnti = 3 };
enum class Period : std::uint8_t { kCtx = 0, kStim = 1, kMem = 2, kResp = 3 };

std::string task_name(TaskKind k);
std::string task_abbrev(TaskKind k);  // MP, MA, DP, DA
TaskKind task_from_name(const std::string& name);
bool is_anti(TaskKind k);
bool is_delay(TaskKind k);

/// Durations are in steps. For delay tasks T_mem must be 0 and the stimulus stays on through
/// the response period.
struct TaskSpec {
  TaskKind kind = TaskKind::kMemoryPro;
  std::size_t T_ctx = 0;
  std::size_t T_stim = 30;
  std::size_t T_mem = 30;
  std::size_t T_resp = 30;
  double noise_std = 0.1;
  std::size_t n_context = 0;

  std::size_t total_T() const { return T_ctx + T_stim + T_mem + T_resp; }
  std::size_t input_dim() const { return 2 + n_context; }
  void validate() const;
};

struct TrialBatch {
  Traj3 inputs;                        // [B, T, 2 + n_context]
  Traj3 targets;                       // [B, T, 2]
  Traj3 mask;                          // [B, T, 1], entries in {0, 1}
  std::vector<Period> periods;         // [B * T], row-major
  std::vector<TaskKind> task_labels;   // [B]
  std::vector<double> stim_angles;     // [B], radians

  std::size_t B() const { return inputs.B(); }
  std::size_t T() const { return inputs.T(); }
  Period period(std::size_t b, std::size_t t) const { return periods[b * T() + t]; }
  /// Trial indices carrying each task label, in batch order.
  std::vector<std::vector<std::size_t>> partition(const std::vector<TaskKind>& order) const;
};

/// Angles uniform on [0, 2 pi), Gaussian input noise; deterministic in `seed`.
TrialBatch gen_batch(const TaskSpec& spec, std::size_t B, std::uint64_t seed);
/// Same as gen_batch with caller-supplied angles. `context_index` selects the one-hot context
/// channel (ignored when spec.n_context == 0).
TrialBatch gen_batch_with_angles(const TaskSpec& spec, const std::vector<double>& angles, std::uint64_t seed,
                                 std::size_t context_index = 0);

/// Concatenates one sub-batch per spec (in order); task k uses context channel k. With
/// matched_stimuli every sub-batch shares the same angle set.
TrialBatch gen_multitask_batch(const std::vector<TaskSpec>& specs, std::size_t B_per_task, std::uint64_t seed,
                               bool matched_stimuli);

/// Memory/delay x pro/anti specs sharing a total duration, with 4 context channels.
std::vector<TaskSpec> default_multitask_specs(double noise_std);

/// Task order MP, MA, DP, DA. First: pro/anti pairing {MP-DP, MA-DA}; second: mem/del pairing
/// {MP-MA, DP-DA}. Diagonals are zero.
struct AlignmentFilters {
  std::array<std::array<double, 4>, 4> pro_anti{};
  std::array<std::array<double, 4>, 4> mem_del{};
};
AlignmentFilters alignment_filters();

nlohmann::json batch_manifest(const TrialBatch& batch, std::uint64_t seed);

}  // namespace kpflow
