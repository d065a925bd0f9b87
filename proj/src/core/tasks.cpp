// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/tasks.hpp"

#include <cmath>
#include <numbers>

#include "core/rng.hpp"

namespace kpflow {

std::string task_name(TaskKind k) {
  switch (k) {
    case TaskKind::kMemoryPro: return "memory_pro";
    case TaskKind::kMemoryAnti: return "memory_anti";
    case TaskKind::kDelayPro: return "delay_pro";
    case TaskKind::kDelayAnti: return "delay_anti";
  }
  return "?";
}

std::string task_abbrev(TaskKind k) {
  switch (k) {
    case TaskKind::kMemoryPro: return "MP";
    case TaskKind::kMemoryAnti: return "MA";
    case TaskKind::kDelayPro: return "DP";
    case TaskKind::kDelayAnti: return "DA";
  }
  return "?";
}

TaskKind task_from_name(const std::string& name) {
  for (TaskKind k : {TaskKind::kMemoryPro, TaskKind::kMemoryAnti, TaskKind::kDelayPro, TaskKind::kDelayAnti})
    if (task_name(k) == name) return k;
  fail(ErrorCode::kConfig, "unknown task kind '" + name + "'");
}

bool is_anti(TaskKind k) { return k == TaskKind::kMemoryAnti || k == TaskKind::kDelayAnti; }
bool is_delay(TaskKind k) { return k == TaskKind::kDelayPro || k == TaskKind::kDelayAnti; }

void TaskSpec::validate() const {
  require(T_stim > 0 && T_resp > 0, ErrorCode::kConfig, "task: T_stim and T_resp must be positive");
  require(!is_delay(kind) || T_mem == 0, ErrorCode::kConfig, "task: delay tasks require T_mem = 0");
  require(noise_std >= 0.0 && std::isfinite(noise_std), ErrorCode::kConfig, "task: noise_std must be >= 0");
  require(T_ctx == 0 || n_context > 0, ErrorCode::kConfig, "task: a context period needs context channels");
}

std::vector<std::vector<std::size_t>> TrialBatch::partition(const std::vector<TaskKind>& order) const {
  std::vector<std::vector<std::size_t>> out(order.size());
  for (std::size_t b = 0; b < task_labels.size(); ++b)
    for (std::size_t k = 0; k < order.size(); ++k)
      if (task_labels[b] == order[k]) out[k].push_back(b);
  return out;
}

TrialBatch gen_batch_with_angles(const TaskSpec& spec, const std::vector<double>& angles, std::uint64_t seed,
                                 std::size_t context_index) {
  spec.validate();
  require(!angles.empty(), ErrorCode::kInvalidArgument, "gen_batch: B must be >= 1");
  require(spec.n_context == 0 || context_index < spec.n_context, ErrorCode::kInvalidArgument,
          "gen_batch: context index out of range");
  const std::size_t B = angles.size(), T = spec.total_T(), I = spec.input_dim();
  TrialBatch out;
  out.inputs = Traj3(B, T, I);
  out.targets = Traj3(B, T, 2);
  out.mask = Traj3(B, T, 1);
  out.mask.fill(1.0);
  out.periods.resize(B * T);
  out.task_labels.assign(B, spec.kind);
  out.stim_angles = angles;

  const std::size_t stim_begin = spec.T_ctx;
  const std::size_t mem_begin = stim_begin + spec.T_stim;
  const std::size_t resp_begin = mem_begin + spec.T_mem;
  const double sign = is_anti(spec.kind) ? -1.0 : 1.0;
  const bool delay = is_delay(spec.kind);
  for (std::size_t b = 0; b < B; ++b) {
    const double c = std::cos(angles[b]), s = std::sin(angles[b]);
    for (std::size_t t = 0; t < T; ++t) {
      Period p = t < stim_begin ? Period::kCtx : t < mem_begin ? Period::kStim : t < resp_begin ? Period::kMem : Period::kResp;
      out.periods[b * T + t] = p;
      const bool stim_on = p == Period::kStim || (delay && p == Period::kResp);
      if (stim_on) {
        out.inputs(b, t, 0) = c;
        out.inputs(b, t, 1) = s;
      }
      if (p == Period::kCtx) out.inputs(b, t, 2 + context_index) = 1.0;
      if (p == Period::kResp) {
        out.targets(b, t, 0) = sign * c;
        out.targets(b, t, 1) = sign * s;
      }
    }
  }
  if (spec.noise_std > 0.0) {
    Rng rng(mix_seed(seed ^ 0x6E6F697365ull));
    for (double& v : out.inputs.data()) v += rng.normal(0.0, spec.noise_std);
  }
  return out;
}

TrialBatch gen_batch(const TaskSpec& spec, std::size_t B, std::uint64_t seed) {
  require(B >= 1, ErrorCode::kInvalidArgument, "gen_batch: B must be >= 1");
  Rng rng(mix_seed(seed));
  std::vector<double> angles(B);
  for (double& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return gen_batch_with_angles(spec, angles, seed);
}

TrialBatch gen_multitask_batch(const std::vector<TaskSpec>& specs, std::size_t B_per_task, std::uint64_t seed,
                               bool matched_stimuli) {
  require(!specs.empty(), ErrorCode::kInvalidArgument, "gen_multitask_batch: no task specs");
  require(B_per_task >= 1, ErrorCode::kInvalidArgument, "gen_multitask_batch: B_per_task must be >= 1");
  const std::size_t T = specs[0].total_T(), I = specs[0].input_dim();
  for (const auto& s : specs) {
    require(s.total_T() == T, ErrorCode::kDimension, "gen_multitask_batch: all tasks must share T");
    require(s.n_context == specs.size(), ErrorCode::kDimension,
            "gen_multitask_batch: n_context must equal the number of tasks");
  }
  const std::size_t n = specs.size();
  TrialBatch out;
  out.inputs = Traj3(n * B_per_task, T, I);
  out.targets = Traj3(n * B_per_task, T, 2);
  out.mask = Traj3(n * B_per_task, T, 1);

  Rng angle_rng(mix_seed(seed));
  std::vector<double> shared(B_per_task);
  for (double& a : shared) a = angle_rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> angles = shared;
    if (!matched_stimuli && k > 0)
      for (double& a : angles) a = angle_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const TrialBatch sub = gen_batch_with_angles(specs[k], angles, mix_seed(seed + 1 + k), k);
    const std::size_t off = k * B_per_task;
    std::copy(sub.inputs.data().begin(), sub.inputs.data().end(), out.inputs.slice_ptr(off, 0));
    std::copy(sub.targets.data().begin(), sub.targets.data().end(), out.targets.slice_ptr(off, 0));
    std::copy(sub.mask.data().begin(), sub.mask.data().end(), out.mask.slice_ptr(off, 0));
    out.periods.insert(out.periods.end(), sub.periods.begin(), sub.periods.end());
    out.task_labels.insert(out.task_labels.end(), sub.task_labels.begin(), sub.task_labels.end());
    out.stim_angles.insert(out.stim_angles.end(), sub.stim_angles.begin(), sub.stim_angles.end());
  }
  return out;
}

std::vector<TaskSpec> default_multitask_specs(double noise_std) {
  std::vector<TaskSpec> out;
  for (TaskKind k : {TaskKind::kMemoryPro, TaskKind::kMemoryAnti, TaskKind::kDelayPro, TaskKind::kDelayAnti}) {
    TaskSpec s;
    s.kind = k;
    s.T_ctx = 15;
    s.n_context = 4;
    s.noise_std = noise_std;
    if (is_delay(k)) {
      s.T_stim = 50;
      s.T_mem = 0;
      s.T_resp = 25;
    } else {
      s.T_stim = 25;
      s.T_mem = 25;
      s.T_resp = 25;
    }
    out.push_back(s);
  }
  return out;
}

AlignmentFilters alignment_filters() {
  AlignmentFilters f;
  // MP=0, MA=1, DP=2, DA=3
  f.pro_anti[0][2] = f.pro_anti[2][0] = 1.0;
  f.pro_anti[1][3] = f.pro_anti[3][1] = 1.0;
  f.mem_del[0][1] = f.mem_del[1][0] = 1.0;
  f.mem_del[2][3] = f.mem_del[3][2] = 1.0;
  return f;
}

nlohmann::json batch_manifest(const TrialBatch& batch, std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["B"] = batch.B();
  j["T"] = batch.T();
  j["I"] = batch.inputs.H();
  nlohmann::json labels = nlohmann::json::array();
  for (auto k : batch.task_labels) labels.push_back(task_name(k));
  j["task_labels"] = labels;
  j["stim_angles"] = batch.stim_angles;
  std::vector<int> periods;
  periods.reserve(batch.periods.size());
  for (auto p : batch.periods) periods.push_back(int(p));
  j["period_labels"] = periods;
  j["period_codes"] = {{"ctx", 0}, {"stim", 1}, {"mem", 2}, {"resp", 3}};
  return j;
}

}  // namespace kpflow
