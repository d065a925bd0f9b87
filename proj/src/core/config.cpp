// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/config.hpp"

#include "core/error.hpp"
#include "kpflow/schema_embed.hpp"

namespace kpflow {
namespace {

using nlohmann::json;

std::string escape_token(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

bool type_matches(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "null") return v.is_null();
  return false;
}

std::optional<SchemaError> check(const json& v, const json& s, const std::string& ptr) {
  if (s.contains("type")) {
    const std::string type = s["type"].get<std::string>();
    if (!type_matches(v, type)) return SchemaError{ptr, "expected " + type};
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found = found || e == v;
    if (!found) return SchemaError{ptr, "value " + v.dump() + " is not one of " + s["enum"].dump()};
  }
  if (v.is_number()) {
    if (s.contains("minimum") && v.get<double>() < s["minimum"].get<double>())
      return SchemaError{ptr, "value " + v.dump() + " is below the minimum " + s["minimum"].dump()};
    if (s.contains("maximum") && v.get<double>() > s["maximum"].get<double>())
      return SchemaError{ptr, "value " + v.dump() + " is above the maximum " + s["maximum"].dump()};
  }
  if (v.is_object()) {
    const json props = s.value("properties", json::object());
    if (s.contains("required"))
      for (const auto& r : s["required"])
        if (!v.contains(r.get<std::string>()))
          return SchemaError{ptr + "/" + escape_token(r.get<std::string>()), "required key is missing"};
    const bool closed = s.contains("additionalProperties") && s["additionalProperties"] == false;
    for (auto it = v.begin(); it != v.end(); ++it) {
      const std::string child = ptr + "/" + escape_token(it.key());
      if (props.contains(it.key())) {
        if (auto e = check(it.value(), props[it.key()], child)) return e;
      } else if (closed) {
        return SchemaError{child, "unknown key"};
      }
    }
  }
  if (v.is_array() && s.contains("items")) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (auto e = check(v[i], s["items"], ptr + "/" + std::to_string(i))) return e;
  }
  return std::nullopt;
}

template <typename T>
void take(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj[key].get<T>();
}

}  // namespace

std::optional<SchemaError> validate_json(const json& doc, const json& schema) { return check(doc, schema, ""); }

const json& run_config_schema() {
  static const json schema = json::parse(detail::kRunConfigSchema);
  return schema;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

json RunConfig::effective() const {
  json j;
  j["run_id"] = run_id;
  j["seed"] = seed;
  j["model"] = {{"kind", model.kind}, {"H", model.H}, {"g", model.g}, {"alpha", model.alpha},
                {"activation", model.activation}, {"hh_dt", model.hh_dt}, {"hh_I_app", model.hh_I_app}};
  j["task"] = {{"kind", task.kind},         {"T_ctx", task.T_ctx},       {"T_stim", task.T_stim},
               {"T_mem", task.T_mem},       {"T_resp", task.T_resp},     {"noise_std", task.noise_std},
               {"pool_size", task.pool_size}, {"eval_size", task.eval_size}, {"matched_stimuli", task.matched_stimuli}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"eps", train.eps},
                {"grad_clip_norm", train.grad_clip_norm},
                {"batch_size", train.batch_size},
                {"max_iters", train.max_iters},
                {"optimizer", train.optimizer},
                {"threshold_mode", train.threshold_mode},
                {"convergence_loss_threshold", train.convergence_loss_threshold},
                {"baseline_factor", train.baseline_factor},
                {"snapshot_every", train.snapshot_every}};
  j["analysis"] = {{"spectra_every", analysis.spectra_every},
                   {"spectra_trials", analysis.spectra_trials},
                   {"interference", analysis.interference},
                   {"lyapunov", analysis.lyapunov},
                   {"effrank_threshold", analysis.effrank_threshold}};
  j["experiment1"] = {{"g_list", experiment1.g_list}, {"seeds", experiment1.seeds}};
  j["experiment2"] = {{"seeds", experiment2.seeds},
                      {"analysis_trials_per_task", experiment2.analysis_trials_per_task},
                      {"snapshot_every", experiment2.snapshot_every}};
  j["verify"] = {{"fault", verify.fault}};
  j["spectra"] = {{"snapshot", spectra.snapshot}, {"operator", spectra.op}, {"k", spectra.k},
                  {"consensus", spectra.consensus}};
  return j;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(effective().dump()); }

RunConfig command_defaults(const std::string& command) {
  RunConfig c;
  if (command == "experiment2") {
    c.run_id = "experiment2";
    c.model.kind = "gru";
    c.task.kind = "multitask";
    c.task.T_ctx = 15;
    c.task.T_stim = c.task.T_mem = c.task.T_resp = 25;
    c.train.max_iters = 5000;
    c.analysis.interference = true;
  } else if (command == "experiment1") {
    c.run_id = "experiment1";
  }
  return c;
}

RunConfig parse_run_config(const std::string& text, std::optional<std::uint64_t> seed_override,
                           const std::string& command) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  if (auto err = validate_json(doc, run_config_schema()))
    fail(ErrorCode::kConfig, "config error at '" + err->pointer + "': " + err->message);

  RunConfig c = command_defaults(command);
  take(doc, "run_id", c.run_id);
  take(doc, "seed", c.seed);
  if (doc.contains("model")) {
    const json& m = doc["model"];
    take(m, "kind", c.model.kind);
    take(m, "H", c.model.H);
    take(m, "g", c.model.g);
    take(m, "alpha", c.model.alpha);
    take(m, "activation", c.model.activation);
    take(m, "hh_dt", c.model.hh_dt);
    take(m, "hh_I_app", c.model.hh_I_app);
  }
  if (doc.contains("task")) {
    const json& t = doc["task"];
    const bool was_multitask = c.task.kind == "multitask";
    take(t, "kind", c.task.kind);
    if (c.task.kind == "multitask" && !was_multitask) {
      c.task.T_ctx = 15;
      c.task.T_stim = c.task.T_mem = c.task.T_resp = 25;
    } else if (c.task.kind != "multitask" && was_multitask) {
      c.task.T_ctx = 0;
      c.task.T_stim = c.task.T_mem = c.task.T_resp = 30;
    }
    take(t, "T_ctx", c.task.T_ctx);
    take(t, "T_stim", c.task.T_stim);
    take(t, "T_mem", c.task.T_mem);
    take(t, "T_resp", c.task.T_resp);
    take(t, "noise_std", c.task.noise_std);
    take(t, "pool_size", c.task.pool_size);
    take(t, "eval_size", c.task.eval_size);
    take(t, "matched_stimuli", c.task.matched_stimuli);
  }
  if (c.task.kind == "delay_pro" || c.task.kind == "delay_anti") {
    if (!(doc.contains("task") && doc["task"].contains("T_mem"))) c.task.T_mem = 0;
  }
  if (doc.contains("train")) {
    const json& t = doc["train"];
    take(t, "learning_rate", c.train.learning_rate);
    take(t, "beta1", c.train.beta1);
    take(t, "beta2", c.train.beta2);
    take(t, "eps", c.train.eps);
    take(t, "grad_clip_norm", c.train.grad_clip_norm);
    take(t, "batch_size", c.train.batch_size);
    take(t, "max_iters", c.train.max_iters);
    take(t, "optimizer", c.train.optimizer);
    take(t, "threshold_mode", c.train.threshold_mode);
    take(t, "convergence_loss_threshold", c.train.convergence_loss_threshold);
    take(t, "baseline_factor", c.train.baseline_factor);
    take(t, "snapshot_every", c.train.snapshot_every);
  }
  if (doc.contains("analysis")) {
    const json& a = doc["analysis"];
    take(a, "spectra_every", c.analysis.spectra_every);
    take(a, "spectra_trials", c.analysis.spectra_trials);
    take(a, "interference", c.analysis.interference);
    take(a, "lyapunov", c.analysis.lyapunov);
    take(a, "effrank_threshold", c.analysis.effrank_threshold);
  }
  if (doc.contains("experiment1")) {
    take(doc["experiment1"], "g_list", c.experiment1.g_list);
    take(doc["experiment1"], "seeds", c.experiment1.seeds);
  }
  if (doc.contains("experiment2")) {
    take(doc["experiment2"], "seeds", c.experiment2.seeds);
    take(doc["experiment2"], "analysis_trials_per_task", c.experiment2.analysis_trials_per_task);
    take(doc["experiment2"], "snapshot_every", c.experiment2.snapshot_every);
  }
  if (doc.contains("verify")) take(doc["verify"], "fault", c.verify.fault);
  if (doc.contains("spectra")) {
    take(doc["spectra"], "snapshot", c.spectra.snapshot);
    take(doc["spectra"], "operator", c.spectra.op);
    take(doc["spectra"], "k", c.spectra.k);
    take(doc["spectra"], "consensus", c.spectra.consensus);
  }
  if (seed_override) c.seed = *seed_override;

  require(!c.run_id.empty() && c.run_id.find('/') == std::string::npos && c.run_id != "." && c.run_id != "..",
          ErrorCode::kConfig, "config error at '/run_id': must be a plain directory name");
  require(c.model.alpha > 0.0, ErrorCode::kConfig, "config error at '/model/alpha': must be in (0, 1]");
  require(c.analysis.effrank_threshold > 0.0, ErrorCode::kConfig,
          "config error at '/analysis/effrank_threshold': must be in (0, 1]");
  require(c.task.kind == "multitask" || c.task.T_ctx == 0, ErrorCode::kConfig,
          "config error at '/task/T_ctx': a context period is only used by the multitask setting");
  return c;
}

}  // namespace kpflow
