// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/runs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <thread>

#include "core/analysis.hpp"
#include "core/error.hpp"
#include "core/kpf_io.hpp"
#include "core/lyapunov.hpp"
#include "core/operators.hpp"
#include "core/spectral.hpp"
#include "kpflow/version.hpp"

namespace kpflow {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Sub-seed tags.
constexpr std::uint64_t kSeedModel = 0x6D6F64656Cull;
constexpr std::uint64_t kSeedReadout = 0x726561646Full;
constexpr std::uint64_t kSeedPool = 0x706F6F6Cull;
constexpr std::uint64_t kSeedEval = 0x6576616Cull;
constexpr std::uint64_t kSeedAnalysis = 0x616E616Cull;
constexpr std::uint64_t kSeedMinibatch = 0x6D696E69ull;

const std::vector<TaskKind> kTaskOrder{TaskKind::kMemoryPro, TaskKind::kMemoryAnti, TaskKind::kDelayPro,
                                       TaskKind::kDelayAnti};

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json opt_index(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }
json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_json(const fs::path& p, const json& j) { write_text_file(p, j.dump(2) + "\n"); }

// Runs f(0..n-1) on up to `jobs` threads; rethrows the first failure in index order.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < jobs; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Evenly strided subset of at most n trials.
std::vector<std::size_t> strided(std::size_t B, std::size_t n) {
  n = std::min(n, B);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < n; ++k) idx.push_back(k * B / n);
  return idx;
}

Operator named_operator(const ForwardTrace& tr, const std::string& name) {
  if (name == "P") return make_p(tr);
  if (name == "K") return make_k(tr);
  if (name == "PKP") return make_pkp(tr);
  if (name == "PPstar") return make_ppstar(tr);
  fail(ErrorCode::kConfig, "config error at '/spectra/operator': unknown operator '" + name + "'");
}

// One interference snapshot of a multitask run.
struct InterferenceSnap {
  std::size_t iter = 0;
  ScoreMatrix M_cos, M_rayleigh, alignment;
};

InterferenceSnap interference_snapshot(std::size_t iter, const Model& model, const Readout& ro,
                                       const TrialBatch& batch, bool matched) {
  InterferenceSnap s;
  s.iter = iter;
  const ForwardTrace tr = model.forward(batch.inputs);
  const LossResult lr = loss_and_err(tr, ro, batch);
  const auto part = batch.partition(kTaskOrder);
  const Operator K = make_k(tr);
  s.M_cos = interference_step(tr, part, lr.err, K).M_cos;
  s.M_rayleigh = rayleigh_interference(tr, part, lr.err, K);
  if (matched) s.alignment = task_alignment_matrix(tr.z, part, batch.stim_angles);
  return s;
}

double safe_filtered(const ScoreMatrix& M, const Filter& f) {
  if (M.size() == 0) return kNaN;
  try {
    return filtered_score(M, f);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUndefined) throw;
    return kNaN;
  }
}

// Per-snapshot scores, running means over the defined entries, and the transition iteration.
json summarize_interference(const std::vector<InterferenceSnap>& snaps, const fs::path& dir) {
  const AlignmentFilters filters = alignment_filters();
  std::string csv = "iter,pro_anti,mem_del,cum_pro_anti,cum_mem_del,align_pro_anti,align_mem_del\n";
  json records = json::array();
  double sum_pa = 0.0, sum_md = 0.0;
  std::size_t n_pa = 0, n_md = 0;
  std::vector<double> pa(snaps.size()), md(snaps.size());
  double cum_pa = kNaN, cum_md = kNaN, al_pa = kNaN, al_md = kNaN;
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    pa[s] = safe_filtered(snaps[s].M_cos, filters.pro_anti);
    md[s] = safe_filtered(snaps[s].M_cos, filters.mem_del);
    if (!std::isnan(pa[s])) sum_pa += pa[s], ++n_pa;
    if (!std::isnan(md[s])) sum_md += md[s], ++n_md;
    cum_pa = n_pa ? sum_pa / double(n_pa) : kNaN;
    cum_md = n_md ? sum_md / double(n_md) : kNaN;
    al_pa = safe_filtered(snaps[s].alignment, filters.pro_anti);
    al_md = safe_filtered(snaps[s].alignment, filters.mem_del);
    csv += std::to_string(snaps[s].iter) + "," + fmt_double(pa[s]) + "," + fmt_double(md[s]) + "," +
           fmt_double(cum_pa) + "," + fmt_double(cum_md) + "," + fmt_double(al_pa) + "," + fmt_double(al_md) + "\n";
    json r;
    r["iter"] = snaps[s].iter;
    r["M_cos"] = score_matrix_json(snaps[s].M_cos);
    r["M_rayleigh"] = score_matrix_json(snaps[s].M_rayleigh);
    r["task_alignment"] = snaps[s].alignment.size() ? score_matrix_json(snaps[s].alignment) : json(nullptr);
    records.push_back(r);
  }
  // First snapshot from which pro/anti stays above mem/del for 10 consecutive snapshots.
  std::optional<std::size_t> transition;
  constexpr std::size_t kHold = 10;
  for (std::size_t s = 0; s + kHold <= snaps.size() && !transition; ++s) {
    bool ok = true;
    for (std::size_t k = s; k < s + kHold && ok; ++k) ok = pa[k] > md[k];
    if (ok) transition = snaps[s].iter;
  }
  write_text_file(dir / "interference.csv", csv);
  write_json(dir / "interference.json",
             {{"task_order", {"MP", "MA", "DP", "DA"}}, {"snapshots", records}});
  return {{"snapshots", snaps.size()},
          {"final_cum_pro_anti", num_or_null(cum_pa)},
          {"final_cum_mem_del", num_or_null(cum_md)},
          {"final_align_pro_anti", num_or_null(al_pa)},
          {"final_align_mem_del", num_or_null(al_md)},
          {"transition_iter", opt_index(transition)}};
}

TrialBatch spectral_batch(const RunConfig& cfg, const TrialBatch& eval) {
  const auto idx = strided(eval.B(), cfg.analysis.spectra_trials);
  return select_trials(eval, idx);
}

}  // namespace

json ConsensusRanks::to_json() const {
  return {{"K_sv", K_sv},
          {"K_sv_squared", K_sv_squared},
          {"P_sv", P_sv},
          {"P_sv_squared", P_sv_squared},
          {"hidden_effdim", hidden_effdim}};
}

ConsensusRanks consensus_effranks(const ForwardTrace& tr, double threshold) {
  const AxisSet units(kUnitAxis);
  require(tr.B() * tr.T() <= 4096, ErrorCode::kInvalidArgument,
          "consensus_effranks: B*T must be at most 4096 so the consensus operators are dense");
  SvdOptions o;
  o.k = 1;
  o.want_vectors = false;
  const SpectralSummary k = top_svd(average(make_k(tr), units), o);
  const SpectralSummary p = top_svd(average(make_p(tr), units), o);
  ConsensusRanks r;
  r.K_sv = effective_rank(k.singular_values, Energy::kSv, threshold);
  r.K_sv_squared = effective_rank(k.singular_values, Energy::kSvSquared, threshold);
  r.P_sv = effective_rank(p.singular_values, Energy::kSv, threshold);
  r.P_sv_squared = effective_rank(p.singular_values, Energy::kSvSquared, threshold);
  r.hidden_effdim = effdim(tr.z, threshold);
  return r;
}

std::vector<TaskSpec> task_specs(const RunConfig& cfg) {
  const auto& t = cfg.task;
  std::vector<TaskSpec> specs;
  if (t.kind == "multitask") {
    specs = default_multitask_specs(t.noise_std);
    for (auto& s : specs) {
      s.T_ctx = t.T_ctx;
      s.T_resp = t.T_resp;
      if (is_delay(s.kind)) {
        s.T_stim = t.T_stim + t.T_mem;
        s.T_mem = 0;
      } else {
        s.T_stim = t.T_stim;
        s.T_mem = t.T_mem;
      }
    }
  } else {
    TaskSpec s;
    s.kind = task_from_name(t.kind);
    s.T_ctx = 0;
    s.T_stim = t.T_stim;
    s.T_mem = t.T_mem;
    s.T_resp = t.T_resp;
    s.noise_std = t.noise_std;
    require(!is_delay(s.kind) || s.T_mem == 0, ErrorCode::kConfig,
            "config error at '/task/T_mem': delay tasks have no memory period");
    specs.push_back(s);
  }
  for (const auto& s : specs) s.validate();
  return specs;
}

std::unique_ptr<Model> build_model(const RunConfig& cfg) {
  const std::size_t I = task_specs(cfg)[0].input_dim();
  const auto& m = cfg.model;
  Rng rng(mix_seed(cfg.seed ^ kSeedModel));
  if (m.kind == "rnn") {
    RnnConfig c;
    c.hidden = m.H;
    c.inputs = I;
    c.alpha = m.alpha;
    c.activation = m.activation == "relu" ? Activation::kRelu : Activation::kTanh;
    auto model = std::make_unique<RnnModel>(c);
    model->initialize(m.g, rng);
    return model;
  }
  if (m.kind == "gru") {
    GruConfig c;
    c.hidden = m.H;
    c.inputs = I;
    auto model = std::make_unique<GruModel>(c);
    model->initialize(m.g, rng);
    return model;
  }
  if (m.kind == "hh") {
    HhConfig c;
    c.neurons = m.H;
    c.inputs = I;
    c.dt = m.hh_dt;
    c.I_app = m.hh_I_app;
    auto model = std::make_unique<HhModel>(c);
    model->initialize(m.g, rng);
    return model;
  }
  fail(ErrorCode::kConfig, "config error at '/model/kind': unknown model kind '" + m.kind + "'");
}

TaskData build_task_data(const RunConfig& cfg) {
  std::vector<TaskSpec> noisy = task_specs(cfg), clean = noisy;
  for (auto& s : clean) s.noise_std = 0.0;
  const auto& t = cfg.task;
  TaskData d;
  if (t.kind == "multitask") {
    const std::size_t n = noisy.size();
    require(t.pool_size >= n, ErrorCode::kConfig, "config error at '/task/pool_size': need one trial per task");
    d.pool = gen_multitask_batch(noisy, t.pool_size / n, mix_seed(cfg.seed ^ kSeedPool), false);
    d.eval = gen_multitask_batch(clean, t.eval_size, mix_seed(cfg.seed ^ kSeedEval), true);
    d.analysis = gen_multitask_batch(clean, cfg.experiment2.analysis_trials_per_task,
                                     mix_seed(cfg.seed ^ kSeedAnalysis), t.matched_stimuli);
  } else {
    d.pool = gen_batch(noisy[0], t.pool_size, mix_seed(cfg.seed ^ kSeedPool));
    d.eval = gen_batch(clean[0], t.eval_size, mix_seed(cfg.seed ^ kSeedEval));
  }
  return d;
}

double convergence_threshold(const RunConfig& cfg, const TrialBatch& eval) {
  if (cfg.train.threshold_mode == "fixed") return cfg.train.convergence_loss_threshold;
  return cfg.train.baseline_factor * zero_output_loss(eval);
}

void save_snapshot(const fs::path& dir, const Model& model, const Readout& ro) {
  fs::create_directories(dir);
  write_kpf(dir / "params.kpf", vector_to_kpf(model.params()));
  write_json(dir / "params.json", params_sidecar(model));
  KpfTensor w;
  w.dims = {std::uint64_t(ro.W.rows()), std::uint64_t(ro.W.cols())};
  w.data.assign(ro.W.data(), ro.W.data() + ro.W.size());
  write_kpf(dir / "readout_W.kpf", w);
  write_kpf(dir / "readout_b.kpf", vector_to_kpf(ro.b));
}

LoadedSnapshot load_snapshot(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::kIo, "snapshot directory '" + dir.string() + "' does not exist");
  const json side = json::parse(read_text_file(dir / "params.json"));
  LoadedSnapshot s;
  s.model = model_from_json(side.at("model"));
  const Vec theta = vector_from_kpf(read_kpf(dir / "params.kpf"));
  require(std::size_t(theta.size()) == s.model->num_params(), ErrorCode::kIo,
          "snapshot: params.kpf length does not match params.json");
  s.model->set_params(theta);
  const KpfTensor w = read_kpf(dir / "readout_W.kpf");
  require(w.dims.size() == 2 && w.dims[1] == s.model->state_dim(), ErrorCode::kIo, "snapshot: bad readout_W.kpf");
  s.readout.W = Eigen::Map<const Mat>(w.data.data(), Eigen::Index(w.dims[0]), Eigen::Index(w.dims[1]));
  s.readout.b = vector_from_kpf(read_kpf(dir / "readout_b.kpf"));
  require(s.readout.b.size() == s.readout.W.rows(), ErrorCode::kIo, "snapshot: bad readout_b.kpf");
  return s;
}

TrainOutcome run_train(const RunConfig& cfg, const fs::path& dir, bool consensus_ranks) {
  require(cfg.model.kind != "hh", ErrorCode::kConfig,
          "config error at '/model/kind': Hodgkin-Huxley models are evaluation-only and cannot be trained");
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg.effective());

  auto model = build_model(cfg);
  const TaskData data = build_task_data(cfg);
  Rng ro_rng(mix_seed(cfg.seed ^ kSeedReadout));
  Readout ro = Readout::init(data.eval.targets.H(), model->state_dim(), ro_rng);

  TrainOutcome out;
  out.dir = dir;
  out.threshold = convergence_threshold(cfg, data.eval);

  TrainConfig tc;
  tc.adam = {cfg.train.learning_rate, cfg.train.beta1, cfg.train.beta2, cfg.train.eps};
  tc.optimizer = cfg.train.optimizer == "gd" ? Optimizer::kGd : Optimizer::kAdam;
  tc.grad_clip_norm = cfg.train.grad_clip_norm;
  tc.batch_size = cfg.train.batch_size;
  tc.max_iters = cfg.train.max_iters;
  tc.convergence_loss_threshold = out.threshold;
  tc.seed = mix_seed(cfg.seed ^ kSeedMinibatch);

  const bool multitask = cfg.task.kind == "multitask";
  const std::size_t snap_every = cfg.train.snapshot_every;
  const std::size_t spec_every = cfg.analysis.spectra_every;
  const std::size_t intf_every = multitask && cfg.analysis.interference ? cfg.experiment2.snapshot_every : 0;
  tc.snapshot_every = (snap_every || spec_every || intf_every) ? 1 : 0;

  const TrialBatch sbatch = spectral_batch(cfg, data.eval);
  const double thr = cfg.analysis.effrank_threshold;
  save_snapshot(dir / "snapshots" / "initial", *model, ro);
  if (consensus_ranks) out.before = consensus_effranks(model->forward(sbatch.inputs), thr);

  std::string spectra_csv = "iter,K_sv,K_sv_squared,P_sv,P_sv_squared,hidden_effdim\n";
  std::vector<InterferenceSnap> snaps;
  std::optional<std::size_t> last_snap, last_spec;
  auto due = [](std::size_t every, std::size_t iter, bool final, const std::optional<std::size_t>& last) {
    if (!every || (last && *last == iter)) return false;
    return final || iter % every == 0;
  };
  const TrainHook hook = [&](std::size_t iter, const Model& m, const Readout& r, bool final) {
    if (due(snap_every, iter, final, last_snap)) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06zu", iter);
      save_snapshot(dir / "snapshots" / name, m, r);
      last_snap = iter;
    }
    if (due(spec_every, iter, final, last_spec)) {
      const ConsensusRanks c = consensus_effranks(m.forward(sbatch.inputs), thr);
      spectra_csv += std::to_string(iter) + "," + std::to_string(c.K_sv) + "," + std::to_string(c.K_sv_squared) +
                     "," + std::to_string(c.P_sv) + "," + std::to_string(c.P_sv_squared) + "," +
                     std::to_string(c.hidden_effdim) + "\n";
      last_spec = iter;
    }
    const std::optional<std::size_t> last_intf =
        snaps.empty() ? std::nullopt : std::optional<std::size_t>(snaps.back().iter);
    if (due(intf_every, iter, final, last_intf))
      snaps.push_back(interference_snapshot(iter, m, r, data.analysis, cfg.task.matched_stimuli));
  };

  out.record = train(*model, ro, data.pool, data.eval, tc, hook);
  const TrainRecord& rec = out.record;
  save_snapshot(dir / "snapshots" / "final", *model, ro);
  write_text_file(dir / "loss.csv", rec.loss_csv());
  if (spec_every) write_text_file(dir / "spectra.csv", spectra_csv);
  if (intf_every) out.interference = summarize_interference(snaps, dir);

  out.final_eval_loss = rec.eval_loss.empty() ? kNaN : rec.eval_loss.back();
  if (!rec.diverged) {
    const ForwardTrace final_tr = model->forward(sbatch.inputs);
    if (consensus_ranks) out.after = consensus_effranks(final_tr, thr);
    if (cfg.analysis.lyapunov) write_json(dir / "lyapunov.json", lyapunov_spectrum(final_tr, true).to_json());
  }

  json man;
  man["command"] = "train";
  man["version"] = kVersion;
  man["config_hash"] = hex64(cfg.hash());
  man["run_id"] = cfg.run_id;
  man["seed"] = cfg.seed;
  man["threshold"] = out.threshold;
  man["converged_iter"] = opt_index(rec.converged_iter);
  man["updates"] = rec.updates;
  man["iterations_recorded"] = rec.loss.size();
  man["final_eval_loss"] = num_or_null(out.final_eval_loss);
  man["diverged"] = rec.diverged;
  man["divergence_message"] = rec.divergence_message;
  man["effrank_threshold"] = thr;
  man["effrank_trials"] = sbatch.B();
  man["effrank_iter0"] = out.before ? out.before->to_json() : json(nullptr);
  man["effrank_final"] = out.after ? out.after->to_json() : json(nullptr);
  man["interference"] = out.interference;
  write_json(dir / "manifest.json", man);
  return out;
}

fs::path cmd_train(const RunConfig& cfg, const fs::path& out_root) {
  const fs::path dir = out_root / cfg.run_id;
  const TrainOutcome o = run_train(cfg, dir, true);
  if (o.record.diverged) fail(ErrorCode::kDivergence, "training diverged: " + o.record.divergence_message);
  return dir;
}

fs::path cmd_experiment1(const RunConfig& cfg, const fs::path& out_root, std::size_t jobs) {
  const fs::path root = out_root / cfg.run_id;
  fs::create_directories(root);
  write_json(root / "config.json", cfg.effective());

  std::vector<RunConfig> runs;
  for (double g : cfg.experiment1.g_list)
    for (std::uint64_t s : cfg.experiment1.seeds) {
      RunConfig c = cfg;
      c.model.g = g;
      c.seed = s;
      char name[64];
      std::snprintf(name, sizeof name, "g%g_seed%llu", g, static_cast<unsigned long long>(s));
      c.run_id = name;
      runs.push_back(c);
    }
  std::vector<TrainOutcome> res(runs.size());
  parallel_for(runs.size(), jobs, [&](std::size_t i) { res[i] = run_train(runs[i], root / "runs" / runs[i].run_id); });

  std::string csv =
      "g,seed,converged_iter,updates,threshold,final_eval_loss,diverged,effrank_K_before,effrank_K_after,"
      "effrank_P_before,effrank_P_after,effdim_before,effdim_after\n";
  auto rank_field = [](const std::optional<ConsensusRanks>& r, std::size_t ConsensusRanks::*f) {
    return r ? std::to_string((*r).*f) : std::string();
  };
  bool any_diverged = false;
  json rows = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const TrainOutcome& o = res[i];
    any_diverged = any_diverged || o.record.diverged;
    csv += fmt_double(runs[i].model.g) + "," + std::to_string(runs[i].seed) + "," +
           (o.record.converged_iter ? std::to_string(*o.record.converged_iter) : std::string()) + "," +
           std::to_string(o.record.updates) + "," + fmt_double(o.threshold) + "," + fmt_double(o.final_eval_loss) +
           "," + (o.record.diverged ? "1" : "0") + "," + rank_field(o.before, &ConsensusRanks::K_sv) + "," +
           rank_field(o.after, &ConsensusRanks::K_sv) + "," + rank_field(o.before, &ConsensusRanks::P_sv_squared) +
           "," + rank_field(o.after, &ConsensusRanks::P_sv_squared) + "," +
           rank_field(o.before, &ConsensusRanks::hidden_effdim) + "," +
           rank_field(o.after, &ConsensusRanks::hidden_effdim) + "\n";
    rows.push_back({{"g", runs[i].model.g},
                    {"seed", runs[i].seed},
                    {"run_dir", fs::path("runs") / runs[i].run_id},
                    {"converged_iter", opt_index(o.record.converged_iter)},
                    {"diverged", o.record.diverged}});
  }
  write_text_file(root / "summary.csv", csv);

  // Median convergence per g; runs that never converged count as max_iters.
  json medians = json::array();
  for (double g : cfg.experiment1.g_list) {
    std::vector<double> its;
    for (std::size_t i = 0; i < runs.size(); ++i)
      if (runs[i].model.g == g)
        its.push_back(res[i].record.converged_iter ? double(*res[i].record.converged_iter)
                                                   : double(cfg.train.max_iters));
    std::sort(its.begin(), its.end());
    const std::size_t n = its.size();
    const double med = n == 0 ? kNaN : (n % 2 ? its[n / 2] : 0.5 * (its[n / 2 - 1] + its[n / 2]));
    medians.push_back({{"g", g}, {"median_converged_iter", num_or_null(med)}});
  }
  write_json(root / "manifest.json", {{"command", "experiment1"},
                                      {"version", kVersion},
                                      {"config_hash", hex64(cfg.hash())},
                                      {"runs", rows},
                                      {"medians", medians}});
  if (any_diverged) fail(ErrorCode::kDivergence, "experiment1: at least one run diverged (see summary.csv)");
  return root;
}

fs::path cmd_experiment2(const RunConfig& cfg, const fs::path& out_root, std::size_t jobs) {
  require(cfg.task.kind == "multitask", ErrorCode::kConfig,
          "config error at '/task/kind': experiment2 needs the multitask setting");
  const fs::path root = out_root / cfg.run_id;
  fs::create_directories(root);
  write_json(root / "config.json", cfg.effective());

  std::vector<RunConfig> runs;
  for (std::uint64_t s : cfg.experiment2.seeds) {
    RunConfig c = cfg;
    c.seed = s;
    c.analysis.interference = true;
    c.run_id = "seed" + std::to_string(s);
    runs.push_back(c);
  }
  std::vector<TrainOutcome> res(runs.size());
  parallel_for(runs.size(), jobs,
               [&](std::size_t i) { res[i] = run_train(runs[i], root / "runs" / runs[i].run_id, false); });

  std::string csv =
      "seed,converged_iter,updates,final_eval_loss,diverged,cum_pro_anti,cum_mem_del,align_pro_anti,"
      "align_mem_del,transition_iter,interference_pro_anti_wins,alignment_pro_anti_wins\n";
  json rows = json::array();
  bool any_diverged = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const TrainOutcome& o = res[i];
    any_diverged = any_diverged || o.record.diverged;
    const json& s = o.interference;
    auto get = [&](const char* k) { return s.is_object() && s[k].is_number() ? s[k].get<double>() : kNaN; };
    const double cpa = get("final_cum_pro_anti"), cmd = get("final_cum_mem_del");
    const double apa = get("final_align_pro_anti"), amd = get("final_align_mem_del");
    const bool iwin = cpa > cmd, awin = apa > amd;
    const json tr = s.is_object() ? s["transition_iter"] : json(nullptr);
    csv += std::to_string(runs[i].seed) + "," +
           (o.record.converged_iter ? std::to_string(*o.record.converged_iter) : std::string()) + "," +
           std::to_string(o.record.updates) + "," + fmt_double(o.final_eval_loss) + "," +
           (o.record.diverged ? "1" : "0") + "," + fmt_double(cpa) + "," + fmt_double(cmd) + "," + fmt_double(apa) +
           "," + fmt_double(amd) + "," + (tr.is_number() ? std::to_string(tr.get<std::size_t>()) : std::string()) +
           "," + (iwin ? "1" : "0") + "," + (awin ? "1" : "0") + "\n";
    rows.push_back({{"seed", runs[i].seed},
                    {"run_dir", fs::path("runs") / runs[i].run_id},
                    {"converged_iter", opt_index(o.record.converged_iter)},
                    {"diverged", o.record.diverged},
                    {"interference", s}});
  }
  write_text_file(root / "summary.csv", csv);
  write_json(root / "manifest.json",
             {{"command", "experiment2"}, {"version", kVersion}, {"config_hash", hex64(cfg.hash())}, {"runs", rows}});
  if (any_diverged) fail(ErrorCode::kDivergence, "experiment2: at least one run diverged (see summary.csv)");
  return root;
}

fs::path cmd_spectra(const RunConfig& cfg, const fs::path& out_root) {
  const fs::path root = out_root / cfg.run_id;
  std::unique_ptr<Model> model;
  if (cfg.spectra.snapshot.empty()) {
    model = build_model(cfg);
  } else {
    model = load_snapshot(cfg.spectra.snapshot).model;
  }
  const TaskData data = build_task_data(cfg);
  const TrialBatch batch = spectral_batch(cfg, data.eval);
  const ForwardTrace tr = model->forward(batch.inputs);
  Operator op = named_operator(tr, cfg.spectra.op);
  if (cfg.spectra.consensus) op = average(op, AxisSet(kUnitAxis));
  SvdOptions o;
  o.k = cfg.spectra.k;
  o.seed = cfg.seed;
  o.want_vectors = true;
  o.convention = cfg.spectra.op == "K" ? Energy::kSv : Energy::kSvSquared;
  const SpectralSummary s = top_svd(op, o);

  fs::create_directories(root);
  write_json(root / "config.json", cfg.effective());
  json j = s.to_json();
  j["operator"] = cfg.spectra.op;
  j["consensus"] = cfg.spectra.consensus;
  j["snapshot"] = cfg.spectra.snapshot;
  j["trials"] = batch.B();
  j["version"] = kVersion;
  j["config_hash"] = hex64(cfg.hash());
  const std::string stem = "spectra_" + cfg.spectra.op;
  write_json(root / (stem + ".json"), j);
  std::string csv = "index,singular_value\n";
  for (std::size_t i = 0; i < s.singular_values.size(); ++i)
    csv += std::to_string(i) + "," + fmt_double(s.singular_values[i]) + "\n";
  write_text_file(root / (stem + ".csv"), csv);
  if (!s.right.empty()) {
    const std::size_t n = std::min(s.right.size(), cfg.spectra.k);
    const Shape3 sh = s.right[0].shape();
    KpfTensor f;
    f.dims = {n, sh.B, sh.T, sh.H};
    f.dt = s.right[0].dt();
    for (std::size_t i = 0; i < n; ++i) f.data.insert(f.data.end(), s.right[i].data().begin(), s.right[i].data().end());
    write_kpf(root / (stem + "_functions.kpf"), f);
  }
  return root;
}

fs::path cmd_verify(const RunConfig& cfg, const fs::path& out_root) {
  const fs::path root = out_root / cfg.run_id;
  const json report = run_invariant_suite(cfg.verify.fault, cfg.seed);
  fs::create_directories(root);
  write_json(root / "verify.json", report);
  if (!report.at("passed").get<bool>())
    fail(ErrorCode::kVerification, "verify: " + std::to_string(report.at("failed").get<std::size_t>()) +
                                       " invariant check(s) failed (see verify.json)");
  return root;
}

}  // namespace kpflow
