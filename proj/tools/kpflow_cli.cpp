// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

// Command-line front end. Talks to the library only through the C interface.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "kpflow/kpflow.h"

namespace {

struct CommonOptions {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Output root; the run directory is <out>/<run_id>");
  sub->add_option("--seed", o.seed, "Override the master seed");
  sub->add_option("--jobs", o.jobs, "Independent runs executed in parallel")->check(CLI::PositiveNumber);
}

int run(const std::string& command, const CommonOptions& o) {
  std::string text = "{}";
  if (!o.config.empty()) {
    std::ifstream in(o.config, std::ios::binary);
    if (!in) {
      std::fprintf(stderr, "kpflow: cannot read %s\n", o.config.c_str());
      return kpf_exit_code(KPF_ERR_IO);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  char dir[4096] = {0};
  const std::uint64_t seed = o.seed.value_or(0);
  const kpf_status st =
      kpf_run_command(command.c_str(), text.c_str(), o.out.c_str(), o.seed ? &seed : nullptr, o.jobs, dir, sizeof dir);
  if (st != KPF_OK) {
    std::fprintf(stderr, "kpflow %s: %s: %s\n", command.c_str(), kpf_status_name(st), kpf_last_error());
    if (dir[0]) std::fprintf(stderr, "partial outputs in %s\n", dir);
    return kpf_exit_code(st);
  }
  std::printf("%s\n", dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kpflow: operator decomposition of gradient-descent learning in recurrent models"};
  app.set_version_flag("--version", std::string(kpf_version()));
  app.require_subcommand(1);

  CommonOptions opts;
  const struct {
    const char* name;
    const char* help;
  } commands[] = {
      {"train", "Train one model; writes loss curve, snapshots, spectra and a manifest"},
      {"experiment1", "Convergence and effective-rank sweep over the recurrent weight scale g"},
      {"experiment2", "Multitask GRU training with interference and alignment analysis"},
      {"verify", "Run the invariant suite and write a pass/fail report"},
      {"spectra", "One-shot operator SVD on a saved snapshot"},
  };
  for (const auto& c : commands) add_common(app.add_subcommand(c.name, c.help), opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  for (const auto* sub : app.get_subcommands()) return run(sub->get_name(), opts);
  return 2;
}
