/*
 * Copyright 2026 The cxlsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "cxlsim/config.hpp"
#include "cxlsim/errors.hpp"
#include "cxlsim/runner.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace cxlsim;
using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;

// Flags shared by every subcommand. Each maps onto one config key so the
// file and the command line stay in parity; --set reaches every key.
struct Flags {
  std::string config;
  std::optional<std::string> model, policy, out, crash_mode, baseline;
  std::optional<std::uint64_t> batches, seed, staleness, crash_limit;
  std::optional<double> reuse, zipf;
  std::optional<unsigned> threads;
  bool timing_only = false;
  bool no_checkpoint = false;
  bool print_config = false;
  std::vector<std::string> sets;
  std::vector<std::string> grid;
};

void add_flags(CLI::App &cmd, Flags &f) {
  cmd.add_option("-c,--config", f.config, "JSON config file")
      ->check(CLI::ExistingFile);
  cmd.add_option("-m,--model", f.model, "model names, comma separated (RM1..RM4, TOY)");
  cmd.add_option("-p,--policy", f.policy,
                 "policies, comma separated (SSD,PMEM,PCIE,CXL_D,CXL_B,CXL,DRAM)");
  cmd.add_option("-n,--batches", f.batches, "batches per run");
  cmd.add_option("--seed", f.seed, "workload and initialization seed");
  cmd.add_option("--reuse-rate", f.reuse, "fraction of lookups reused from the previous batch");
  cmd.add_option("--zipf", f.zipf, "Zipf exponent of fresh lookups");
  cmd.add_option("-K,--staleness-bound", f.staleness, "max embedding/MLP log batch gap");
  cmd.add_option("-o,--out", f.out,
                 fmt::format("output directory (overrides ${})", kOutDirEnv));
  cmd.add_option("--crash-test", f.crash_mode, "none, exhaustive or sampled");
  cmd.add_option("--crash-limit", f.crash_limit,
                 "exhaustive: max persist events; sampled: crash points");
  cmd.add_option("--baseline", f.baseline, "energy normalization policy");
  cmd.add_option("-j,--threads", f.threads, "worker threads (0 = all cores)");
  cmd.add_flag("--timing-only", f.timing_only, "skip the numerical training");
  cmd.add_flag("--no-checkpoint", f.no_checkpoint, "disable every checkpoint");
  cmd.add_option("--set", f.sets, "override any config key: dotted.key=value");
  cmd.add_flag("--print-config", f.print_config, "print the effective config and exit");
}

json effective_document(const Flags &f) {
  json doc = f.config.empty() ? default_document() : load_document(f.config);
  if (const char *env = std::getenv(kOutDirEnv); env && *env)
    doc["output_dir"] = env;
  for (const auto &s : f.sets)
    apply_override(doc, s);
  auto set = [&](const char *path, const auto &v) {
    if (v)
      apply_override(doc, path, fmt::format("{}", *v));
  };
  auto set_string = [&](const char *path, const std::optional<std::string> &v) {
    if (v)
      apply_override(doc, path, json(*v).dump());
  };
  if (f.model)
    apply_override(doc, "models", *f.model);
  if (f.policy)
    apply_override(doc, "policies", *f.policy);
  set("batches", f.batches);
  set("seed", f.seed);
  set("staleness_bound", f.staleness);
  set("workload.reuse_rate", f.reuse);
  set("workload.zipf_exponent", f.zipf);
  set("threads", f.threads);
  set("crash_test.limit", f.crash_limit);
  set_string("output_dir", f.out);
  set_string("crash_test.mode", f.crash_mode);
  set_string("baseline", f.baseline);
  if (f.timing_only)
    doc["functional"] = false;
  if (f.no_checkpoint)
    doc["checkpointing"] = false;
  return doc;
}

void print_table(const RunSpec &spec, const RunOutput &out) {
  fmt::print("{:<6} {:<6} {:>14} {:>14} {:>14} {:>12}\n", "model", "policy",
             "total_s", "training_s", "checkpoint_s", "energy_j");
  for (const auto &j : out.jobs)
    fmt::print("{:<6} {:<6} {:>14.6e} {:>14.6e} {:>14.6e} {:>12.4e}\n", j.model,
               to_string(j.policy), j.sim.timeline.total_time, j.training_time,
               j.breakdown[static_cast<std::size_t>(Category::Checkpoint)],
               j.energy.total_j());
  (void)spec;
}

int report_crashes(const RunOutput &out) {
  for (const auto &[model, rep] : out.crashes) {
    fmt::print("crash-test {} {}: {} persist events, {} crash points, {} failures\n",
               model, to_string(rep.policy), rep.total_events,
               rep.outcomes.size(), rep.failures());
    for (const auto &o : rep.outcomes)
      if (!o.ok)
        fmt::print("  event {}: {}\n", o.event_index, o.detail);
  }
  return out.crash_failures() ? kExitInvariant : 0;
}

int cmd_run(const Flags &f, bool compare_mode, bool crash_mode) {
  json doc = effective_document(f);
  if (crash_mode) {
    if (!f.policy)
      doc["policies"] = json::array({"CXL_B", "CXL"});
    if (doc["crash_test"]["mode"] == "none")
      doc["crash_test"]["mode"] = "exhaustive";
  }
  if (compare_mode) {
    const auto base = std::string(to_string(parse_policy(doc["baseline"].get<std::string>())));
    bool present = false;
    for (const auto &p : doc["policies"])
      present = present || (p.is_string() && to_string(parse_policy(p.get<std::string>())) == base);
    if (!present)
      doc["policies"].push_back(base);
  }
  if (f.print_config) {
    fmt::print("{}\n", doc.dump(2));
    return 0;
  }
  const RunSpec spec = spec_from_document(doc);
  const RunOutput out = execute(spec);
  write_artifacts(spec.output_dir, doc, spec, out);

  fmt::print("{}\n", provenance_line(doc));
  if (compare_mode) {
    std::vector<EnergyReport> reports;
    for (const auto &j : out.jobs)
      reports.push_back(j.energy);
    const auto base = to_string(parse_policy(spec.baseline));
    const auto norm = compare(reports, base);
    fmt::print("{:<6} {:<6} {:>12} {:>10} {:>14} {:>10}\n", "model", "policy",
               "energy_j", "energy/b", "training_s", "time/b");
    for (std::size_t i = 0; i < out.jobs.size(); ++i) {
      const auto &j = out.jobs[i];
      double base_time = 0.0;
      for (const auto &k : out.jobs)
        if (k.model == j.model && to_string(k.policy) == base)
          base_time = k.training_time;
      fmt::print("{:<6} {:<6} {:>12.4e} {:>10.4f} {:>14.6e} {:>10.4f}\n", j.model,
                 to_string(j.policy), norm[i].total_j, norm[i].normalized,
                 j.training_time, j.training_time / base_time);
    }
  } else {
    print_table(spec, out);
  }
  const int status = report_crashes(out);
  fmt::print("artifacts in {}\n", spec.output_dir);
  return status;
}

int cmd_sweep(const Flags &f) {
  json doc = effective_document(f);
  if (f.print_config) {
    fmt::print("{}\n", doc.dump(2));
    return 0;
  }
  std::vector<GridAxis> axes;
  for (const auto &g : f.grid)
    axes.push_back(parse_grid(g));
  const RunSpec spec = spec_from_document(doc);
  const auto rows = sweep(doc, axes, spec.threads);
  std::error_code ec;
  std::filesystem::create_directories(spec.output_dir, ec);
  const auto file = std::filesystem::path(spec.output_dir) / "sweep.csv";
  std::ofstream os(file, std::ios::binary);
  if (!os)
    throw ConfigError(fmt::format("cannot write {}", file.string()));
  write_sweep_csv(os, provenance_line(doc), axes, rows);
  fmt::print("{}\n{} rows written to {}\n", provenance_line(doc), rows.size(),
             file.string());
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"cxlsim: CXL-attached persistent-memory recommendation training simulator"};
  app.set_version_flag("--version", std::string(cxlsim::kVersion));
  app.require_subcommand(1);

  Flags f;
  auto *run = app.add_subcommand("run", "simulate models under policies and write artifacts");
  auto *swp = app.add_subcommand("sweep", "cartesian parameter grid, merged sweep.csv");
  auto *cmp = app.add_subcommand("compare", "energy and time normalized to the baseline policy");
  auto *crash = app.add_subcommand("crash-test", "enumerate crash points of undo-log policies");
  for (auto *c : {run, swp, cmp, crash})
    add_flags(*c, f);
  swp->add_option("-g,--grid", f.grid, "axis: dotted.key=v1,v2,... (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (swp->parsed())
      return cmd_sweep(f);
    return cmd_run(f, cmp->parsed(), crash->parsed());
  } catch (const ConfigError &e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const InvariantViolation &e) {
    fmt::print(stderr, "invariant violated: {}\n", e.what());
    return kExitInvariant;
  } catch (const ProtocolViolation &e) {
    fmt::print(stderr, "invariant violated: checkpoint-protocol: {}\n", e.what());
    return kExitInvariant;
  } catch (const std::exception &e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
