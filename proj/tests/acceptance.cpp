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
// Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails. Every tolerance is pinned here.

#include "cxlsim/crash.hpp"
#include "cxlsim/report.hpp"
#include "cxlsim/sim.hpp"

#include "oracles.hpp"
#include "scenarios.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

using namespace cxlsim;
namespace ct = cxlsim::testing;
namespace fs = std::filesystem;

namespace {

// Criterion 1
constexpr int kRelaxedTrials = 10000;
constexpr double kRelaxedMaxError = ct::kRelaxedExactTolerance;
constexpr double kRelaxedMaxSeconds = 10.0;
// Criterion 2
constexpr double kCrashMaxSeconds = 300.0;
// Criterion 3
constexpr double kResidual = 0.3e-3;
constexpr double kResidualTol = 0.05e-3;
// Criterion 4
constexpr std::uint64_t kPerfBatches = 100;
constexpr double kCxlDGain = 0.23, kCxlDGainTol = 0.10;
constexpr double kCxlGain = 0.14, kCxlGainTol = 0.07;
// Criterion 5
constexpr double kSsdSlowdown = 100.0;
constexpr double kSsdMaxSeconds = 60.0;
// Criterion 6
constexpr double kRawInsensitivity = 1e-3;
// Criterion 7
constexpr std::uint64_t kShortBound = 3;
// Criterion 8
constexpr std::uint64_t kEnergyBatches = 5;
// Criterion 9
constexpr int kFdSeeds = 100;
constexpr double kFdTolerance = 1e-4;

constexpr std::size_t kCkpt = static_cast<std::size_t>(Category::Checkpoint);

struct Outcome {
  bool pass = false;
  std::string detail;
};

SimOptions timing(std::uint64_t n) {
  SimOptions o;
  o.n_batches = n;
  o.functional = false;
  return o;
}

double total(Policy p, const char *model, const Platform &pf, std::uint64_t n) {
  return simulate(p, builtin_config(model), pf, timing(n)).timeline.total_time;
}

Outcome relaxed_lookup() {
  std::mt19937_64 rng(2026);
  double worst = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < kRelaxedTrials; ++i)
    worst = std::max(worst, ct::relaxed_trial<double>(rng));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= kRelaxedMaxError && secs < kRelaxedMaxSeconds,
          fmt::format("{} trials, max rel err {:.2e}, {:.2f} s", kRelaxedTrials,
                      worst, secs)};
}

Outcome crash_consistency() {
  const auto cfg = builtin_config("TOY");
  SimOptions o;
  o.n_batches = 3;
  std::string detail;
  bool pass = true;
  for (Policy p : {Policy::CXL_B, Policy::CXL}) {
    const auto rep = crash_test(p, cfg, default_platform(), o,
                                {CrashMode::Exhaustive, 0}, 0);
    pass = pass && rep.failures() == 0 && rep.total_events > 0 &&
           rep.outcomes.size() == rep.total_events + 1;
    detail += fmt::format("{}: {} points, {} failures; ", to_string(p),
                          rep.outcomes.size(), rep.failures());
  }
  return {pass, detail};
}

Outcome overlap_law() {
  const auto cfg = builtin_config("TOY");
  bool pass = true;
  double worst = 0.0;
  for (double scale : {0.25, 0.5, 1.0, 1.5, 2.0, 3.0}) {
    const auto r = simulate(Policy::CXL_B, cfg, ct::toy_platform(cfg, scale),
                            ct::toy_options(cfg, 4));
    for (const auto &w : r.log_windows) {
      const double predicted =
          std::max(0.0, (w.log_end - w.log_start) - (w.window_end - w.log_start));
      const double measured = batch_breakdown(r.timeline, w.span)[kCkpt];
      worst = std::max(worst, std::abs(measured - predicted));
      pass = pass && std::abs(measured - predicted) <= r.chunk_time;
    }
  }
  const auto b = simulate(Policy::CXL_B, cfg, ct::toy_platform(cfg), ct::toy_options(cfg, 4));
  const auto c = simulate(Policy::CXL, cfg, ct::toy_platform(cfg), ct::toy_options(cfg, 4));
  const double residual = batch_breakdown(b.timeline, 1)[kCkpt];
  const double steady = batch_breakdown(c.timeline, 1)[kCkpt];
  pass = pass && std::abs(residual - kResidual) <= kResidualTol && steady == 0.0;
  return {pass, fmt::format("law max dev {:.3e} s, CXL_B residual {:.4f} ms, "
                            "CXL steady {:.4f} ms",
                            worst, residual * 1e3, steady * 1e3)};
}

Outcome performance() {
  const auto pf = default_platform();
  const double pcie = total(Policy::PCIE, "RM1", pf, kPerfBatches);
  const double cxl_d = total(Policy::CXL_D, "RM1", pf, kPerfBatches);
  const double cxl_b = total(Policy::CXL_B, "RM1", pf, kPerfBatches);
  const double cxl = total(Policy::CXL, "RM1", pf, kPerfBatches);
  const double g1 = 1.0 - cxl_d / pcie;
  const double g2 = 1.0 - cxl / cxl_b;
  const bool ordered = cxl < cxl_b && cxl_b < cxl_d && cxl_d < pcie;
  return {ordered && std::abs(g1 - kCxlDGain) <= kCxlDGainTol &&
              std::abs(g2 - kCxlGain) <= kCxlGainTol,
          fmt::format("ordered {}, CXL_D vs PCIE -{:.1f}%, CXL vs CXL_B -{:.1f}%",
                      ordered, g1 * 100, g2 * 100)};
}

double training(Policy p, const char *model, const Platform &pf, std::uint64_t n) {
  return training_time(simulate(p, builtin_config(model), pf, timing(n)).timeline);
}

// Training time excludes checkpointing, which both policies pay at batch end.
Outcome ssd_gap() {
  const auto pf = default_platform();
  bool pass = true;
  std::string detail;
  for (const char *m : {"RM1", "RM2"}) {
    const double ratio =
        training(Policy::SSD, m, pf, 10) / training(Policy::PMEM, m, pf, 10);
    pass = pass && ratio >= kSsdSlowdown;
    detail += fmt::format("{} SSD/PMEM training {:.0f}x; ", m, ratio);
  }
  return {pass, detail};
}

Outcome raw_sensitivity() {
  const auto def = default_platform();
  auto flat = def;
  flat.pmem.raw_penalty_factor = 1.0;
  const auto cfg = builtin_config("RM1");
  const auto c_def = simulate(Policy::CXL, cfg, def, timing(20));
  const auto b_def = simulate(Policy::CXL_B, cfg, def, timing(20));
  const double c_flat = simulate(Policy::CXL, cfg, flat, timing(20)).timeline.total_time;
  const double b_flat = simulate(Policy::CXL_B, cfg, flat, timing(20)).timeline.total_time;
  const double dc = std::abs(c_def.timeline.total_time - c_flat) / c_flat;
  const double db = std::abs(b_def.timeline.total_time - b_flat) / b_flat;
  const auto cs = c_def.stats.raw_shared_reads;
  const auto bs = b_def.stats.raw_shared_reads;
  return {cs == 0 && bs > 0 && dc < kRawInsensitivity && db > kRawInsensitivity,
          fmt::format("shared RAW reads CXL {} CXL_B {}, CXL change {:.4f}%, "
                      "CXL_B change {:.3f}%",
                      cs, bs, dc * 100, db * 100)};
}

Outcome staleness_bound() {
  const auto cfg = builtin_config("TOY");
  const auto r = simulate(Policy::CXL, cfg, default_platform(),
                          ct::short_window_options(16, kShortBound));
  const auto gap = staleness(r.timeline);
  SimOptions normal;
  normal.n_batches = 16;
  const auto d = simulate(Policy::CXL, cfg, default_platform(), normal);
  const bool bounded = staleness(d.timeline) <= normal.staleness_bound;
  return {gap > 0 && gap <= kShortBound && bounded,
          fmt::format("max gap {} with K={}, forced completions {}", gap,
                      kShortBound, r.stats.forced_mlp_completions)};
}

Outcome energy_order() {
  const auto pf = default_platform();
  bool pass = true;
  std::string detail;
  for (const char *m : {"RM1", "RM2", "RM3", "RM4"}) {
    std::map<Policy, double> e;
    for (Policy p : all_policies()) {
      const auto r = simulate(p, builtin_config(m), pf, timing(kEnergyBatches));
      e[p] = energy(r.timeline, pf, resident_medium(p)).total_j();
    }
    for (const auto &[p, v] : e)
      if (p != Policy::CXL)
        pass = pass && e[Policy::CXL] < v;
    const bool small = std::string_view(m) == "RM1" || std::string_view(m) == "RM2";
    pass = pass && (small ? e[Policy::DRAM] > e[Policy::PMEM]
                          : e[Policy::PMEM] > e[Policy::DRAM]);
    detail += fmt::format("{} CXL/PMEM {:.2f} DRAM/PMEM {:.2f}; ", m,
                          e[Policy::CXL] / e[Policy::PMEM],
                          e[Policy::DRAM] / e[Policy::PMEM]);
  }
  return {pass, detail};
}

Outcome gradients() {
  double worst = 0.0;
  for (int s = 0; s < kFdSeeds; ++s)
    worst = std::max(worst, ct::fd_gradient_error(static_cast<std::uint64_t>(s)));
  return {worst <= kFdTolerance,
          fmt::format("{} seeds, max rel err {:.2e}", kFdSeeds, worst)};
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const auto dir = fs::temp_directory_path() / "cxlsim-acceptance-repro";
  fs::remove_all(dir);
  for (const char *run : {"a", "b"}) {
    const auto cmd = fmt::format("\"{}\" run -m TOY,RM1 -n 3 -j 2 -o \"{}\" >/dev/null",
                                 CXLSIM_CLI, (dir / run).string());
    if (std::system(cmd.c_str()) != 0)
      return {false, "CLI run failed"};
  }
  std::size_t files = 0, same = 0;
  for (const auto &e : fs::directory_iterator(dir / "a")) {
    ++files;
    same += slurp(e.path()) == slurp(dir / "b" / e.path().filename());
  }
  return {files > 0 && files == same,
          fmt::format("{}/{} artifacts identical", same, files)};
}

} // namespace

int main() {
  struct Criterion {
    const char *name;
    std::function<Outcome()> fn;
    double budget_s; // wall-clock limit; 0 = none
  };
  const Criterion criteria[] = {
      {"relaxed lookup equals direct lookup", relaxed_lookup, kRelaxedMaxSeconds},
      {"crash consistency at every persist point", crash_consistency, kCrashMaxSeconds},
      {"checkpoint overlap law", overlap_law, 0},
      {"training-time reductions", performance, 0},
      {"PMEM at least 100x faster than SSD", ssd_gap, kSsdMaxSeconds},
      {"read-after-write handling", raw_sensitivity, 0},
      {"staleness bound", staleness_bound, 0},
      {"energy ordering", energy_order, 0},
      {"gradient check", gradients, 0},
      {"byte-identical artifacts", reproducibility, 0},
  };
  int failed = 0;
  int n = 0;
  for (const auto &c : criteria) {
    ++n;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.fn();
    } catch (const std::exception &e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s)
      o.pass = false;
    failed += !o.pass;
    fmt::print("criterion {:2} {} {}: {} [{:.1f} s]\n", n, o.pass ? "PASS" : "FAIL",
               c.name, o.detail, secs);
    std::fflush(stdout);
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
