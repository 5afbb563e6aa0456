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
#pragma once

// Experiment orchestration: independent (model, policy) simulations on a
// worker pool, runtime invariant checks, and artifact emission.

#include "cxlsim/config.hpp"
#include "cxlsim/crash.hpp"
#include "cxlsim/report.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace cxlsim {

/// Calls fn(i) for every i in [0, n) on up to `threads` workers (0 picks
/// the hardware concurrency). Every call runs; the lowest-index exception
/// is rethrown afterwards.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)> &fn);

struct JobResult {
  std::string model;
  Policy policy{};
  SimResult sim;
  EnergyReport energy;
  CategorySeconds breakdown{};
  double training_time = 0.0;
};

/// Throws InvariantViolation naming the first failed check among
/// `event-order`, `resource-overlap`, `resource-conservation`,
/// `breakdown-conservation` and `staleness-bound`.
void check_invariants(const SimResult &r, std::uint64_t staleness_bound);

/// Relative tolerance between the final tables and MLPs of CXL and of the
/// exact policies; the relaxed lookup only reorders float additions.
inline constexpr double kRelaxedTolerance = 1e-4;

/// Final models of one model config must agree across policies: exactly
/// between exact policies, within kRelaxedTolerance for CXL. Throws
/// InvariantViolation `functional-equivalence`.
void check_equivalence(const std::vector<JobResult> &jobs);

struct RunOutput {
  std::vector<JobResult> jobs; // model-major, then the order of RunSpec::policies
  std::vector<std::pair<std::string, CrashReport>> crashes; // (model, report)
  std::size_t crash_failures() const;
};

/// Simulates every (model, policy) pair and, when requested, crash-tests
/// the undo policies. Invariant failures raise InvariantViolation.
RunOutput execute(const RunSpec &spec);

/// Machine-readable totals per (model, policy) plus crash results.
nlohmann::ordered_json summary(const nlohmann::json &doc, const RunSpec &spec,
                               const RunOutput &out);

/// Writes timeline_<model>_<policy>.csv, breakdown.csv, energy.csv,
/// summary.json and, after crash testing, crash_<model>.csv. Every file
/// starts with the provenance line (a `provenance` key in JSON).
void write_artifacts(const std::filesystem::path &dir,
                     const nlohmann::json &doc, const RunSpec &spec,
                     const RunOutput &out);

/// Lowercase alphanumerics, '-' and '_' only.
std::string file_stem(std::string_view name);

struct GridAxis {
  std::string path; // dotted config key
  std::vector<std::string> values;
};

/// `key=v1,v2,...`
GridAxis parse_grid(std::string_view text);

struct SweepRow {
  std::vector<std::string> values; // one per axis
  std::string model;
  Policy policy{};
  double total_time = 0.0;
  double training_time = 0.0;
  double checkpoint = 0.0;
  double energy_j = 0.0;
  std::uint64_t raw_penalized_reads = 0;
  std::uint64_t staleness = 0;
};

/// Runs the cartesian product of the axes over `doc`; no axes is a single
/// run. Crash testing is not part of sweeps. Rows follow grid order with
/// the last axis varying fastest.
std::vector<SweepRow> sweep(const nlohmann::json &doc,
                            const std::vector<GridAxis> &axes,
                            unsigned threads);

/// Header: axis paths, then
/// `model,policy,total_s,training_s,checkpoint_s,energy_j,raw_penalized_reads,staleness`.
void write_sweep_csv(std::ostream &os, std::string_view provenance,
                     const std::vector<GridAxis> &axes,
                     const std::vector<SweepRow> &rows);

} // namespace cxlsim
