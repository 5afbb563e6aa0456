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

// Crash-point enumeration: every selected persist boundary of a journaled
// run is crashed, recovered, checked against the crash-free boundaries and
// resumed to the end of the run.

#include "cxlsim/sim.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cxlsim {

enum class CrashMode : std::uint8_t { None, Exhaustive, Sampled };

struct CrashSelection {
  CrashMode mode = CrashMode::Exhaustive;
  /// Exhaustive: refuse runs with more events than this (0 = no limit).
  /// Sampled: number of crash points, spread evenly over the run.
  std::uint64_t limit = 0;
};

struct CrashOutcome {
  std::uint64_t event_index = 0; // events [0, index) survived
  std::uint64_t resume_batch = 0;
  bool initial = false;
  bool ok = false;
  std::string detail; // empty when ok
};

struct CrashReport {
  Policy policy{};
  std::uint64_t total_events = 0;
  std::vector<CrashOutcome> outcomes;
  std::size_t failures() const;
};

/// Relative tolerance of resumed-versus-reference parameters. Resuming
/// restarts the relaxed lookup with a plain reduction, which rounds
/// differently; every other policy must match exactly.
inline constexpr double kResumeTolerance = 1e-6;

/// Runs `opts` with journaling and checks the selected crash points.
/// Requires an undo policy. `threads` = 0 picks the hardware concurrency.
CrashReport crash_test(Policy policy, const ModelConfig &cfg,
                       const Platform &platform, const SimOptions &opts,
                       const CrashSelection &sel, unsigned threads = 0);

/// Header `policy,event_index,resume_batch,initial,status,detail`.
void write_crash_csv(std::ostream &os, const std::vector<CrashReport> &reports);

} // namespace cxlsim
