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

#include "cxlsim/devmodel.hpp"
#include "cxlsim/engine.hpp"
#include "cxlsim/store.hpp"
#include "cxlsim/timeline.hpp"
#include "cxlsim/workload.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace cxlsim {

/// Training-system configurations. DRAM is the checkpoint-free ideal used
/// as an energy reference: host-driven like PMEM, with tables in DRAM.
enum class Policy : std::uint8_t { SSD, PMEM, PCIE, CXL_D, CXL_B, CXL, DRAM };

std::string_view to_string(Policy p);
Policy parse_policy(std::string_view s);
std::vector<Policy> all_policies();
/// Policies that drive the undo-log protocol of the persistent store.
inline bool is_undo(Policy p) { return p == Policy::CXL_B || p == Policy::CXL; }

struct GpuModel {
  double sec_per_mac = 0.0;
  double kernel_overhead = 0.0; // per kernel launch
};

/// GPU time of one batch split at the points the memory side cares about.
struct GpuStages {
  double bottom_fwd = 0.0;
  double top = 0.0; // interaction plus top-MLP, forward and backward
  double bottom_bwd = 0.0; // bottom-MLP backward plus the SGD step
};

GpuStages gpu_stages(const ModelConfig &cfg, const GpuModel &gpu);

/// Every timing and energy constant of the simulated machine.
struct Platform {
  DeviceProfile dram;
  DeviceProfile pmem;
  DeviceProfile ssd;
  LinkProfile cxl_link;
  LinkProfile pcie_link;
  GpuModel gpu;
  double sync_overhead = 20e-6; // per synchronize and per copy call
  double host_sec_per_op = 0.0; // one element add on the host CPU
  double mem_sec_per_op = 0.0;  // one element add in the expander's logic
  unsigned host_parallelism = 1;   // outstanding host loads to DRAM/PMEM
  unsigned ssd_parallelism = 1;    // outstanding SSD requests
  unsigned device_parallelism = 1; // outstanding requests inside the expander
  double device_bandwidth_scale = 1.0; // PMEM modules behind the expander
  std::uint64_t mlp_chunk_bytes = 256;
  double dram_static_multiplier = 4.0;

  void validate() const;
};

Platform default_platform();

struct StageOverrides {
  std::optional<double> bottom_fwd;
  std::optional<double> top;
  std::optional<double> bottom_bwd;
};

struct SimOptions {
  std::uint64_t n_batches = 10;
  std::uint64_t seed = 42;
  WorkloadParams workload;
  std::uint64_t staleness_bound = 100;
  /// Run the numerical training and the store protocol alongside timing.
  bool functional = true;
  /// Turns off every checkpoint task and the store protocol.
  bool checkpointing = true;
  /// Keep every persist event so crash points can be replayed.
  bool journal = false;
  /// Replayed instead of generated when non-empty; index = batch number.
  std::vector<SparseBatch> batches;
  StageOverrides gpu;
  /// Resume support: start at this batch from this state.
  std::uint64_t first_batch = 0;
  std::optional<Model<float>> initial_model;
};

struct SimStats {
  std::uint64_t raw_penalized_reads = 0;
  /// Penalized reads of rows the immediately preceding batch updated.
  std::uint64_t raw_shared_reads = 0;
  std::uint64_t mlp_logs_completed = 0;
  std::uint64_t forced_mlp_completions = 0;
  std::vector<double> losses;
};

/// Undo-log placement of one batch, for the overlap law.
struct LogWindow {
  std::uint64_t batch = 0;
  double log_start = 0.0;
  double log_end = 0.0;
  double window_end = 0.0; // end of the GPU interaction/top-MLP stage
  std::size_t span = 0;    // position in Timeline::batches
};

struct SimResult {
  Policy policy{};
  Timeline timeline;
  /// Final trained state; empty in timing-only runs.
  std::optional<Model<float>> model;
  /// The emulated expander; engaged for undo policies in functional runs.
  std::optional<PersistentStore> store;
  SimStats stats;
  std::vector<LogWindow> log_windows;
  /// Wall time of one MLP chunk under CXL, the scheduling quantum.
  double chunk_time = 0.0;
};

SimResult simulate(Policy policy, const ModelConfig &cfg,
                   const Platform &platform, const SimOptions &opts);

/// Training time without the Checkpoint category.
double training_time(const Timeline &tl);

} // namespace cxlsim
