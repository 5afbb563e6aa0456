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

#include <cstdint>
#include <string>
#include <unordered_map>

namespace cxlsim {

/// Timing and energy coefficients of one storage medium. Units are SI:
/// seconds, bytes/second, joules/byte, watts.
struct DeviceProfile {
  std::string name;
  double read_latency = 0.0;
  double write_latency = 0.0;
  double read_bandwidth = 0.0;
  double write_bandwidth = 0.0;
  std::uint64_t access_granularity = 64;
  double raw_penalty_factor = 1.0;
  double raw_window = 0.0;
  double energy_read = 0.0;
  double energy_write = 0.0;
  double energy_request = 0.0; // joules per request, any kind
  double energy_static = 0.0;

  void validate() const;
};

/// Absolute DRAM numbers the other media are scaled from.
struct DramBase {
  double read_latency = 80e-9;
  double write_latency = 80e-9;
  double bandwidth = 20e9;
};

namespace defaults {
inline constexpr double raw_penalty_factor = 2.0;
// Spans the embedding update of one batch so the next batch's lookup of
// freshly written rows is penalized; see README "Calibration".
inline constexpr double raw_window = 5e-3;
inline constexpr std::uint64_t ssd_page = 4096;
inline constexpr std::uint64_t cacheline = 64;
} // namespace defaults

DeviceProfile dram_profile(const DramBase &base = {});
/// 3x/7x latency and 0.6x/0.1x bandwidth relative to `base`.
DeviceProfile pmem_profile(const DramBase &base = {});
/// 165x latency, 0.02x bandwidth, page-granular.
DeviceProfile ssd_profile(const DramBase &base = {},
                          std::uint64_t page = defaults::ssd_page);

struct LinkProfile {
  std::string name;
  double per_transfer_latency = 0.0;
  double bandwidth = 0.0;
  std::uint64_t cacheline = defaults::cacheline;

  void validate() const;
};

LinkProfile cxl_link_profile();
/// DMA over PCIe: twice the CXL flush latency, same raw bandwidth. Software
/// synchronization is charged separately by the simulator.
LinkProfile pcie_link_profile();

enum class AccessKind : std::uint8_t { Read, Write };

struct AccessRequest {
  AccessKind kind = AccessKind::Read;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  double issue_time = 0.0;
};

/// Completion times of recent writes, tracked per 64 B line.
class WriteHistory {
public:
  void record(std::uint64_t offset, std::uint64_t length, double completed);
  /// True iff a line of [offset, offset+length) saw a write that completed
  /// no earlier than `since`.
  bool written_since(std::uint64_t offset, std::uint64_t length,
                     double since) const;
  void clear() { lines_.clear(); }
  std::size_t size() const { return lines_.size(); }

private:
  std::unordered_map<std::uint64_t, double> lines_;
};

bool raw_overlap(const WriteHistory &history, const AccessRequest &req,
                 double raw_window);

/// Bytes actually moved for a logical request after granularity rounding.
std::uint64_t charged_bytes(const DeviceProfile &profile, std::uint64_t length);

struct AccessTiming {
  double seconds = 0.0;
  bool raw_penalized = false;
};

AccessTiming access_timing(const DeviceProfile &profile,
                           const AccessRequest &req,
                           const WriteHistory &history);

inline double access_time(const DeviceProfile &profile,
                          const AccessRequest &req,
                          const WriteHistory &history) {
  return access_timing(profile, req, history).seconds;
}

double transfer_time(const LinkProfile &link, std::uint64_t bytes);

/// Dynamic energy of one request. Static power is charged by the report.
double access_energy(const DeviceProfile &profile, const AccessRequest &req);

} // namespace cxlsim
