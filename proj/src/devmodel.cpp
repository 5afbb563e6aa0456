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
#include "cxlsim/devmodel.hpp"

#include "cxlsim/errors.hpp"

namespace cxlsim {

namespace {

constexpr double pJ = 1e-12;

std::uint64_t round_up(std::uint64_t n, std::uint64_t unit) {
  return (n + unit - 1) / unit * unit;
}

} // namespace

void DeviceProfile::validate() const {
  if (!(read_latency > 0 && write_latency > 0))
    throw ConfigError(name + ": latencies must be positive");
  if (!(read_bandwidth > 0 && write_bandwidth > 0))
    throw ConfigError(name + ": bandwidths must be positive");
  if (access_granularity == 0)
    throw ConfigError(name + ": access granularity must be positive");
  if (!(raw_penalty_factor >= 1.0))
    throw ConfigError(name + ": raw_penalty_factor must be >= 1");
  if (raw_window < 0)
    throw ConfigError(name + ": raw_window must be non-negative");
  if (energy_read < 0 || energy_write < 0 || energy_static < 0 ||
      energy_request < 0)
    throw ConfigError(name + ": energy coefficients must be non-negative");
}

DeviceProfile dram_profile(const DramBase &base) {
  DeviceProfile p;
  p.name = "DRAM";
  p.read_latency = base.read_latency;
  p.write_latency = base.write_latency;
  p.read_bandwidth = base.bandwidth;
  p.write_bandwidth = base.bandwidth;
  p.access_granularity = defaults::cacheline;
  p.raw_penalty_factor = 1.0;
  p.raw_window = 0.0;
  p.energy_read = 1.0 * pJ;
  p.energy_write = 1.0 * pJ;
  // Row activation across the extra ranks dominates random accesses.
  p.energy_request = 2.5e-9;
  // Refresh and background power, scaled to desk-size tables.
  p.energy_static = 2e-3;
  return p;
}

DeviceProfile pmem_profile(const DramBase &base) {
  DeviceProfile p;
  p.name = "PMEM";
  p.read_latency = 3.0 * base.read_latency;
  p.write_latency = 7.0 * base.write_latency;
  p.read_bandwidth = 0.6 * base.bandwidth;
  p.write_bandwidth = 0.1 * base.bandwidth;
  p.access_granularity = defaults::cacheline;
  p.raw_penalty_factor = defaults::raw_penalty_factor;
  p.raw_window = defaults::raw_window;
  p.energy_read = 0.5 * pJ;
  p.energy_write = 2.0 * pJ;
  p.energy_request = 0.3e-9;
  // No refresh.
  p.energy_static = 1e-3;
  return p;
}

DeviceProfile ssd_profile(const DramBase &base, std::uint64_t page) {
  DeviceProfile p;
  p.name = "SSD";
  p.read_latency = 165.0 * base.read_latency;
  p.write_latency = 165.0 * base.read_latency;
  p.read_bandwidth = 0.02 * base.bandwidth;
  p.write_bandwidth = 0.02 * base.bandwidth;
  p.access_granularity = page;
  p.raw_penalty_factor = 1.0;
  p.raw_window = 0.0;
  p.energy_read = 0.1 * pJ;
  p.energy_write = 0.2 * pJ;
  p.energy_request = 50e-9;
  p.energy_static = 5e-3;
  return p;
}

void LinkProfile::validate() const {
  if (!(bandwidth > 0))
    throw ConfigError(name + ": link bandwidth must be positive");
  if (per_transfer_latency < 0)
    throw ConfigError(name + ": link latency must be non-negative");
  if (cacheline != defaults::cacheline)
    throw ConfigError(name + ": link cacheline must be 64 bytes");
}

LinkProfile cxl_link_profile() {
  return LinkProfile{"CXL", 500e-9, 16e9, defaults::cacheline};
}

LinkProfile pcie_link_profile() {
  return LinkProfile{"PCIe", 1000e-9, 16e9, defaults::cacheline};
}

void WriteHistory::record(std::uint64_t offset, std::uint64_t length,
                          double completed) {
  if (length == 0)
    return;
  const std::uint64_t first = offset / defaults::cacheline;
  const std::uint64_t last = (offset + length - 1) / defaults::cacheline;
  for (std::uint64_t line = first; line <= last; ++line)
    lines_[line] = completed;
}

bool WriteHistory::written_since(std::uint64_t offset, std::uint64_t length,
                                 double since) const {
  if (length == 0 || lines_.empty())
    return false;
  const std::uint64_t first = offset / defaults::cacheline;
  const std::uint64_t last = (offset + length - 1) / defaults::cacheline;
  for (std::uint64_t line = first; line <= last; ++line) {
    auto it = lines_.find(line);
    if (it != lines_.end() && it->second >= since)
      return true;
  }
  return false;
}

bool raw_overlap(const WriteHistory &history, const AccessRequest &req,
                 double raw_window) {
  if (req.kind != AccessKind::Read)
    return false;
  return history.written_since(req.offset, req.length,
                               req.issue_time - raw_window);
}

std::uint64_t charged_bytes(const DeviceProfile &profile,
                            std::uint64_t length) {
  return round_up(length, profile.access_granularity);
}

AccessTiming access_timing(const DeviceProfile &profile,
                           const AccessRequest &req,
                           const WriteHistory &history) {
  if (req.length == 0)
    throw InvalidRequest("access length must be positive");
  const bool read = req.kind == AccessKind::Read;
  const double bytes =
      static_cast<double>(charged_bytes(profile, req.length));
  double latency = read ? profile.read_latency : profile.write_latency;
  const double bandwidth =
      read ? profile.read_bandwidth : profile.write_bandwidth;

  AccessTiming t;
  if (read && profile.raw_penalty_factor > 1.0 &&
      raw_overlap(history, req, profile.raw_window)) {
    latency *= profile.raw_penalty_factor;
    t.raw_penalized = true;
  }
  t.seconds = latency + bytes / bandwidth;
  return t;
}

double transfer_time(const LinkProfile &link, std::uint64_t bytes) {
  if (bytes == 0)
    throw InvalidRequest("transfer of zero bytes");
  const double lines =
      static_cast<double>(round_up(bytes, link.cacheline));
  return link.per_transfer_latency + lines / link.bandwidth;
}

double access_energy(const DeviceProfile &profile, const AccessRequest &req) {
  if (req.length == 0)
    throw InvalidRequest("access length must be positive");
  const double bytes =
      static_cast<double>(charged_bytes(profile, req.length));
  return profile.energy_request +
         bytes * (req.kind == AccessKind::Read ? profile.energy_read
                                               : profile.energy_write);
}

} // namespace cxlsim
