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

#include "cxlsim/sim.hpp"
#include "cxlsim/timeline.hpp"

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace cxlsim {

std::string_view to_string(Medium m);

/// Medium holding the embedding tables under a policy.
Medium resident_medium(Policy p);

struct DeviceEnergy {
  Medium device = Medium::None;
  double dynamic_j = 0.0;
  double static_j = 0.0;
  double total_j() const { return dynamic_j + static_j; }
};

struct EnergyReport {
  std::string policy;
  std::string model;
  std::vector<DeviceEnergy> devices; // ordered by Medium
  double total_j() const;
  double dynamic_j() const;
  double static_j() const;
};

/// Dynamic energy from the charged bytes on media events; static energy is
/// each present device's static power over the whole run. The resident
/// medium is always present. DRAM as the table store pays the module-count
/// multiplier on its static power.
EnergyReport energy(const Timeline &tl, const Platform &pf, Medium resident);

struct NormalizedEnergy {
  std::string policy;
  std::string model;
  double total_j = 0.0;
  double normalized = 0.0;
};

/// Totals divided by the baseline policy's total for the same model.
std::vector<NormalizedEnergy> compare(const std::vector<EnergyReport> &reports,
                                      std::string_view baseline);

/// Rows per device plus a `total` row, normalized against the baseline
/// report of the same model (1 when none is given).
void write_energy_csv(std::ostream &os, const std::vector<EnergyReport> &reports,
                      std::string_view baseline);

struct BreakdownRow {
  std::string policy;
  std::string model;
  CategorySeconds seconds{};
};

void write_breakdown_csv(std::ostream &os, const std::vector<BreakdownRow> &rows);

} // namespace cxlsim
