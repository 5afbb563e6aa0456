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
#include "cxlsim/report.hpp"
#include "cxlsim/errors.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <array>
#include <map>
#include <ostream>

namespace cxlsim {

namespace {

const DeviceProfile &profile_of(const Platform &pf, Medium m) {
  switch (m) {
  case Medium::DRAM:
    return pf.dram;
  case Medium::PMEM:
    return pf.pmem;
  case Medium::SSD:
    return pf.ssd;
  case Medium::None:
    break;
  }
  throw ConfigError("no device profile for an untagged media event");
}

} // namespace

std::string_view to_string(Medium m) {
  constexpr std::array<std::string_view, 4> names{"none", "DRAM", "PMEM", "SSD"};
  return names.at(static_cast<std::size_t>(m));
}

Medium resident_medium(Policy p) {
  switch (p) {
  case Policy::SSD:
    return Medium::SSD;
  case Policy::DRAM:
    return Medium::DRAM;
  default:
    return Medium::PMEM;
  }
}

double EnergyReport::total_j() const { return dynamic_j() + static_j(); }

double EnergyReport::dynamic_j() const {
  double s = 0.0;
  for (const auto &d : devices)
    s += d.dynamic_j;
  return s;
}

double EnergyReport::static_j() const {
  double s = 0.0;
  for (const auto &d : devices)
    s += d.static_j;
  return s;
}

EnergyReport energy(const Timeline &tl, const Platform &pf, Medium resident) {
  std::array<bool, 4> present{};
  std::array<double, 4> dynamic{};
  present[static_cast<std::size_t>(resident)] = true;
  for (const auto &e : tl.events) {
    if (e.charged_read == 0 && e.charged_write == 0 && e.requests == 0)
      continue;
    const auto &prof = profile_of(pf, e.medium);
    const auto i = static_cast<std::size_t>(e.medium);
    present[i] = true;
    dynamic[i] += prof.energy_read * static_cast<double>(e.charged_read) +
                  prof.energy_write * static_cast<double>(e.charged_write) +
                  prof.energy_request * static_cast<double>(e.requests);
  }
  EnergyReport r;
  for (std::size_t i = 1; i < present.size(); ++i) {
    if (!present[i])
      continue;
    const auto m = static_cast<Medium>(i);
    double watts = profile_of(pf, m).energy_static;
    if (m == Medium::DRAM && resident == Medium::DRAM)
      watts *= pf.dram_static_multiplier;
    r.devices.push_back({m, dynamic[i], watts * tl.total_time});
  }
  return r;
}

std::vector<NormalizedEnergy> compare(const std::vector<EnergyReport> &reports,
                                      std::string_view baseline) {
  std::map<std::string, double> base;
  for (const auto &r : reports)
    if (r.policy == baseline)
      base[r.model] = r.total_j();
  std::vector<NormalizedEnergy> out;
  for (const auto &r : reports) {
    const auto it = base.find(r.model);
    if (it == base.end())
      throw ConfigError(fmt::format("no {} baseline for model {}", baseline,
                                    r.model));
    if (!(it->second > 0.0))
      throw ConfigError(fmt::format("baseline energy of {} is zero", r.model));
    out.push_back({r.policy, r.model, r.total_j(), r.total_j() / it->second});
  }
  return out;
}

void write_energy_csv(std::ostream &os, const std::vector<EnergyReport> &reports,
                      std::string_view baseline) {
  std::map<std::string, double> base;
  for (const auto &r : reports)
    if (r.policy == baseline && r.total_j() > 0.0)
      base[r.model] = r.total_j();
  os << "policy,model,device,dynamic_j,static_j,total_j,normalized\n";
  for (const auto &r : reports) {
    const auto it = base.find(r.model);
    const double denom = it == base.end() ? 0.0 : it->second;
    auto norm = [&](double v) { return denom > 0.0 ? v / denom : 1.0; };
    for (const auto &d : r.devices)
      fmt::print(os, "{},{},{},{:.9e},{:.9e},{:.9e},{:.6f}\n", r.policy,
                 r.model, to_string(d.device), d.dynamic_j, d.static_j,
                 d.total_j(), norm(d.total_j()));
    fmt::print(os, "{},{},total,{:.9e},{:.9e},{:.9e},{:.6f}\n", r.policy,
               r.model, r.dynamic_j(), r.static_j(), r.total_j(),
               norm(r.total_j()));
  }
}

void write_breakdown_csv(std::ostream &os, const std::vector<BreakdownRow> &rows) {
  os << "policy,model,category,seconds\n";
  for (const auto &r : rows)
    for (std::size_t c = 0; c < kNumCategories; ++c)
      fmt::print(os, "{},{},{},{:.9e}\n", r.policy, r.model,
                 to_string(static_cast<Category>(c)), r.seconds[c]);
}

} // namespace cxlsim
