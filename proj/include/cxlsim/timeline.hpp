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

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cxlsim {

// Enumerator order is the id order used for tie-breaking and CSV output.
enum class Resource : std::uint8_t {
  GPU,
  MEM_compute,
  MEM_checkpoint,
  MEM_media,
  Host,
  Link,
};
inline constexpr std::size_t kNumResources = 6;

enum class Category : std::uint8_t {
  B_MLP,
  T_MLP,
  Embedding,
  Transfer,
  Checkpoint,
  Idle,
};
inline constexpr std::size_t kNumCategories = 6;

std::string_view to_string(Resource r);
std::string_view to_string(Category c);
Resource parse_resource(std::string_view s);
Category parse_category(std::string_view s);

/// Storage medium a media event touched; selects the energy coefficients.
enum class Medium : std::uint8_t { None, DRAM, PMEM, SSD };

struct Event {
  Resource resource{};
  Category category{};
  double start = 0.0;
  double end = 0.0;
  std::uint64_t bytes = 0;
  std::uint64_t batch = 0;
  // Granularity-rounded bytes read/written on `medium`. Set only on the
  // MEM_media (or Host-side media) event of a task so energy counts once.
  Medium medium = Medium::None;
  std::uint64_t charged_read = 0;
  std::uint64_t charged_write = 0;
  std::uint64_t requests = 0;
};

struct BatchSpan {
  std::uint64_t batch = 0;
  double start = 0.0;
  double end = 0.0;
  /// Batch of the newest complete MLP log when this batch ended; 0 means
  /// the initial state is the recovery point.
  std::uint64_t mlp_batch = 0;
};

struct Timeline {
  std::vector<Event> events; // ordered by (start, resource, category, batch)
  std::vector<BatchSpan> batches;
  double total_time = 0.0;
};

using CategorySeconds = std::array<double, kNumCategories>;

/// Critical-path attribution over [t0, t1]. Each instant goes to the
/// highest-priority active category (T_MLP, B_MLP, Transfer, Embedding,
/// Checkpoint) and to Idle when nothing runs. Sums to t1 - t0.
CategorySeconds breakdown(const Timeline &tl, double t0, double t1);
CategorySeconds breakdown(const Timeline &tl);
/// Per-batch attribution over each batch's span.
CategorySeconds batch_breakdown(const Timeline &tl, std::size_t batch_pos);

struct Interval {
  double start = 0.0;
  double end = 0.0;
  bool operator==(const Interval &) const = default;
};

/// Merged busy intervals of one resource.
std::vector<Interval> utilization(const Timeline &tl, Resource r);
/// Busy seconds per category on one resource plus Idle; sums to total.
CategorySeconds resource_breakdown(const Timeline &tl, Resource r);

/// max over batches of (batch - newest complete MLP log batch).
std::uint64_t staleness(const Timeline &tl);

/// Header `resource,category,start_ns,end_ns,bytes,batch`.
void write_timeline_csv(std::ostream &os, const Timeline &tl);

} // namespace cxlsim
