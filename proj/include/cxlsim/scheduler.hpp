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

// Deterministic list scheduler. A task holds every resource it names for
// its whole duration and starts once its dependencies have finished and all
// of its resources are free. Tasks are placed in submission order, so a
// later task never starts earlier on a resource than an already placed one.

#include "cxlsim/timeline.hpp"

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace cxlsim {

class ResourceSet {
public:
  ResourceSet() = default;
  ResourceSet(std::initializer_list<Resource> rs) {
    for (Resource r : rs)
      add(r);
  }
  void add(Resource r) { bits_ |= std::uint8_t(1u << static_cast<unsigned>(r)); }
  bool contains(Resource r) const {
    return bits_ & (1u << static_cast<unsigned>(r));
  }
  bool empty() const { return bits_ == 0; }

private:
  std::uint8_t bits_ = 0;
};

using TaskId = std::size_t;

struct TaskSpec {
  ResourceSet resources;
  Category category = Category::Idle;
  double duration = 0.0;
  std::vector<TaskId> deps;
  double not_before = 0.0;
  std::uint64_t batch = 0;
  std::uint64_t bytes = 0;
  Medium medium = Medium::None;
  std::uint64_t charged_read = 0;
  std::uint64_t charged_write = 0;
  std::uint64_t requests = 0;
};

class Scheduler {
public:
  /// Start time the task would get if submitted now.
  double ready(const TaskSpec &t) const;
  TaskId submit(const TaskSpec &t);

  double start(TaskId id) const { return tasks_.at(id).start; }
  double end(TaskId id) const { return tasks_.at(id).end; }
  double free_at(Resource r) const {
    return free_[static_cast<std::size_t>(r)];
  }
  /// Latest end over every placed task.
  double makespan() const { return makespan_; }

  /// Events sorted by (start, resource, category, batch).
  Timeline take(std::vector<BatchSpan> batches);

private:
  struct Placed {
    double start;
    double end;
  };
  std::vector<Placed> tasks_;
  std::vector<Event> events_;
  std::array<double, kNumResources> free_{};
  double makespan_ = 0.0;
};

} // namespace cxlsim
