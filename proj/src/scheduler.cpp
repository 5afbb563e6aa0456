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
#include "cxlsim/scheduler.hpp"
#include "cxlsim/errors.hpp"

#include <algorithm>
#include <tuple>

namespace cxlsim {

double Scheduler::ready(const TaskSpec &t) const {
  double s = t.not_before;
  for (TaskId d : t.deps)
    s = std::max(s, tasks_.at(d).end);
  for (std::size_t r = 0; r < kNumResources; ++r)
    if (t.resources.contains(static_cast<Resource>(r)))
      s = std::max(s, free_[r]);
  return s;
}

TaskId Scheduler::submit(const TaskSpec &t) {
  if (t.resources.empty())
    throw InvalidRequest("task without resources");
  if (!(t.duration >= 0.0))
    throw InvalidRequest("negative task duration");
  const double s = ready(t);
  const double e = s + t.duration;

  // Media energy rides on exactly one event of the task.
  const Resource carrier = t.resources.contains(Resource::MEM_media)
                               ? Resource::MEM_media
                               : Resource::Host;
  for (std::size_t r = 0; r < kNumResources; ++r) {
    const auto res = static_cast<Resource>(r);
    if (!t.resources.contains(res))
      continue;
    free_[r] = e;
    if (t.duration <= 0.0)
      continue;
    Event ev{res, t.category, s, e, t.bytes, t.batch};
    if (res == carrier) {
      ev.medium = t.medium;
      ev.charged_read = t.charged_read;
      ev.charged_write = t.charged_write;
      ev.requests = t.requests;
    }
    events_.push_back(ev);
  }
  makespan_ = std::max(makespan_, e);
  tasks_.push_back({s, e});
  return tasks_.size() - 1;
}

Timeline Scheduler::take(std::vector<BatchSpan> batches) {
  Timeline tl;
  tl.events = std::move(events_);
  std::stable_sort(tl.events.begin(), tl.events.end(),
                   [](const Event &a, const Event &b) {
                     return std::tie(a.start, a.resource, a.category, a.batch) <
                            std::tie(b.start, b.resource, b.category, b.batch);
                   });
  tl.batches = std::move(batches);
  tl.total_time = makespan_;
  for (const auto &b : tl.batches)
    tl.total_time = std::max(tl.total_time, b.end);
  events_.clear();
  tasks_.clear();
  free_.fill(0.0);
  makespan_ = 0.0;
  return tl;
}

} // namespace cxlsim
