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
#include "cxlsim/timeline.hpp"
#include "cxlsim/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace cxlsim {

namespace {

constexpr std::array<std::string_view, kNumResources> kResourceNames{
    "GPU", "MEM_compute", "MEM_checkpoint", "MEM_media", "Host", "Link"};
constexpr std::array<std::string_view, kNumCategories> kCategoryNames{
    "B_MLP", "T_MLP", "Embedding", "Transfer", "Checkpoint", "Idle"};

// Highest first.
constexpr std::array<Category, 5> kPriority{
    Category::T_MLP, Category::B_MLP, Category::Transfer, Category::Embedding,
    Category::Checkpoint};

struct Edge {
  double t;
  int delta;
  Category c;
};

} // namespace

std::string_view to_string(Resource r) {
  return kResourceNames.at(static_cast<std::size_t>(r));
}

std::string_view to_string(Category c) {
  return kCategoryNames.at(static_cast<std::size_t>(c));
}

Resource parse_resource(std::string_view s) {
  for (std::size_t i = 0; i < kNumResources; ++i)
    if (kResourceNames[i] == s)
      return static_cast<Resource>(i);
  throw ConfigError(fmt::format("unknown resource '{}'", s));
}

Category parse_category(std::string_view s) {
  for (std::size_t i = 0; i < kNumCategories; ++i)
    if (kCategoryNames[i] == s)
      return static_cast<Category>(i);
  throw ConfigError(fmt::format("unknown category '{}'", s));
}

CategorySeconds breakdown(const Timeline &tl, double t0, double t1) {
  CategorySeconds out{};
  if (!(t1 > t0))
    return out;
  std::vector<Edge> edges;
  edges.reserve(tl.events.size() * 2);
  for (const auto &e : tl.events) {
    const double s = std::max(e.start, t0);
    const double f = std::min(e.end, t1);
    if (f > s) {
      edges.push_back({s, +1, e.category});
      edges.push_back({f, -1, e.category});
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const Edge &a, const Edge &b) { return a.t < b.t; });

  std::array<int, kNumCategories> active{};
  double cursor = t0;
  auto attribute = [&](double until) {
    if (until <= cursor)
      return;
    Category owner = Category::Idle;
    for (Category c : kPriority)
      if (active[static_cast<std::size_t>(c)] > 0) {
        owner = c;
        break;
      }
    out[static_cast<std::size_t>(owner)] += until - cursor;
    cursor = until;
  };
  for (const auto &e : edges) {
    attribute(e.t);
    active[static_cast<std::size_t>(e.c)] += e.delta;
  }
  attribute(t1);
  return out;
}

CategorySeconds breakdown(const Timeline &tl) {
  return breakdown(tl, 0.0, tl.total_time);
}

CategorySeconds batch_breakdown(const Timeline &tl, std::size_t pos) {
  const auto &b = tl.batches.at(pos);
  return breakdown(tl, b.start, b.end);
}

std::vector<Interval> utilization(const Timeline &tl, Resource r) {
  std::vector<Interval> iv;
  for (const auto &e : tl.events)
    if (e.resource == r && e.end > e.start)
      iv.push_back({e.start, e.end});
  std::sort(iv.begin(), iv.end(), [](const Interval &a, const Interval &b) {
    return a.start < b.start;
  });
  std::vector<Interval> merged;
  for (const auto &i : iv) {
    if (!merged.empty() && i.start <= merged.back().end)
      merged.back().end = std::max(merged.back().end, i.end);
    else
      merged.push_back(i);
  }
  return merged;
}

CategorySeconds resource_breakdown(const Timeline &tl, Resource r) {
  CategorySeconds out{};
  double busy = 0.0;
  for (const auto &e : tl.events)
    if (e.resource == r) {
      out[static_cast<std::size_t>(e.category)] += e.end - e.start;
      busy += e.end - e.start;
    }
  out[static_cast<std::size_t>(Category::Idle)] = tl.total_time - busy;
  return out;
}

std::uint64_t staleness(const Timeline &tl) {
  std::uint64_t worst = 0;
  for (const auto &b : tl.batches)
    if (b.batch >= b.mlp_batch)
      worst = std::max(worst, b.batch - b.mlp_batch);
  return worst;
}

void write_timeline_csv(std::ostream &os, const Timeline &tl) {
  os << "resource,category,start_ns,end_ns,bytes,batch\n";
  for (const auto &e : tl.events)
    os << fmt::format("{},{},{:.3f},{:.3f},{},{}\n", to_string(e.resource),
                      to_string(e.category), e.start * 1e9, e.end * 1e9,
                      e.bytes, e.batch);
}

} // namespace cxlsim
