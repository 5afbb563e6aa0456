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
#include "cxlsim/errors.hpp"
#include "cxlsim/report.hpp"
#include "cxlsim/runner.hpp"
#include "cxlsim/sim.hpp"

#include "scenarios.hpp"

#include <doctest.h>

#include <map>

using namespace cxlsim;
namespace ct = cxlsim::testing;

namespace {

constexpr std::size_t kCkpt = static_cast<std::size_t>(Category::Checkpoint);

SimOptions timing(std::uint64_t n) {
  SimOptions o;
  o.n_batches = n;
  o.functional = false;
  return o;
}

} // namespace

TEST_SUITE("sim") {

TEST_CASE("policy names") {
  CHECK(all_policies().size() == 7);
  for (Policy p : all_policies())
    CHECK(parse_policy(to_string(p)) == p);
  CHECK(parse_policy("CXL-D") == Policy::CXL_D);
  CHECK(parse_policy("PCIe") == Policy::PCIE);
  CHECK_THROWS_AS(parse_policy("NVME"), ConfigError);
  CHECK(is_undo(Policy::CXL));
  CHECK(is_undo(Policy::CXL_B));
  CHECK_FALSE(is_undo(Policy::CXL_D));
}

TEST_CASE("option validation") {
  const auto cfg = builtin_config("TOY");
  SimOptions o;
  o.staleness_bound = 0;
  CHECK_THROWS_AS(simulate(Policy::CXL, cfg, default_platform(), o), ConfigError);
  SimOptions t = timing(2);
  t.initial_model = init_model<float>(cfg, 1);
  CHECK_THROWS_AS(simulate(Policy::CXL, cfg, default_platform(), t), ConfigError);
  Platform bad = default_platform();
  bad.device_parallelism = 0;
  CHECK_THROWS_AS(simulate(Policy::CXL, cfg, bad, SimOptions{}), ConfigError);
}

TEST_CASE("no checkpoint work makes CXL_D and CXL_B equal") {
  const auto cfg = builtin_config("TOY");
  const auto pf = ct::toy_platform(cfg);
  auto o = ct::toy_options(cfg, 4);
  o.checkpointing = false;
  const auto d = simulate(Policy::CXL_D, cfg, pf, o);
  const auto b = simulate(Policy::CXL_B, cfg, pf, o);
  CHECK(d.timeline.total_time == b.timeline.total_time);
  CHECK(breakdown(d.timeline)[kCkpt] == 0.0);
}

TEST_CASE("toy scenario: CXL_D leaves the expander idle over the GPU window") {
  const auto cfg = builtin_config("TOY");
  const auto pf = ct::toy_platform(cfg);
  const auto o = ct::toy_options(cfg, 4);
  const auto d = simulate(Policy::CXL_D, cfg, pf, o);
  const auto b = simulate(Policy::CXL_B, cfg, pf, o);
  for (std::size_t i = 0; i < d.timeline.batches.size(); ++i) {
    const auto &s = d.timeline.batches[i];
    CHECK((s.end - s.start) == doctest::Approx(6.7e-3).epsilon(0.1e-3 / 6.7e-3));
    const double t0 = s.start + ct::kToyBottomFwd;
    const double t1 = t0 + ct::kToyTop;
    for (Resource r : {Resource::MEM_compute, Resource::MEM_media, Resource::MEM_checkpoint})
      CHECK(ct::idle_within(d.timeline, r, t0, t1) == doctest::Approx(t1 - t0));
    const auto &sb = b.timeline.batches[i];
    CHECK((s.end - s.start) - (sb.end - sb.start) ==
          doctest::Approx(1.6e-3).epsilon(0.1e-3 / 1.6e-3));
  }
}

TEST_CASE("toy scenario: CXL_B residual and CXL elimination") {
  const auto cfg = builtin_config("TOY");
  const auto pf = ct::toy_platform(cfg);
  const auto o = ct::toy_options(cfg, 4);
  const auto b = simulate(Policy::CXL_B, cfg, pf, o);
  const auto c = simulate(Policy::CXL, cfg, pf, o);
  for (std::size_t i = 0; i < b.timeline.batches.size(); ++i)
    CHECK(batch_breakdown(b.timeline, i)[kCkpt] == doctest::Approx(0.3e-3).epsilon(1e-6));
  // Batch 0 has no previous batch to hide behind; steady state from 1 on.
  for (std::size_t i = 1; i < c.timeline.batches.size(); ++i) {
    CHECK(batch_breakdown(c.timeline, i)[kCkpt] == 0.0);
    CHECK(ct::embedding_before_top(c.timeline, i) <
          ct::embedding_before_top(b.timeline, i));
  }
}

TEST_CASE("property: overlap law across log sizes") {
  const auto cfg = builtin_config("TOY");
  for (double scale : {0.25, 0.5, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0}) {
    const auto r = simulate(Policy::CXL_B, cfg, ct::toy_platform(cfg, scale),
                            ct::toy_options(cfg, 3));
    REQUIRE(r.log_windows.size() == 3);
    for (const auto &w : r.log_windows) {
      const double predicted =
          std::max(0.0, (w.log_end - w.log_start) - (w.window_end - w.log_start));
      const double measured = batch_breakdown(r.timeline, w.span)[kCkpt];
      CHECK(std::abs(measured - predicted) <= r.chunk_time);
    }
  }
}

TEST_CASE("functional results agree across policies") {
  const auto cfg = builtin_config("TOY");
  SimOptions o;
  o.n_batches = 6;
  std::map<Policy, SimResult> runs;
  for (Policy p : all_policies())
    runs.emplace(p, simulate(p, cfg, default_platform(), o));
  const auto &ref = *runs.at(Policy::PMEM).model;
  for (const auto &[p, r] : runs) {
    REQUIRE(r.model);
    if (p == Policy::CXL) {
      CHECK(max_relative_diff(*r.model, ref) <= kRelaxedTolerance);
    } else {
      CHECK(*r.model == ref);
    }
  }
  // Undo policies leave the store in agreement with the engine.
  for (Policy p : {Policy::CXL_B, Policy::CXL}) {
    const auto &r = runs.at(p);
    REQUIRE(r.store);
    CHECK(r.store->persisted().tables == r.model->tables);
  }
}

TEST_CASE("final flush commits the trained MLP") {
  const auto cfg = builtin_config("TOY");
  auto o = ct::short_window_options(8, 100);
  const auto r = simulate(Policy::CXL, cfg, default_platform(), o);
  REQUIRE(r.store);
  const auto &img = r.store->persisted();
  CHECK_FALSE(img.mlp_log);
  REQUIRE(img.prev_checkpoint);
  CHECK(img.prev_checkpoint->batch == 8);
  const auto [bottom, top] = deserialize_mlp(cfg, img.prev_checkpoint->bytes);
  CHECK(bottom == r.model->bottom);
  CHECK(top == r.model->top);
}

TEST_CASE("simulation is deterministic") {
  const auto cfg = builtin_config("TOY");
  for (Policy p : all_policies()) {
    const auto a = simulate(p, cfg, default_platform(), SimOptions{});
    const auto b = simulate(p, cfg, default_platform(), SimOptions{});
    REQUIRE(a.timeline.events.size() == b.timeline.events.size());
    bool same = a.timeline.total_time == b.timeline.total_time;
    for (std::size_t i = 0; i < a.timeline.events.size(); ++i) {
      const auto &x = a.timeline.events[i];
      const auto &y = b.timeline.events[i];
      same = same && x.start == y.start && x.end == y.end &&
             x.resource == y.resource && x.category == y.category;
    }
    CHECK(same);
    CHECK(*a.model == *b.model);
  }
}

TEST_CASE("staleness stays within the bound and grows with short windows") {
  const auto cfg = builtin_config("TOY");
  const auto normal = simulate(Policy::CXL_B, cfg, default_platform(), SimOptions{});
  CHECK(staleness(normal.timeline) == 0);
  for (std::uint64_t bound : {1, 3, 100}) {
    const auto r = simulate(Policy::CXL, cfg, default_platform(),
                            ct::short_window_options(12, bound));
    const auto gap = staleness(r.timeline);
    CHECK(gap <= bound);
    CHECK(gap > 0);
    CHECK_NOTHROW(check_invariants(r, bound));
    if (bound == 1)
      CHECK(r.stats.forced_mlp_completions > 0);
  }
}

TEST_CASE("RAW: CXL never penalizes shared rows, CXL_B does") {
  const auto cfg = builtin_config("RM1");
  const auto pf = default_platform();
  const auto c = simulate(Policy::CXL, cfg, pf, timing(6));
  const auto b = simulate(Policy::CXL_B, cfg, pf, timing(6));
  CHECK(c.stats.raw_shared_reads == 0);
  CHECK(b.stats.raw_shared_reads > 0);
}

TEST_CASE("ordering under calibrated defaults") {
  const auto pf = default_platform();
  for (const char *name : {"RM1", "RM2"}) {
    const auto cfg = builtin_config(name);
    std::map<Policy, double> t;
    for (Policy p : {Policy::SSD, Policy::PMEM, Policy::PCIE, Policy::CXL_D,
                     Policy::CXL_B, Policy::CXL})
      t[p] = simulate(p, cfg, pf, timing(8)).timeline.total_time;
    CHECK(t[Policy::CXL] <= t[Policy::CXL_B]);
    CHECK(t[Policy::CXL_B] <= t[Policy::CXL_D]);
    CHECK(t[Policy::CXL_D] <= t[Policy::PCIE]);
    CHECK(t[Policy::PCIE] <= t[Policy::PMEM]);
    CHECK(t[Policy::PMEM] * 10 < t[Policy::SSD]);
  }
}

TEST_CASE("DRAM reference performs no checkpointing") {
  const auto cfg = builtin_config("TOY");
  const auto r = simulate(Policy::DRAM, cfg, default_platform(), SimOptions{});
  for (const auto &e : r.timeline.events)
    CHECK(e.category != Category::Checkpoint);
  CHECK(training_time(r.timeline) == r.timeline.total_time);
}

TEST_CASE("training_time removes the Checkpoint category") {
  const auto cfg = builtin_config("TOY");
  const auto r = simulate(Policy::PMEM, cfg, default_platform(), SimOptions{});
  CHECK(training_time(r.timeline) ==
        doctest::Approx(r.timeline.total_time - breakdown(r.timeline)[kCkpt]));
  CHECK(breakdown(r.timeline)[kCkpt] > 0.0);
}

TEST_CASE("resume from a boundary reproduces the uninterrupted run") {
  const auto cfg = builtin_config("TOY");
  SimOptions full;
  full.n_batches = 5;
  const auto ref = simulate(Policy::CXL_B, cfg, default_platform(), full);
  SimOptions head = full;
  head.n_batches = 2;
  const auto mid = simulate(Policy::CXL_B, cfg, default_platform(), head);
  SimOptions tail = full;
  tail.first_batch = 2;
  tail.initial_model = *mid.model;
  const auto resumed = simulate(Policy::CXL_B, cfg, default_platform(), tail);
  CHECK(*resumed.model == *ref.model);
}

} // TEST_SUITE
