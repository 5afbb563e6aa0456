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
#include "cxlsim/crash.hpp"
#include "cxlsim/errors.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <thread>

namespace cxlsim {

namespace {

struct Boundary {
  std::vector<EmbeddingTable<float>> tables;
  Mlp<float> bottom;
  Mlp<float> top;
};

std::vector<std::uint64_t> select_points(std::uint64_t total,
                                         const CrashSelection &sel) {
  std::vector<std::uint64_t> pts;
  if (sel.mode == CrashMode::Sampled && sel.limit > 0 && sel.limit < total + 1) {
    for (std::uint64_t i = 0; i < sel.limit; ++i)
      pts.push_back(sel.limit == 1 ? total : i * total / (sel.limit - 1));
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
  }
  if (sel.mode == CrashMode::Exhaustive && sel.limit > 0 && total > sel.limit)
    throw ConfigError(fmt::format(
        "exhaustive crash test needs {} points, above the limit {}", total + 1,
        sel.limit));
  for (std::uint64_t i = 0; i <= total; ++i)
    pts.push_back(i);
  return pts;
}

} // namespace

std::size_t CrashReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(outcomes.begin(), outcomes.end(),
                    [](const CrashOutcome &o) { return !o.ok; }));
}

CrashReport crash_test(Policy policy, const ModelConfig &cfg,
                       const Platform &platform, const SimOptions &opts,
                       const CrashSelection &sel, unsigned threads) {
  if (!is_undo(policy))
    throw ConfigError(fmt::format(
        "crash testing needs an undo-logging policy (CXL_B or CXL), got {}",
        to_string(policy)));
  if (sel.mode == CrashMode::None)
    throw ConfigError("crash test requested with mode none");
  if (opts.first_batch != 0 || opts.initial_model)
    throw ConfigError("crash test starts from the initial state");

  SimOptions ref_opts = opts;
  ref_opts.functional = true;
  ref_opts.checkpointing = true;
  ref_opts.journal = true;
  const SimResult ref = simulate(policy, cfg, platform, ref_opts);
  const PersistentStore &store = *ref.store;

  // Crash-free boundary states; boundary b is the state before batch b.
  std::vector<Boundary> bounds;
  for (std::uint64_t b = 0; b <= opts.n_batches; ++b) {
    SimOptions o = ref_opts;
    o.journal = false;
    o.n_batches = b;
    const auto r = simulate(policy, cfg, platform, o);
    bounds.push_back({r.model->tables, r.model->bottom, r.model->top});
  }
  const Model<float> initial = init_model<float>(cfg, opts.seed);

  // First event after which a committed checkpoint must always exist.
  std::uint64_t first_commit = store.persist_events() + 1;
  for (std::uint64_t i = 0; i < store.journal().size(); ++i)
    if (store.journal()[i].kind == PersistKind::Commit) {
      first_commit = i + 1;
      break;
    }

  CrashReport rep;
  rep.policy = policy;
  rep.total_events = store.persist_events();
  const auto points = select_points(rep.total_events, sel);
  rep.outcomes.resize(points.size());

  auto check = [&](std::uint64_t idx) {
    CrashOutcome out;
    out.event_index = idx;
    try {
      const Recovered rec = recover(store.crash(idx), cfg);
      out.resume_batch = rec.resume_batch;
      out.initial = rec.initial;
      if (idx >= first_commit && rec.initial) {
        out.detail = "no complete checkpoint after the first commit";
        return out;
      }
      if (rec.resume_batch > opts.n_batches) {
        out.detail = "resume batch beyond the run";
        return out;
      }
      const Boundary &bd = bounds[rec.resume_batch];
      if (!(rec.tables == bd.tables)) {
        out.detail = fmt::format("tables differ from boundary {}",
                                 rec.resume_batch);
        return out;
      }
      Model<float> start;
      start.tables = rec.tables;
      if (rec.mlp) {
        start.bottom = rec.mlp->first;
        start.top = rec.mlp->second;
      } else {
        start.bottom = initial.bottom;
        start.top = initial.top;
      }
      if (!(start.bottom == bd.bottom && start.top == bd.top)) {
        out.detail = fmt::format("MLP differs from boundary {}",
                                 rec.resume_batch);
        return out;
      }
      SimOptions o = opts;
      o.functional = true;
      o.checkpointing = true;
      o.journal = false;
      o.first_batch = rec.resume_batch;
      o.initial_model = std::move(start);
      const auto resumed = simulate(policy, cfg, platform, o);
      const double d = max_relative_diff(*resumed.model, *ref.model);
      const double tol = policy == Policy::CXL ? kResumeTolerance : 0.0;
      if (!(d <= tol)) {
        out.detail = fmt::format("resumed state off by {:.3e}", d);
        return out;
      }
      out.ok = true;
    } catch (const std::exception &e) {
      out.detail = e.what();
    }
    return out;
  };

  const unsigned n =
      std::max(1u, threads ? threads : std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < points.size();)
      rep.outcomes[i] = check(points[i]);
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  return rep;
}

void write_crash_csv(std::ostream &os, const std::vector<CrashReport> &reports) {
  os << "policy,event_index,resume_batch,initial,status,detail\n";
  for (const auto &r : reports)
    for (const auto &o : r.outcomes)
      fmt::print(os, "{},{},{},{},{},\"{}\"\n", to_string(r.policy),
                 o.event_index, o.resume_batch, o.initial ? 1 : 0,
                 o.ok ? "ok" : "FAIL", o.detail);
}

} // namespace cxlsim
