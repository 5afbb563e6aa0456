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
#include "cxlsim/runner.hpp"
#include "cxlsim/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <ostream>
#include <thread>

namespace cxlsim {

using nlohmann::json;
using nlohmann::ordered_json;

void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)> &fn) {
  if (threads == 0)
    threads = std::max(1u, std::thread::hardware_concurrency());
  const auto workers = std::min<std::size_t>(threads, n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back(work);
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

void check_invariants(const SimResult &r, std::uint64_t staleness_bound) {
  const Timeline &tl = r.timeline;
  const double total = tl.total_time;
  const double eps = 1e-12 + 1e-9 * total;

  std::array<double, kNumResources> busy_until{};
  for (std::size_t i = 0; i < tl.events.size(); ++i) {
    const Event &e = tl.events[i];
    if (!(e.end >= e.start) || e.start < -eps || e.end > total + eps)
      throw InvariantViolation(
          "event-order", fmt::format("event {} on {} spans [{}, {}] outside [0, {}]",
                                     i, to_string(e.resource), e.start, e.end, total));
    if (i > 0 && e.start < tl.events[i - 1].start)
      throw InvariantViolation("event-order",
                               fmt::format("event {} starts before event {}", i, i - 1));
    auto &until = busy_until[static_cast<std::size_t>(e.resource)];
    if (e.start < until - eps)
      throw InvariantViolation(
          "resource-overlap",
          fmt::format("{} event {} starts at {} before the previous one ends at {}",
                      to_string(e.resource), i, e.start, until));
    until = std::max(until, e.end);
  }

  for (std::size_t k = 0; k < kNumResources; ++k) {
    const auto res = static_cast<Resource>(k);
    const auto parts = resource_breakdown(tl, res);
    double sum = 0.0;
    for (double s : parts)
      sum += s;
    if (std::abs(sum - total) > eps ||
        parts[static_cast<std::size_t>(Category::Idle)] < -eps)
      throw InvariantViolation(
          "resource-conservation",
          fmt::format("{}: categories plus idle = {} but total = {}",
                      to_string(res), sum, total));
  }

  const auto parts = breakdown(tl);
  double sum = 0.0;
  for (double s : parts)
    sum += s;
  if (std::abs(sum - total) > eps)
    throw InvariantViolation(
        "breakdown-conservation",
        fmt::format("critical-path categories sum to {} but total = {}", sum, total));

  const auto gap = staleness(tl);
  if (gap > staleness_bound)
    throw InvariantViolation(
        "staleness-bound",
        fmt::format("observed gap {} exceeds bound {}", gap, staleness_bound));
}

void check_equivalence(const std::vector<JobResult> &jobs) {
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto &a = jobs[i];
    if (!a.sim.model)
      continue;
    for (std::size_t j = 0; j < i; ++j) {
      const auto &b = jobs[j];
      if (b.model != a.model || !b.sim.model)
        continue;
      const bool relaxed = a.policy == Policy::CXL || b.policy == Policy::CXL;
      const double d = max_relative_diff(*a.sim.model, *b.sim.model);
      if (relaxed ? !(d <= kRelaxedTolerance) : d != 0.0)
        throw InvariantViolation(
            "functional-equivalence",
            fmt::format("{}: final {} and {} models differ by {:.3e}", a.model,
                        to_string(a.policy), to_string(b.policy), d));
      break; // comparing with the first earlier job of the model suffices
    }
  }
}

std::size_t RunOutput::crash_failures() const {
  std::size_t n = 0;
  for (const auto &[model, report] : crashes)
    n += report.failures();
  return n;
}

RunOutput execute(const RunSpec &spec) {
  if (spec.policies.empty())
    throw ConfigError("at least one policy is required");
  const SimOptions opts = sim_options(spec);

  RunOutput out;
  out.jobs.resize(spec.models.size() * spec.policies.size());
  parallel_for(out.jobs.size(), spec.threads, [&](std::size_t i) {
    const ModelConfig &cfg = spec.models[i / spec.policies.size()];
    const Policy policy = spec.policies[i % spec.policies.size()];
    JobResult &job = out.jobs[i];
    job.model = cfg.name;
    job.policy = policy;
    job.sim = simulate(policy, cfg, spec.platform, opts);
    check_invariants(job.sim, spec.staleness_bound);
    job.breakdown = breakdown(job.sim.timeline);
    job.training_time = training_time(job.sim.timeline);
    job.energy =
        energy(job.sim.timeline, spec.platform, resident_medium(policy));
    job.energy.policy = std::string(to_string(policy));
    job.energy.model = cfg.name;
    // The store is only needed by crash testing; drop it to bound memory.
    job.sim.store.reset();
  });
  check_equivalence(out.jobs);

  if (spec.crash.mode != CrashMode::None) {
    SimOptions copts = opts;
    copts.functional = true;
    copts.checkpointing = true;
    bool any = false;
    for (const auto &cfg : spec.models)
      for (Policy p : spec.policies) {
        if (!is_undo(p))
          continue;
        any = true;
        out.crashes.emplace_back(
            cfg.name,
            crash_test(p, cfg, spec.platform, copts, spec.crash, spec.threads));
      }
    if (!any)
      throw ConfigError("crash testing needs an undo-log policy (CXL_B or CXL)");
  }
  return out;
}

namespace {

std::ofstream open_output(const std::filesystem::path &file) {
  std::ofstream os(file, std::ios::binary);
  if (!os)
    throw ConfigError(fmt::format("cannot write {}", file.string()));
  return os;
}

std::string sci(double v) { return fmt::format("{:.9e}", v); }

} // namespace

ordered_json summary(const json &doc, const RunSpec &spec, const RunOutput &out) {
  ordered_json s;
  s["provenance"] = provenance_line(doc);
  s["version"] = kVersion;
  s["config_hash"] = document_hash(doc);
  s["batches"] = spec.n_batches;
  s["seed"] = spec.seed;
  s["baseline"] = spec.baseline;

  std::vector<EnergyReport> reports;
  for (const auto &j : out.jobs)
    reports.push_back(j.energy);
  const bool have_baseline =
      std::any_of(out.jobs.begin(), out.jobs.end(), [&](const JobResult &j) {
        return to_string(j.policy) == to_string(parse_policy(spec.baseline));
      });
  std::vector<NormalizedEnergy> norm;
  if (have_baseline)
    norm = compare(reports, to_string(parse_policy(spec.baseline)));

  ordered_json results = ordered_json::array();
  for (std::size_t i = 0; i < out.jobs.size(); ++i) {
    const auto &j = out.jobs[i];
    ordered_json r;
    r["model"] = j.model;
    r["policy"] = to_string(j.policy);
    r["total_time_s"] = j.sim.timeline.total_time;
    r["training_time_s"] = j.training_time;
    r["checkpoint_s"] = j.breakdown[static_cast<std::size_t>(Category::Checkpoint)];
    r["per_batch_s"] = spec.n_batches ? j.sim.timeline.total_time /
                                            static_cast<double>(spec.n_batches)
                                      : 0.0;
    r["energy_j"] = j.energy.total_j();
    if (have_baseline)
      r["energy_normalized"] = norm[i].normalized;
    r["raw_penalized_reads"] = j.sim.stats.raw_penalized_reads;
    r["raw_shared_reads"] = j.sim.stats.raw_shared_reads;
    r["staleness"] = staleness(j.sim.timeline);
    r["mlp_logs_completed"] = j.sim.stats.mlp_logs_completed;
    r["forced_mlp_completions"] = j.sim.stats.forced_mlp_completions;
    if (!j.sim.stats.losses.empty())
      r["final_loss"] = j.sim.stats.losses.back();
    results.push_back(std::move(r));
  }
  s["results"] = std::move(results);

  if (!out.crashes.empty()) {
    ordered_json crashes = ordered_json::array();
    for (const auto &[model, rep] : out.crashes) {
      ordered_json c;
      c["model"] = model;
      c["policy"] = to_string(rep.policy);
      c["persist_events"] = rep.total_events;
      c["crash_points"] = rep.outcomes.size();
      c["failures"] = rep.failures();
      ordered_json failing = ordered_json::array();
      for (const auto &o : rep.outcomes)
        if (!o.ok)
          failing.push_back(o.event_index);
      c["failing_events"] = std::move(failing);
      crashes.push_back(std::move(c));
    }
    s["crash_test"] = std::move(crashes);
  }
  return s;
}

std::string file_stem(std::string_view name) {
  std::string s;
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    s += std::isalnum(u) || c == '-' || c == '_'
             ? static_cast<char>(std::tolower(u))
             : '_';
  }
  return s.empty() ? std::string("model") : s;
}

void write_artifacts(const std::filesystem::path &dir, const json &doc,
                     const RunSpec &spec, const RunOutput &out) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw ConfigError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  const std::string prov = provenance_line(doc) + "\n";

  for (const auto &j : out.jobs) {
    auto os = open_output(dir / fmt::format("timeline_{}_{}.csv", file_stem(j.model),
                                            file_stem(to_string(j.policy))));
    os << prov;
    write_timeline_csv(os, j.sim.timeline);
  }
  {
    auto os = open_output(dir / "breakdown.csv");
    os << prov;
    std::vector<BreakdownRow> rows;
    for (const auto &j : out.jobs)
      rows.push_back({std::string(to_string(j.policy)), j.model, j.breakdown});
    write_breakdown_csv(os, rows);
  }
  {
    auto os = open_output(dir / "energy.csv");
    os << prov;
    std::vector<EnergyReport> reports;
    for (const auto &j : out.jobs)
      reports.push_back(j.energy);
    const auto base = to_string(parse_policy(spec.baseline));
    const bool have = std::any_of(out.jobs.begin(), out.jobs.end(),
                                  [&](const JobResult &j) { return to_string(j.policy) == base; });
    write_energy_csv(os, reports, have ? base : std::string_view{});
  }
  {
    auto os = open_output(dir / "summary.json");
    os << summary(doc, spec, out).dump(2) << "\n";
  }
  std::vector<std::string> models;
  for (const auto &[model, rep] : out.crashes)
    if (std::find(models.begin(), models.end(), model) == models.end())
      models.push_back(model);
  for (const auto &m : models) {
    std::vector<CrashReport> reps;
    for (const auto &[model, rep] : out.crashes)
      if (model == m)
        reps.push_back(rep);
    auto os = open_output(dir / fmt::format("crash_{}.csv", file_stem(m)));
    os << prov;
    write_crash_csv(os, reps);
  }
}

GridAxis parse_grid(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == text.size())
    throw ConfigError(fmt::format("grid '{}': expected key=v1,v2,...", text));
  GridAxis axis{std::string(text.substr(0, eq)), {}};
  std::string_view rest = text.substr(eq + 1);
  while (true) {
    const auto c = rest.find(',');
    const auto v = rest.substr(0, c);
    if (v.empty())
      throw ConfigError(fmt::format("grid '{}': empty value", text));
    axis.values.emplace_back(v);
    if (c == std::string_view::npos)
      break;
    rest = rest.substr(c + 1);
  }
  return axis;
}

std::vector<SweepRow> sweep(const json &doc, const std::vector<GridAxis> &axes,
                            unsigned threads) {
  // Expand the grid into validated specs before any simulation runs.
  struct Point {
    std::vector<std::string> values;
    RunSpec spec;
  };
  std::vector<Point> points;
  std::size_t count = 1;
  for (const auto &a : axes)
    count *= a.values.size();
  for (std::size_t p = 0; p < count; ++p) {
    json d = doc;
    std::vector<std::string> values(axes.size());
    std::size_t rem = p;
    for (std::size_t k = axes.size(); k-- > 0;) {
      values[k] = axes[k].values[rem % axes[k].values.size()];
      rem /= axes[k].values.size();
    }
    for (std::size_t k = 0; k < axes.size(); ++k)
      apply_override(d, axes[k].path, values[k]);
    RunSpec spec = spec_from_document(d);
    spec.crash = {CrashMode::None, 0};
    points.push_back({std::move(values), std::move(spec)});
  }

  struct Job {
    std::size_t point, model, policy;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < points.size(); ++p)
    for (std::size_t m = 0; m < points[p].spec.models.size(); ++m)
      for (std::size_t k = 0; k < points[p].spec.policies.size(); ++k)
        jobs.push_back({p, m, k});

  std::vector<SweepRow> rows(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto &[p, m, k] = jobs[i];
    const RunSpec &spec = points[p].spec;
    const Policy policy = spec.policies[k];
    const ModelConfig &cfg = spec.models[m];
    const SimResult r = simulate(policy, cfg, spec.platform, sim_options(spec));
    check_invariants(r, spec.staleness_bound);
    SweepRow &row = rows[i];
    row.values = points[p].values;
    row.model = cfg.name;
    row.policy = policy;
    row.total_time = r.timeline.total_time;
    row.training_time = training_time(r.timeline);
    row.checkpoint =
        breakdown(r.timeline)[static_cast<std::size_t>(Category::Checkpoint)];
    row.energy_j =
        energy(r.timeline, spec.platform, resident_medium(policy)).total_j();
    row.raw_penalized_reads = r.stats.raw_penalized_reads;
    row.staleness = staleness(r.timeline);
  });
  return rows;
}

void write_sweep_csv(std::ostream &os, std::string_view provenance,
                     const std::vector<GridAxis> &axes,
                     const std::vector<SweepRow> &rows) {
  os << provenance << "\n";
  for (const auto &a : axes)
    os << a.path << ",";
  os << "model,policy,total_s,training_s,checkpoint_s,energy_j,"
        "raw_penalized_reads,staleness\n";
  for (const auto &r : rows) {
    for (const auto &v : r.values)
      os << v << ",";
    os << fmt::format("{},{},{},{},{},{},{},{}\n", r.model, to_string(r.policy),
                      sci(r.total_time), sci(r.training_time), sci(r.checkpoint),
                      sci(r.energy_j), r.raw_penalized_reads, r.staleness);
  }
}

} // namespace cxlsim
