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
#include "cxlsim/sim.hpp"
#include "cxlsim/errors.hpp"
#include "cxlsim/scheduler.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <functional>

namespace cxlsim {

namespace {

constexpr std::array<std::string_view, 7> kPolicyNames{
    "SSD", "PMEM", "PCIE", "CXL_D", "CXL_B", "CXL", "DRAM"};

// Log entries carry (table, row) next to the saved vector.
constexpr std::uint64_t kLogEntryHeader = 16;

using RowId = std::uint64_t;

struct BatchRows {
  std::vector<RowId> lookups; // every lookup, table-major, with repeats
  std::vector<RowId> unique;  // sorted
};

BatchRows rows_of(const SparseBatch &b, const ModelConfig &cfg) {
  BatchRows out;
  out.lookups.reserve(b.samples.size() * cfg.num_tables *
                      cfg.lookups_per_table);
  for (std::size_t t = 0; t < cfg.num_tables; ++t)
    for (const auto &s : b.samples)
      for (RowIndex r : s.indices.at(t)) {
        if (r >= cfg.rows_per_table)
          throw InvalidRequest(fmt::format("index {} out of range", r));
        out.lookups.push_back(RowId{t} * cfg.rows_per_table + r);
      }
  out.unique = out.lookups;
  std::sort(out.unique.begin(), out.unique.end());
  out.unique.erase(std::unique(out.unique.begin(), out.unique.end()),
                   out.unique.end());
  return out;
}

struct Cost {
  double seconds = 0.0;
  std::uint64_t read = 0;  // charged bytes
  std::uint64_t write = 0; // charged bytes
  std::uint64_t requests = 0;
  Cost &operator+=(const Cost &o) {
    seconds += o.seconds;
    read += o.read;
    write += o.write;
    requests += o.requests;
    return *this;
  }
};

// Embedding medium seen through `parallelism` outstanding requests: the
// latency part of each request overlaps across lanes, the transfer part
// shares the (scaled) bandwidth.
class Media {
public:
  Media(DeviceProfile p, Medium m, double parallelism, double bw_scale,
        std::uint64_t row_bytes, std::size_t rows)
      : prof_(std::move(p)), medium_(m), par_(parallelism), scale_(bw_scale),
        row_bytes_(row_bytes), last_writer_(rows, 0) {}

  Medium medium() const { return medium_; }
  const DeviceProfile &profile() const { return prof_; }

  Cost reads(std::span<const RowId> rows, double issue, std::uint64_t batch,
             SimStats &stats) const {
    Cost c;
    const auto charged = charged_bytes(prof_, row_bytes_);
    const double bw_term = static_cast<double>(charged) / prof_.read_bandwidth;
    const double scaled =
        static_cast<double>(charged) / (prof_.read_bandwidth * scale_);
    for (RowId id : rows) {
      const AccessRequest req{AccessKind::Read, id * row_bytes_, row_bytes_,
                              issue};
      const auto t = access_timing(prof_, req, history_);
      c.seconds += (t.seconds - bw_term) / par_ + scaled;
      c.read += charged;
      ++c.requests;
      if (t.raw_penalized) {
        ++stats.raw_penalized_reads;
        if (last_writer_[id] == batch) // written by batch - 1
          ++stats.raw_shared_reads;
      }
    }
    return c;
  }

  Cost row_writes(std::size_t n) const {
    const auto charged = charged_bytes(prof_, row_bytes_);
    Cost c;
    c.seconds = static_cast<double>(n) *
                (prof_.write_latency / par_ +
                 static_cast<double>(charged) /
                     (prof_.write_bandwidth * scale_));
    c.write = n * charged;
    c.requests = n;
    return c;
  }

  /// One append of `bytes` to the log region.
  Cost append(std::uint64_t bytes) const {
    if (bytes == 0)
      return {};
    const auto charged = charged_bytes(prof_, bytes);
    Cost c;
    c.seconds = prof_.write_latency +
                static_cast<double>(charged) / (prof_.write_bandwidth * scale_);
    c.write = charged;
    c.requests = 1;
    return c;
  }

  /// Streaming seconds per byte of log appends, without the latency.
  double append_seconds_per_byte() const {
    return 1.0 / (prof_.write_bandwidth * scale_);
  }

  void record(std::span<const RowId> rows, double completed,
              std::uint64_t batch) {
    for (RowId id : rows) {
      history_.record(id * row_bytes_, row_bytes_, completed);
      last_writer_[id] = batch + 1;
    }
  }

private:
  DeviceProfile prof_;
  Medium medium_;
  double par_;
  double scale_;
  std::uint64_t row_bytes_;
  WriteHistory history_;
  std::vector<std::uint64_t> last_writer_; // writing batch + 1, 0 = never
};

class BatchSource {
public:
  BatchSource(const ModelConfig &cfg, const SimOptions &o)
      : opts_(o), gen_(cfg, o.seed, o.workload) {}

  const SparseBatch &get(std::uint64_t i) {
    if (!opts_.batches.empty()) {
      if (i >= opts_.batches.size())
        throw ConfigError(fmt::format("trace has no batch {}", i));
      return opts_.batches[i];
    }
    while (cache_.empty() || cache_.back().batch_index < i) {
      const SparseBatch *prev = cache_.empty() ? nullptr : &cache_.back();
      const std::uint64_t next = cache_.empty() ? 0 : prev->batch_index + 1;
      cache_.push_back(gen_.generate(next, prev));
      if (cache_.size() > 3)
        cache_.pop_front();
    }
    for (const auto &b : cache_)
      if (b.batch_index == i)
        return b;
    throw InvalidRequest("batch requested out of order");
  }

private:
  const SimOptions &opts_;
  WorkloadGenerator gen_;
  std::deque<SparseBatch> cache_;
};

// What the relaxed scheduler did with the MLP log in one batch; the
// functional path replays it against the store.
struct MlpPlan {
  bool force = false;      // finish (or start and finish) before the batch
  bool force_new = false;
  bool window_new = false; // a new log starts with this batch's window
  std::uint64_t window_bytes = 0;
  bool window_completes = false;
};

struct MlpLogState {
  bool active = false;
  std::uint64_t batch = 0;
  std::uint64_t remaining = 0;
};

class Simulation {
public:
  Simulation(Policy policy, const ModelConfig &cfg, const Platform &pf,
             const SimOptions &o)
      : policy_(policy), cfg_(cfg), pf_(pf), o_(o), source_(cfg, o),
        media_(make_media()),
        marks_(cfg.num_tables * cfg.rows_per_table, 0) {
    stages_ = gpu_stages(cfg, pf.gpu);
    if (o.gpu.bottom_fwd)
      stages_.bottom_fwd = *o.gpu.bottom_fwd;
    if (o.gpu.top)
      stages_.top = *o.gpu.top;
    if (o.gpu.bottom_bwd)
      stages_.bottom_bwd = *o.gpu.bottom_bwd;
    checkpointing_ = o.checkpointing && policy != Policy::DRAM;
    mlp_complete_ = o.first_batch;
    const double link_chunk =
        static_cast<double>(pf.mlp_chunk_bytes) / pf.cxl_link.bandwidth;
    chunk_time_ = std::max(link_chunk,
                           static_cast<double>(pf.mlp_chunk_bytes) *
                               media_.append_seconds_per_byte());
  }

  SimResult run();

private:
  Media make_media() const {
    const std::size_t rows = cfg_.num_tables * cfg_.rows_per_table;
    const auto rb = cfg_.row_bytes();
    switch (policy_) {
    case Policy::SSD:
      return Media(pf_.ssd, Medium::SSD, pf_.ssd_parallelism, 1.0, rb, rows);
    case Policy::PMEM:
      return Media(pf_.pmem, Medium::PMEM, pf_.host_parallelism, 1.0, rb,
                   rows);
    case Policy::DRAM:
      return Media(pf_.dram, Medium::DRAM, pf_.host_parallelism, 1.0, rb,
                   rows);
    default:
      return Media(pf_.pmem, Medium::PMEM, pf_.device_parallelism,
                   pf_.device_bandwidth_scale, rb, rows);
    }
  }

  TaskId gpu(Category c, double d, std::vector<TaskId> deps, double not_before,
             std::uint64_t batch) {
    TaskSpec t;
    t.resources = {Resource::GPU};
    t.category = c;
    t.duration = d;
    t.deps = std::move(deps);
    t.not_before = not_before;
    t.batch = batch;
    return sched_.submit(t);
  }

  TaskId plain(ResourceSet rs, Category c, double d, std::vector<TaskId> deps,
               double not_before, std::uint64_t batch, std::uint64_t bytes) {
    TaskSpec t;
    t.resources = rs;
    t.category = c;
    t.duration = d;
    t.deps = std::move(deps);
    t.not_before = not_before;
    t.batch = batch;
    t.bytes = bytes;
    return sched_.submit(t);
  }

  /// Transfer between GPU and the memory side. Host-driven policies pay a
  /// copy call plus a synchronize around a PCIe DMA.
  TaskId transfer(Category c, std::uint64_t bytes, std::vector<TaskId> deps,
                  double not_before, std::uint64_t batch) {
    if (bytes == 0)
      return plain({Resource::Link}, c, 0.0, std::move(deps), not_before,
                   batch, 0);
    switch (policy_) {
    case Policy::CXL_D:
    case Policy::CXL_B:
    case Policy::CXL:
      return plain({Resource::Link}, c, transfer_time(pf_.cxl_link, bytes),
                   std::move(deps), not_before, batch, bytes);
    case Policy::PCIE:
      // No peer path: staged through host memory, two PCIe hops.
      return plain({Resource::Host, Resource::Link}, c,
                   2.0 * pf_.sync_overhead +
                       2.0 * transfer_time(pf_.pcie_link, bytes),
                   std::move(deps), not_before, batch, bytes);
    default:
      return plain({Resource::Host, Resource::Link}, c,
                   2.0 * pf_.sync_overhead + transfer_time(pf_.pcie_link, bytes),
                   std::move(deps), not_before, batch, bytes);
    }
  }

  /// Task touching the medium; `cost` sees the task's start time as the
  /// issue time of its requests.
  TaskId media_task(ResourceSet rs, Category c, std::vector<TaskId> deps,
                    double not_before, std::uint64_t batch,
                    std::uint64_t bytes, double extra,
                    const std::function<Cost(double)> &cost) {
    TaskSpec t;
    t.resources = rs;
    t.resources.add(Resource::MEM_media);
    t.category = c;
    t.deps = std::move(deps);
    t.not_before = not_before;
    t.batch = batch;
    t.bytes = bytes;
    const Cost k = cost(sched_.ready(t));
    t.duration = k.seconds + extra;
    t.medium = media_.medium();
    t.charged_read = k.read;
    t.charged_write = k.write;
    t.requests = k.requests;
    return sched_.submit(t);
  }

  double ops(std::size_t n, double per_op) const {
    return static_cast<double>(n * cfg_.feature_dim) * per_op;
  }

  void batch_host(std::uint64_t n, const BatchRows &rows);
  void batch_pcie(std::uint64_t n, const BatchRows &rows);
  void batch_cxl_d(std::uint64_t n, const BatchRows &rows);
  void batch_cxl_b(std::uint64_t n, const BatchRows &rows);
  MlpPlan batch_cxl(std::uint64_t n, const BatchRows &rows,
                    const BatchRows *next);

  void functional_batch(std::uint64_t n, const SparseBatch &b,
                        const SparseBatch *next, const MlpPlan &plan);
  void send_mlp(std::uint64_t bytes);
  void start_mlp_log(std::uint64_t n);
  void final_flush(std::uint64_t n);

  std::uint64_t reduced_bytes() const {
    return cfg_.batch_size * cfg_.num_tables * cfg_.row_bytes();
  }
  std::uint64_t entry_bytes(std::size_t n) const {
    return n * (cfg_.row_bytes() + kLogEntryHeader);
  }

  Policy policy_;
  const ModelConfig &cfg_;
  const Platform &pf_;
  const SimOptions &o_;
  BatchSource source_;
  Media media_;
  Scheduler sched_;
  GpuStages stages_;
  bool checkpointing_ = true;
  SimStats stats_;
  std::vector<BatchSpan> spans_;
  std::vector<LogWindow> windows_;
  double barrier_ = 0.0;
  double batch_end_ = 0.0;
  std::vector<std::uint64_t> marks_; // batch + 1 of the last unique set holding a row
  std::size_t shared_lookups_ = 0;   // lookups of this batch the previous one updated

  // Relaxed scheduling state.
  bool have_partial_ = false;
  std::optional<TaskId> pending_log_;
  std::optional<TaskId> pending_partial_;
  MlpLogState mlp_;
  std::uint64_t mlp_complete_ = 0;
  double chunk_time_ = 0.0;

  // Functional state.
  std::optional<Model<float>> model_;
  std::optional<PersistentStore> store_;
  std::optional<std::vector<Matrix<float>>> partial_;
  std::optional<EmbeddingGradient<float>> prev_grad_;
  std::vector<std::uint8_t> snapshot_;
  std::uint64_t snapshot_sent_ = 0;
};

void Simulation::batch_host(std::uint64_t n, const BatchRows &rows) {
  const double start = barrier_;
  const ResourceSet host{Resource::Host};
  const auto bf = gpu(Category::B_MLP, stages_.bottom_fwd, {}, start, n);
  const auto lk = media_task(
      host, Category::Embedding, {}, start, n,
      rows.lookups.size() * cfg_.row_bytes(),
      ops(rows.lookups.size(), pf_.host_sec_per_op),
      [&](double at) { return media_.reads(rows.lookups, at, n, stats_); });
  const auto xr = transfer(Category::Transfer, reduced_bytes(), {lk}, start, n);
  const auto top = gpu(Category::T_MLP, stages_.top, {bf, xr}, start, n);
  const auto bb = gpu(Category::B_MLP, stages_.bottom_bwd, {top}, start, n);
  const auto xg = transfer(Category::Transfer,
                           rows.unique.size() * cfg_.row_bytes(), {top}, start,
                           n);
  const auto up = media_task(
      host, Category::Embedding, {xg}, start, n,
      rows.unique.size() * cfg_.row_bytes(),
      ops(rows.unique.size(), pf_.host_sec_per_op),
      [&](double) { return media_.row_writes(rows.unique.size()); });
  media_.record(rows.unique, sched_.end(up), n);
  batch_end_ = std::max(sched_.end(bb), sched_.end(up));
  if (checkpointing_) {
    // Redo log: parameters copied to the host, then everything appended.
    const auto mc = transfer(Category::Checkpoint, cfg_.mlp_bytes(), {bb, up},
                             start, n);
    const std::uint64_t bytes = entry_bytes(rows.unique.size()) + cfg_.mlp_bytes();
    const auto rd =
        media_task(host, Category::Checkpoint, {mc, up}, start, n, bytes, 0.0,
                   [&](double) { return media_.append(bytes); });
    batch_end_ = std::max(batch_end_, sched_.end(rd));
    mlp_complete_ = n + 1;
  }
}

void Simulation::batch_pcie(std::uint64_t n, const BatchRows &rows) {
  const double start = barrier_;
  const ResourceSet logic{Resource::MEM_compute};
  const auto bf = gpu(Category::B_MLP, stages_.bottom_fwd, {}, start, n);
  const auto lk = media_task(
      logic, Category::Embedding, {}, start, n,
      rows.lookups.size() * cfg_.row_bytes(),
      ops(rows.lookups.size(), pf_.mem_sec_per_op),
      [&](double at) { return media_.reads(rows.lookups, at, n, stats_); });
  const auto xr = transfer(Category::Transfer, reduced_bytes(), {lk}, start, n);
  const auto top = gpu(Category::T_MLP, stages_.top, {bf, xr}, start, n);
  const auto bb = gpu(Category::B_MLP, stages_.bottom_bwd, {top}, start, n);
  const auto xg = transfer(Category::Transfer,
                           rows.unique.size() * cfg_.row_bytes(), {top}, start,
                           n);
  const auto up = media_task(
      logic, Category::Embedding, {xg}, start, n,
      rows.unique.size() * cfg_.row_bytes(),
      ops(rows.unique.size(), pf_.mem_sec_per_op),
      [&](double) { return media_.row_writes(rows.unique.size()); });
  media_.record(rows.unique, sched_.end(up), n);
  batch_end_ = std::max(sched_.end(bb), sched_.end(up));
  if (checkpointing_) {
    // The DMA of the parameters waits for the host, which drives the update.
    const auto mc = transfer(Category::Checkpoint, cfg_.mlp_bytes(), {bb, up},
                             start, n);
    const std::uint64_t bytes = entry_bytes(rows.unique.size()) + cfg_.mlp_bytes();
    const auto rd = media_task(
        {Resource::MEM_checkpoint}, Category::Checkpoint, {mc, up}, start, n,
        bytes, 0.0, [&](double at) {
          Cost c = media_.reads(rows.unique, at, n, stats_);
          c += media_.append(bytes);
          return c;
        });
    batch_end_ = std::max(batch_end_, sched_.end(rd));
    mlp_complete_ = n + 1;
  }
}

void Simulation::batch_cxl_d(std::uint64_t n, const BatchRows &rows) {
  const double start = barrier_;
  const ResourceSet logic{Resource::MEM_compute};
  const auto bf = gpu(Category::B_MLP, stages_.bottom_fwd, {}, start, n);
  const auto lk = media_task(
      logic, Category::Embedding, {}, start, n,
      rows.lookups.size() * cfg_.row_bytes(),
      ops(rows.lookups.size(), pf_.mem_sec_per_op),
      [&](double at) { return media_.reads(rows.lookups, at, n, stats_); });
  const auto xr = transfer(Category::Transfer, reduced_bytes(), {lk}, start, n);
  const auto top = gpu(Category::T_MLP, stages_.top, {bf, xr}, start, n);
  const auto bb = gpu(Category::B_MLP, stages_.bottom_bwd, {top}, start, n);
  const auto xg = transfer(Category::Transfer,
                           rows.unique.size() * cfg_.row_bytes(), {top}, start,
                           n);
  const auto up = media_task(
      logic, Category::Embedding, {xg}, start, n,
      rows.unique.size() * cfg_.row_bytes(),
      ops(rows.unique.size(), pf_.mem_sec_per_op),
      [&](double) { return media_.row_writes(rows.unique.size()); });
  media_.record(rows.unique, sched_.end(up), n);
  batch_end_ = std::max(sched_.end(bb), sched_.end(up));
  if (checkpointing_) {
    // CXL.cache pull of the updated parameters overlaps the update; the
    // redo append follows it.
    const auto pull = plain({Resource::Link, Resource::MEM_checkpoint},
                            Category::Checkpoint,
                            transfer_time(pf_.cxl_link, cfg_.mlp_bytes()), {bb},
                            start, n, cfg_.mlp_bytes());
    const std::uint64_t bytes = entry_bytes(rows.unique.size()) + cfg_.mlp_bytes();
    const auto rd = media_task(
        {Resource::MEM_checkpoint}, Category::Checkpoint, {pull, up}, start, n,
        bytes, 0.0, [&](double at) {
          Cost c = media_.reads(rows.unique, at, n, stats_);
          c += media_.append(bytes);
          return c;
        });
    batch_end_ = std::max(batch_end_, sched_.end(rd));
    mlp_complete_ = n + 1;
  }
}

void Simulation::batch_cxl_b(std::uint64_t n, const BatchRows &rows) {
  const double start = barrier_;
  const ResourceSet logic{Resource::MEM_compute};
  const auto bf = gpu(Category::B_MLP, stages_.bottom_fwd, {}, start, n);
  const auto lk = media_task(
      logic, Category::Embedding, {}, start, n,
      rows.lookups.size() * cfg_.row_bytes(),
      ops(rows.lookups.size(), pf_.mem_sec_per_op),
      [&](double at) { return media_.reads(rows.lookups, at, n, stats_); });
  const auto xr = transfer(Category::Transfer, reduced_bytes(), {lk}, start, n);

  std::vector<TaskId> update_deps;
  std::vector<TaskId> bwd_deps;
  std::optional<TaskId> el, ml;
  if (checkpointing_) {
    // Undo log in the expander's idle time after the lookup: embedding rows
    // first, then the MLP parameters pulled over CXL.cache.
    const auto entries = entry_bytes(rows.unique.size());
    el = media_task({Resource::MEM_checkpoint}, Category::Checkpoint, {lk},
                    start, n, entries, 0.0, [&](double at) {
                      Cost c = media_.reads(rows.unique, at, n, stats_);
                      c += media_.append(entries);
                      return c;
                    });
    const auto mlp = cfg_.mlp_bytes();
    ml = media_task({Resource::Link, Resource::MEM_checkpoint},
                    Category::Checkpoint, {*el}, start, n, mlp, 0.0,
                    [&](double) {
                      Cost c = media_.append(mlp);
                      c.seconds =
                          std::max(c.seconds, transfer_time(pf_.cxl_link, mlp));
                      return c;
                    });
    update_deps.push_back(*el);
    bwd_deps.push_back(*ml);
  }
  const auto top = gpu(Category::T_MLP, stages_.top, {bf, xr}, start, n);
  bwd_deps.push_back(top);
  // Parameters stay untouched until the MLP log holds them.
  const auto bb = gpu(Category::B_MLP, stages_.bottom_bwd, bwd_deps, start, n);
  const auto xg = transfer(Category::Transfer,
                           rows.unique.size() * cfg_.row_bytes(), {top}, start,
                           n);
  update_deps.push_back(xg);
  const auto up = media_task(
      logic, Category::Embedding, update_deps, start, n,
      rows.unique.size() * cfg_.row_bytes(),
      ops(rows.unique.size(), pf_.mem_sec_per_op),
      [&](double) { return media_.row_writes(rows.unique.size()); });
  media_.record(rows.unique, sched_.end(up), n);
  batch_end_ = std::max(sched_.end(bb), sched_.end(up));
  if (checkpointing_) {
    windows_.push_back({n, sched_.start(*el), sched_.end(*ml),
                        sched_.end(top), spans_.size()});
    mlp_complete_ = n;
    ++stats_.mlp_logs_completed;
  }
}

MlpPlan Simulation::batch_cxl(std::uint64_t n, const BatchRows &rows,
                              const BatchRows *next) {
  MlpPlan plan;
  const double start = barrier_;
  const ResourceSet logic{Resource::MEM_compute};
  const ResourceSet ckpt{Resource::MEM_checkpoint};
  const auto mlp_bytes = cfg_.mlp_bytes();

  std::vector<TaskId> gpu_gate;
  // Finishing the in-flight log moves the recovery point to its start
  // batch, so that batch must also be within the bound.
  const bool stale =
      n - mlp_complete_ > o_.staleness_bound ||
      (mlp_.active && n - mlp_.batch >= o_.staleness_bound);
  if (checkpointing_ && stale) {
    // Staleness bound reached: finish the MLP log with the GPU held.
    plan.force = true;
    if (!mlp_.active) {
      plan.force_new = true;
      mlp_ = {true, n, mlp_bytes};
    }
    const auto rem = mlp_.remaining;
    const auto fc = media_task(
        {Resource::Link, Resource::MEM_checkpoint}, Category::Checkpoint, {},
        start, n, rem, 0.0, [&](double) {
          Cost c = media_.append(rem);
          c.seconds = std::max(c.seconds, transfer_time(pf_.cxl_link, rem));
          return c;
        });
    gpu_gate.push_back(fc);
    mlp_complete_ = mlp_.batch;
    mlp_ = {};
    ++stats_.forced_mlp_completions;
    ++stats_.mlp_logs_completed;
  }

  std::vector<TaskId> update_deps;
  TaskId cor;
  if (have_partial_) {
    // Partial sums came from the previous window; fold in the previous
    // batch's gradient for the rows both batches touch.
    cor = plain(logic, Category::Embedding,
                ops(shared_lookups_, pf_.mem_sec_per_op), {}, start, n,
                shared_lookups_ * cfg_.row_bytes());
    if (pending_log_)
      update_deps.push_back(*pending_log_);
    if (checkpointing_) {
      // Rows the previous update touched are logged from the update's
      // write buffer, so no media read is needed.
      std::size_t shared = 0;
      for (RowId id : rows.unique)
        shared += marks_[id] == n ? 1 : 0;
      const auto bytes = entry_bytes(shared);
      update_deps.push_back(media_task(ckpt, Category::Checkpoint, {}, start,
                                       n, bytes, 0.0, [&](double) {
                                         return media_.append(bytes);
                                       }));
    }
  } else {
    cor = media_task(
        logic, Category::Embedding, {}, start, n,
        rows.lookups.size() * cfg_.row_bytes(),
        ops(rows.lookups.size(), pf_.mem_sec_per_op),
        [&](double at) { return media_.reads(rows.lookups, at, n, stats_); });
    if (checkpointing_) {
      const auto entries = entry_bytes(rows.unique.size());
      update_deps.push_back(media_task(
          ckpt, Category::Checkpoint, {cor}, start, n, entries, 0.0,
          [&](double at) {
            Cost c = media_.reads(rows.unique, at, n, stats_);
            c += media_.append(entries);
            return c;
          }));
    }
  }
  const auto xr = transfer(Category::Transfer, reduced_bytes(), {cor}, start, n);
  const auto bf = gpu(Category::B_MLP, stages_.bottom_fwd, gpu_gate, start, n);
  const auto top = gpu(Category::T_MLP, stages_.top, {bf, xr}, start, n);

  // Window work for the next batch: lookup over the pre-update table, then
  // undo copies of the rows this batch will not update.
  pending_log_.reset();
  pending_partial_.reset();
  if (next) {
    const auto nb = n + 1;
    pending_partial_ = media_task(
        logic, Category::Embedding, {cor}, start, nb,
        next->lookups.size() * cfg_.row_bytes(),
        ops(next->lookups.size(), pf_.mem_sec_per_op), [&](double at) {
          return media_.reads(next->lookups, at, nb, stats_);
        });
    update_deps.push_back(*pending_partial_);
    if (checkpointing_) {
      std::vector<RowId> cold;
      for (RowId id : next->unique)
        if (marks_[id] != n + 1)
          cold.push_back(id);
      const auto entries = entry_bytes(cold.size());
      pending_log_ = media_task(ckpt, Category::Checkpoint,
                                {*pending_partial_}, start, nb, entries, 0.0,
                                [&](double at) {
                                  Cost c = media_.reads(cold, at, nb, stats_);
                                  c += media_.append(entries);
                                  return c;
                                });
    }
  }

  if (checkpointing_) {
    // MLP chunks move only while the GPU is inside interaction/top-MLP; the
    // chunk straddling the window end completes.
    TaskSpec probe;
    probe.resources = {Resource::Link, Resource::MEM_checkpoint,
                       Resource::MEM_media};
    probe.not_before = sched_.start(top);
    const double s = sched_.ready(probe);
    const double avail = sched_.end(top) - s;
    if (avail > 0.0) {
      if (!mlp_.active) {
        plan.window_new = true;
        mlp_ = {true, n, mlp_bytes};
      }
      const std::uint64_t chunk = pf_.mlp_chunk_bytes;
      const auto chunks_left = (mlp_.remaining + chunk - 1) / chunk;
      const auto fit = static_cast<std::uint64_t>(std::ceil(avail / chunk_time_));
      const auto k = std::min(chunks_left, std::max<std::uint64_t>(fit, 1));
      const auto bytes = std::min(mlp_.remaining, k * chunk);
      TaskSpec t = probe;
      t.category = Category::Checkpoint;
      t.duration = static_cast<double>(k) * chunk_time_;
      t.batch = n;
      t.bytes = bytes;
      t.medium = media_.medium();
      t.charged_write = charged_bytes(media_.profile(), bytes);
      t.requests = k;
      sched_.submit(t);
      plan.window_bytes = bytes;
      mlp_.remaining -= bytes;
      if (mlp_.remaining == 0) {
        plan.window_completes = true;
        mlp_complete_ = mlp_.batch;
        mlp_ = {};
        ++stats_.mlp_logs_completed;
      }
    }
  }

  const auto bb = gpu(Category::B_MLP, stages_.bottom_bwd, {top}, start, n);
  const auto xg = transfer(Category::Transfer,
                           rows.unique.size() * cfg_.row_bytes(), {top}, start,
                           n);
  update_deps.push_back(xg);
  const auto up = media_task(
      logic, Category::Embedding, update_deps, start, n,
      rows.unique.size() * cfg_.row_bytes(),
      ops(rows.unique.size(), pf_.mem_sec_per_op),
      [&](double) { return media_.row_writes(rows.unique.size()); });
  media_.record(rows.unique, sched_.end(up), n);
  batch_end_ = std::max(sched_.end(bb), sched_.end(up));
  have_partial_ = next != nullptr;
  return plan;
}

void Simulation::start_mlp_log(std::uint64_t) {
  snapshot_ = serialize_mlp(model_->bottom, model_->top);
  snapshot_sent_ = 0;
}

void Simulation::send_mlp(std::uint64_t bytes) {
  const std::uint64_t end = std::min<std::uint64_t>(snapshot_sent_ + bytes,
                                                    snapshot_.size());
  while (snapshot_sent_ < end) {
    const auto len = std::min<std::uint64_t>(pf_.mlp_chunk_bytes,
                                             end - snapshot_sent_);
    store_->log_mlp_chunk(std::span<const std::uint8_t>(
        snapshot_.data() + snapshot_sent_, len));
    snapshot_sent_ += len;
  }
}

void Simulation::functional_batch(std::uint64_t n, const SparseBatch &b,
                                  const SparseBatch *next,
                                  const MlpPlan &plan) {
  auto &m = *model_;
  const auto lr = static_cast<float>(cfg_.learning_rate);
  if (store_) {
    store_->register_batch(b);
    store_->log_embeddings(b);
    if (policy_ == Policy::CXL_B) {
      start_mlp_log(n);
      send_mlp(snapshot_.size());
      store_->commit();
    } else {
      if (plan.force) {
        if (plan.force_new)
          start_mlp_log(n);
        send_mlp(snapshot_.size());
        store_->commit();
      }
      if (plan.window_new)
        start_mlp_log(n);
      send_mlp(plan.window_bytes);
      if (plan.window_completes)
        store_->commit();
    }
  }

  std::vector<Matrix<float>> reduced;
  if (policy_ == Policy::CXL && partial_ && prev_grad_) {
    reduced = std::move(*partial_);
    for (std::size_t t = 0; t < cfg_.num_tables; ++t)
      for (std::size_t s = 0; s < b.samples.size(); ++s) {
        const auto &idx = b.samples[s].indices[t];
        const auto &g = prev_grad_->tables[t];
        const auto shared =
            shared_indices<float>(std::span<const RowIndex>(idx), g);
        const auto col = static_cast<Eigen::Index>(s);
        reduced[t].col(col) = relaxed_correction<float>(
            reduced[t].col(col), g, std::span<const RowIndex>(shared), lr);
      }
  } else {
    reduced = reduce_batch(m.tables, b);
  }
  partial_.reset();

  const auto cache = forward(cfg_, m.bottom, m.top, b, reduced);
  const auto y = labels_of<float>(b);
  stats_.losses.push_back(static_cast<double>(bce_loss(cache.prediction, y)));
  auto g = backward(cache, m.bottom, m.top, y);

  if (policy_ == Policy::CXL && next)
    partial_ = reduce_batch(m.tables, *next);

  for (std::size_t t = 0; t < m.tables.size(); ++t)
    apply_update(m.tables[t], g.embedding.tables[t], lr);
  if (store_)
    store_->update_in_place(g.embedding, lr);
  sgd_step(m.bottom, g.mlp.bottom, lr);
  sgd_step(m.top, g.mlp.top, lr);
  prev_grad_ = std::move(g.embedding);
}

void Simulation::final_flush(std::uint64_t n) {
  // Finish any straddling MLP log, then record the end state as the
  // boundary of a virtual batch n with an empty embedding log.
  if (policy_ == Policy::CXL && store_->mlp_in_progress()) {
    send_mlp(snapshot_.size());
    store_->commit();
  }
  SparseBatch end;
  end.batch_index = n;
  store_->register_batch(end);
  store_->log_embeddings(end);
  start_mlp_log(n);
  send_mlp(snapshot_.size());
  store_->commit();
}

SimResult Simulation::run() {
  const std::uint64_t first = o_.first_batch;
  const std::uint64_t last = o_.n_batches;

  if (o_.functional) {
    model_ = o_.initial_model ? *o_.initial_model
                              : init_model<float>(cfg_, o_.seed);
    if (is_undo(policy_) && checkpointing_) {
      PersistentStore::Options so;
      so.journal = o_.journal;
      store_.emplace(cfg_, model_->tables, so);
      Mmio regs;
      regs.vector_length = cfg_.feature_dim;
      regs.learning_rate = cfg_.learning_rate;
      regs.mlp_address = 0;
      regs.mlp_size = mlp_log_size(cfg_);
      store_->configure(regs);
    }
  }

  std::optional<BatchRows> cur, nxt;
  for (std::uint64_t n = first; n < last; ++n) {
    const SparseBatch &b = source_.get(n);
    if (nxt)
      cur = std::move(nxt);
    else
      cur = rows_of(b, cfg_);
    nxt.reset();

    // Lookups of this batch that the previous batch updated.
    shared_lookups_ = 0;
    for (RowId id : cur->lookups)
      shared_lookups_ += marks_[id] == n ? 1 : 0;
    for (RowId id : cur->unique)
      marks_[id] = n + 1;

    const double span_start = barrier_;
    if (!checkpointing_)
      mlp_complete_ = n;
    MlpPlan plan;
    switch (policy_) {
    case Policy::SSD:
    case Policy::PMEM:
    case Policy::DRAM:
      batch_host(n, *cur);
      break;
    case Policy::PCIE:
      batch_pcie(n, *cur);
      break;
    case Policy::CXL_D:
      batch_cxl_d(n, *cur);
      break;
    case Policy::CXL_B:
      batch_cxl_b(n, *cur);
      break;
    case Policy::CXL: {
      const SparseBatch *nb = n + 1 < last ? &source_.get(n + 1) : nullptr;
      if (nb)
        nxt = rows_of(*nb, cfg_);
      plan = batch_cxl(n, *cur, nxt ? &*nxt : nullptr);
      break;
    }
    }
    spans_.push_back({n, span_start, batch_end_, mlp_complete_});
    barrier_ = batch_end_;

    if (o_.functional) {
      // The source may evict `b` when the next batch is generated.
      const SparseBatch current = source_.get(n);
      const SparseBatch *next = nullptr;
      SparseBatch next_copy;
      if (policy_ == Policy::CXL && n + 1 < last) {
        next_copy = source_.get(n + 1);
        next = &next_copy;
      }
      functional_batch(n, current, next, plan);
    }
  }
  if (store_)
    final_flush(last);

  SimResult r;
  r.policy = policy_;
  r.timeline = sched_.take(std::move(spans_));
  r.stats = std::move(stats_);
  r.log_windows = std::move(windows_);
  r.chunk_time = chunk_time_;
  if (store_ && !(store_->persisted().tables == model_->tables))
    throw InvariantViolation("store-engine agreement",
                             "data region diverged from the trained tables");
  r.model = std::move(model_);
  r.store = std::move(store_);
  return r;
}

} // namespace

std::string_view to_string(Policy p) {
  return kPolicyNames.at(static_cast<std::size_t>(p));
}

Policy parse_policy(std::string_view s) {
  for (std::size_t i = 0; i < kPolicyNames.size(); ++i)
    if (kPolicyNames[i] == s)
      return static_cast<Policy>(i);
  if (s == "CXL-D")
    return Policy::CXL_D;
  if (s == "CXL-B")
    return Policy::CXL_B;
  if (s == "PCIe")
    return Policy::PCIE;
  throw ConfigError(fmt::format("unknown policy '{}'", s));
}

std::vector<Policy> all_policies() {
  return {Policy::SSD,   Policy::PMEM, Policy::PCIE, Policy::CXL_D,
          Policy::CXL_B, Policy::CXL,  Policy::DRAM};
}

GpuStages gpu_stages(const ModelConfig &cfg, const GpuModel &gpu) {
  const double b = static_cast<double>(cfg.batch_size);
  auto layer = [&](std::size_t in, std::size_t out, double passes) {
    return gpu.kernel_overhead +
           passes * b * static_cast<double>(in * out) * gpu.sec_per_mac;
  };
  GpuStages s;
  const auto &bw = cfg.bottom_mlp_layers;
  for (std::size_t i = 0; i + 1 < bw.size(); ++i) {
    s.bottom_fwd += layer(bw[i], bw[i + 1], 1.0);
    s.bottom_bwd += layer(bw[i], bw[i + 1], 2.0);
  }
  std::size_t in = cfg.interaction_width();
  s.top = 2.0 * gpu.kernel_overhead; // concatenation and its adjoint
  for (std::size_t w : cfg.top_mlp_layers) {
    s.top += layer(in, w, 1.0) + layer(in, w, 2.0);
    in = w;
  }
  s.bottom_bwd += gpu.kernel_overhead +
                  static_cast<double>(cfg.mlp_parameter_count()) *
                      gpu.sec_per_mac;
  return s;
}

void Platform::validate() const {
  dram.validate();
  pmem.validate();
  ssd.validate();
  cxl_link.validate();
  pcie_link.validate();
  if (gpu.sec_per_mac < 0 || gpu.kernel_overhead < 0)
    throw ConfigError("GPU cost constants must be non-negative");
  if (sync_overhead < 0 || host_sec_per_op < 0 || mem_sec_per_op < 0)
    throw ConfigError("overhead constants must be non-negative");
  if (host_parallelism == 0 || ssd_parallelism == 0 || device_parallelism == 0)
    throw ConfigError("parallelism must be at least 1");
  if (!(device_bandwidth_scale > 0))
    throw ConfigError("device_bandwidth_scale must be positive");
  if (mlp_chunk_bytes == 0 || mlp_chunk_bytes % defaults::cacheline != 0)
    throw ConfigError("mlp_chunk_bytes must be a positive multiple of 64");
  if (!(dram_static_multiplier > 0))
    throw ConfigError("dram_static_multiplier must be positive");
}

Platform default_platform() {
  Platform p;
  p.dram = dram_profile();
  p.pmem = pmem_profile();
  p.ssd = ssd_profile();
  // x16 links; both interconnects share the physical layer.
  p.cxl_link = cxl_link_profile();
  p.cxl_link.bandwidth = 48e9;
  p.pcie_link = pcie_link_profile();
  p.pcie_link.bandwidth = 48e9;
  p.gpu = {1.2e-12, 20e-6};
  p.host_sec_per_op = 0.25e-9;
  p.mem_sec_per_op = 0.03e-9;
  p.host_parallelism = 16;
  p.ssd_parallelism = 32;
  p.device_parallelism = 96;
  p.device_bandwidth_scale = 48.0;
  return p;
}

SimResult simulate(Policy policy, const ModelConfig &cfg,
                   const Platform &platform, const SimOptions &opts) {
  cfg.validate();
  platform.validate();
  if (opts.staleness_bound == 0)
    throw ConfigError("staleness bound must be at least 1");
  if (opts.first_batch > opts.n_batches)
    throw ConfigError("first_batch beyond n_batches");
  if (!opts.batches.empty() && opts.batches.size() < opts.n_batches)
    throw ConfigError("trace holds fewer batches than requested");
  if (opts.initial_model && !opts.functional)
    throw ConfigError("a resume state needs a functional run");
  Simulation sim(policy, cfg, platform, opts);
  return sim.run();
}

double training_time(const Timeline &tl) {
  const auto b = breakdown(tl);
  return tl.total_time - b[static_cast<std::size_t>(Category::Checkpoint)];
}

} // namespace cxlsim
