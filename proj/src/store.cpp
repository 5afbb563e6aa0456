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
#include "cxlsim/store.hpp"
#include "cxlsim/le_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <ostream>
#include <set>

namespace cxlsim {

namespace {

constexpr char kLogMagic[8] = {'T', 'C', 'X', 'L', 'L', 'O', 'G', 'R'};
constexpr std::uint64_t kFlagBytes = 8;
constexpr std::uint64_t kEntryHeader = 16;

void put_log(ByteWriter &w, const MlpLog &m) {
  w.u64(m.batch);
  w.u64(m.expected);
  w.u8(m.flag ? 1 : 0);
  w.bytes(m.bytes);
}

MlpLog get_log(StreamReader &r) {
  MlpLog m;
  m.batch = r.u64();
  m.expected = r.u64();
  m.flag = r.u8() != 0;
  m.bytes = r.bytes();
  return m;
}

void roll_back(std::vector<EmbeddingTable<float>> &tables,
               const EmbeddingLog &log) {
  for (const auto &e : log.entries) {
    auto &t = tables.at(e.table);
    detail::check_index(e.row, t.num_rows());
    for (Eigen::Index k = 0; k < t.dim(); ++k)
      t.rows(e.row, k) = e.values[static_cast<std::size_t>(k)];
  }
}

} // namespace

std::string_view to_string(PersistKind k) {
  switch (k) {
  case PersistKind::EmbeddingRowCopy:
    return "emb_log_row";
  case PersistKind::EmbeddingFlag:
    return "emb_flag";
  case PersistKind::DataRowWrite:
    return "data_row";
  case PersistKind::MlpChunk:
    return "mlp_chunk";
  case PersistKind::MlpFlag:
    return "mlp_flag";
  case PersistKind::Commit:
    return "commit";
  }
  return "?";
}

void apply_event(PersistedImage &img, const PersistEvent &ev) {
  auto &logs = img.embedding_logs;
  auto open_generation = [&] {
    if (logs.empty() || logs.back().batch != ev.batch || logs.back().flag)
      logs.push_back(EmbeddingLog{ev.batch, {}, false});
    return &logs.back();
  };
  switch (ev.kind) {
  case PersistKind::EmbeddingRowCopy:
    open_generation()->entries.push_back({ev.table, ev.row, ev.values});
    break;
  case PersistKind::EmbeddingFlag:
    open_generation()->flag = true;
    break;
  case PersistKind::DataRowWrite: {
    auto &t = img.tables.at(ev.table);
    for (Eigen::Index k = 0; k < t.dim(); ++k)
      t.rows(ev.row, k) = ev.values[static_cast<std::size_t>(k)];
    break;
  }
  case PersistKind::MlpChunk:
    if (!img.mlp_log)
      img.mlp_log = MlpLog{ev.batch, ev.expected, {}, false};
    img.mlp_log->bytes.insert(img.mlp_log->bytes.end(), ev.chunk.begin(),
                              ev.chunk.end());
    break;
  case PersistKind::MlpFlag:
    if (!img.mlp_log)
      img.mlp_log = MlpLog{ev.batch, ev.expected, {}, false};
    img.mlp_log->flag = true;
    break;
  case PersistKind::Commit: {
    img.prev_checkpoint = std::move(*img.mlp_log);
    img.mlp_log.reset();
    const auto keep = img.prev_checkpoint->batch;
    while (!logs.empty() && logs.front().batch < keep)
      logs.pop_front();
    break;
  }
  }
}

PersistentStore::PersistentStore(ModelConfig cfg,
                                 std::vector<EmbeddingTable<float>> tables)
    : PersistentStore(std::move(cfg), std::move(tables), Options{}) {}

PersistentStore::PersistentStore(ModelConfig cfg,
                                 std::vector<EmbeddingTable<float>> tables,
                                 Options opts)
    : cfg_(std::move(cfg)), opts_(std::move(opts)) {
  cfg_.validate();
  if (tables.size() != cfg_.num_tables)
    throw InvalidRequest("store needs one table per configured table");
  for (const auto &t : tables)
    if (t.num_rows() != static_cast<Eigen::Index>(cfg_.rows_per_table) ||
        t.dim() != static_cast<Eigen::Index>(cfg_.feature_dim))
      throw InvalidRequest("table shape does not match the model config");
  image_.tables = std::move(tables);
  if (opts_.journal)
    initial_ = image_;
  if (!opts_.file.empty()) {
    std::ofstream os(opts_.file, std::ios::binary | std::ios::trunc);
    write_image(os, cfg_, image_);
  }
}

void PersistentStore::configure(const Mmio &regs) {
  if (regs.vector_length == 0 || regs.mlp_size == 0)
    throw InvalidRequest("vector_length and mlp_size must be positive");
  if (regs.vector_length != cfg_.feature_dim)
    throw InvalidRequest("vector_length does not match feature_dim");
  if (regs.mlp_size != mlp_log_size(cfg_))
    throw InvalidRequest("mlp_size " + std::to_string(regs.mlp_size) +
                         " does not match the serialized MLP size " +
                         std::to_string(mlp_log_size(cfg_)));
  mmio_.vector_length = regs.vector_length;
  mmio_.learning_rate = regs.learning_rate;
  mmio_.mlp_address = regs.mlp_address;
  mmio_.mlp_size = regs.mlp_size;
  configured_ = true;
}

void PersistentStore::register_batch(const SparseBatch &batch) {
  if (!configured_)
    throw ProtocolViolation("batch registered before configure");
  mmio_.batch = batch.batch_index;
  mmio_.sparse_indices.assign(cfg_.num_tables, {});
  for (std::size_t t = 0; t < batch.num_tables(); ++t)
    mmio_.sparse_indices.at(t) = batch.table_indices(t);
}

std::uint64_t PersistentStore::data_offset(std::uint32_t table,
                                           RowIndex row) const {
  return (std::uint64_t{table} * cfg_.rows_per_table + row) * cfg_.row_bytes();
}

void PersistentStore::persist(PersistEvent ev) {
  apply_event(image_, ev);
  ++event_count_;
  if (opts_.journal)
    journal_.push_back(std::move(ev));
  if (!opts_.file.empty()) {
    std::ofstream os(opts_.file, std::ios::binary | std::ios::trunc);
    write_image(os, cfg_, image_);
  }
}

void PersistentStore::log_embeddings(const SparseBatch &batch) {
  if (!configured_)
    throw ProtocolViolation("log_embeddings before configure");
  if (batch.batch_index != mmio_.batch ||
      mmio_.sparse_indices.size() != cfg_.num_tables)
    throw ProtocolViolation("batch " + std::to_string(batch.batch_index) +
                            " indices were not registered via MMIO");
  for (const auto &g : image_.embedding_logs)
    if (g.batch == batch.batch_index)
      throw ProtocolViolation("embedding log for batch " +
                              std::to_string(batch.batch_index) +
                              " already exists");

  std::set<std::pair<std::uint32_t, RowIndex>> rows;
  for (std::uint32_t t = 0; t < mmio_.sparse_indices.size(); ++t)
    for (RowIndex r : mmio_.sparse_indices[t]) {
      detail::check_index(r, image_.tables[t].num_rows());
      rows.emplace(t, r);
    }

  const std::uint64_t data_size =
      cfg_.num_tables * cfg_.rows_per_table * cfg_.row_bytes();
  const std::uint64_t log_base = data_size;
  const std::uint64_t entries_base = log_base + 64;
  const std::uint64_t slot = cfg_.row_bytes() + kEntryHeader;
  const std::uint64_t capacity = 2 * cfg_.num_tables * cfg_.rows_per_table;

  for (const auto &[t, r] : rows) {
    PersistEvent ev;
    ev.kind = PersistKind::EmbeddingRowCopy;
    ev.batch = batch.batch_index;
    ev.table = t;
    ev.row = r;
    const auto src = image_.tables[t].rows.row(r);
    ev.values.assign(src.data(), src.data() + src.size());
    ev.offset = entries_base + (log_cursor_++ % capacity) * slot;
    ev.length = slot;
    persist(std::move(ev));
  }
  PersistEvent flag;
  flag.kind = PersistKind::EmbeddingFlag;
  flag.batch = batch.batch_index;
  flag.offset = log_base;
  flag.length = kFlagBytes;
  persist(std::move(flag));
}

void PersistentStore::update_in_place(const EmbeddingGradient<float> &grad,
                                      float lr) {
  const EmbeddingLog *log = nullptr;
  for (const auto &g : image_.embedding_logs)
    if (g.batch == mmio_.batch)
      log = &g;
  if (!log || !log->flag)
    throw ProtocolViolation("update_in_place for batch " +
                            std::to_string(mmio_.batch) +
                            " before its embedding log is flagged");
  if (grad.tables.size() != cfg_.num_tables)
    throw InvalidRequest("gradient table count does not match the store");

  std::set<std::pair<std::uint32_t, RowIndex>> logged;
  for (const auto &e : log->entries)
    logged.emplace(e.table, e.row);
  for (std::uint32_t t = 0; t < grad.tables.size(); ++t)
    for (const auto &[r, g] : grad.tables[t]) {
      detail::check_index(r, image_.tables[t].num_rows());
      if (!logged.count({t, r}))
        throw ProtocolViolation("row " + std::to_string(r) + " of table " +
                                std::to_string(t) + " updated without a log");
    }

  for (std::uint32_t t = 0; t < grad.tables.size(); ++t)
    for (const auto &[r, g] : grad.tables[t]) {
      Vector<float> row = image_.tables[t].rows.row(r).transpose();
      row -= lr * g;
      PersistEvent ev;
      ev.kind = PersistKind::DataRowWrite;
      ev.batch = mmio_.batch;
      ev.table = t;
      ev.row = r;
      ev.values.assign(row.data(), row.data() + row.size());
      ev.offset = data_offset(t, r);
      ev.length = cfg_.row_bytes();
      persist(std::move(ev));
    }
}

void PersistentStore::log_mlp_chunk(std::span<const std::uint8_t> bytes) {
  if (bytes.empty())
    return;
  if (!configured_)
    throw ProtocolViolation("MLP chunk before configure");
  if (image_.mlp_log && image_.mlp_log->flag)
    throw ProtocolViolation("MLP chunk arrived before the complete log was "
                            "committed");
  const auto received = mlp_received();
  if (received + bytes.size() > mmio_.mlp_size)
    throw InvalidRequest("MLP chunk overflows the expected " +
                         std::to_string(mmio_.mlp_size) + " bytes");

  const std::uint64_t data_size =
      cfg_.num_tables * cfg_.rows_per_table * cfg_.row_bytes();
  const std::uint64_t capacity = 2 * cfg_.num_tables * cfg_.rows_per_table;
  const std::uint64_t mlp_base =
      data_size + 64 + capacity * (cfg_.row_bytes() + kEntryHeader);

  const std::uint64_t batch =
      image_.mlp_log ? image_.mlp_log->batch : mmio_.batch;
  PersistEvent ev;
  ev.kind = PersistKind::MlpChunk;
  ev.batch = batch;
  ev.expected = mmio_.mlp_size;
  ev.chunk.assign(bytes.begin(), bytes.end());
  ev.offset = mlp_base + (batch % 2) * mmio_.mlp_size + received;
  ev.length = bytes.size();
  persist(std::move(ev));

  if (mlp_received() == mmio_.mlp_size) {
    PersistEvent flag;
    flag.kind = PersistKind::MlpFlag;
    flag.batch = batch;
    flag.expected = mmio_.mlp_size;
    flag.offset = data_size + kFlagBytes;
    flag.length = kFlagBytes;
    persist(std::move(flag));
  }
}

void PersistentStore::commit() {
  if (!embedding_flag())
    throw ProtocolViolation("commit with the embedding flag unset");
  if (!mlp_flag())
    throw ProtocolViolation("commit with the MLP flag unset");
  PersistEvent ev;
  ev.kind = PersistKind::Commit;
  ev.batch = image_.mlp_log->batch;
  ev.offset = cfg_.num_tables * cfg_.rows_per_table * cfg_.row_bytes() +
              2 * kFlagBytes;
  ev.length = kFlagBytes;
  persist(std::move(ev));
}

bool PersistentStore::embedding_flag() const {
  return !image_.embedding_logs.empty() && image_.embedding_logs.back().flag;
}

std::uint64_t PersistentStore::embedding_batch() const {
  return image_.embedding_logs.empty() ? 0
                                       : image_.embedding_logs.back().batch;
}

std::optional<std::uint64_t> PersistentStore::mlp_batch() const {
  if (image_.mlp_log && image_.mlp_log->flag)
    return image_.mlp_log->batch;
  if (image_.prev_checkpoint)
    return image_.prev_checkpoint->batch;
  return std::nullopt;
}

CrashImage PersistentStore::crash(std::uint64_t idx) const {
  if (!opts_.journal)
    throw InvalidRequest("crash() needs a store built with journaling");
  if (idx > event_count_)
    throw InvalidRequest("crash point " + std::to_string(idx) +
                         " beyond the " + std::to_string(event_count_) +
                         " recorded persist events");
  CrashImage img = initial_;
  for (std::uint64_t i = 0; i < idx; ++i)
    apply_event(img, journal_[i]);
  return img;
}

void PersistentStore::export_trace(std::ostream &os) const {
  if (!opts_.journal)
    throw InvalidRequest("trace export needs a store built with journaling");
  for (std::size_t i = 0; i < journal_.size(); ++i) {
    const auto &e = journal_[i];
    os << i << ',' << to_string(e.kind) << ',' << e.offset << ',' << e.length
       << '\n';
  }
}

Recovered recover(const CrashImage &image, const ModelConfig &cfg) {
  Recovered out;
  out.tables = image.tables;
  const MlpLog *complete = nullptr;
  if (image.mlp_log && image.mlp_log->flag)
    complete = &*image.mlp_log;
  else if (image.prev_checkpoint)
    complete = &*image.prev_checkpoint;

  // Unflagged generations never reached update_in_place, so only flagged
  // ones hold undo data. Newest first restores the oldest value last.
  const std::uint64_t floor = complete ? complete->batch : 0;
  for (auto it = image.embedding_logs.rbegin();
       it != image.embedding_logs.rend(); ++it)
    if (it->flag && it->batch >= floor)
      roll_back(out.tables, *it);

  if (!complete) {
    out.initial = true;
    out.resume_batch = 0;
    return out;
  }
  out.mlp = deserialize_mlp(cfg, complete->bytes);
  out.resume_batch = complete->batch;
  return out;
}

void write_image(std::ostream &os, const ModelConfig &cfg,
                 const PersistedImage &img) {
  Model<float> m;
  m.tables = img.tables;
  write_snapshot(os, cfg, m, kSnapshotTables);

  ByteWriter w;
  w.raw(kLogMagic, sizeof kLogMagic);
  w.u32(static_cast<std::uint32_t>(img.embedding_logs.size()));
  for (const auto &g : img.embedding_logs) {
    w.u64(g.batch);
    w.u8(g.flag ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(g.entries.size()));
    for (const auto &e : g.entries) {
      w.u32(e.table);
      w.u32(e.row);
      w.floats(e.values.data(), e.values.size());
    }
  }
  w.u8(img.mlp_log ? 1 : 0);
  if (img.mlp_log)
    put_log(w, *img.mlp_log);
  w.u8(img.prev_checkpoint ? 1 : 0);
  if (img.prev_checkpoint)
    put_log(w, *img.prev_checkpoint);
  const auto bytes = w.take();
  os.write(reinterpret_cast<const char *>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os)
    throw ConfigError("store image write failed");
}

PersistedImage read_image(std::istream &is, const ModelConfig &cfg) {
  PersistedImage img;
  img.tables = read_snapshot(is, cfg).tables;
  StreamReader r(is);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kLogMagic, sizeof magic) != 0)
    throw ConfigError("store image has no log-region section");
  const auto gens = r.u32();
  for (std::uint32_t i = 0; i < gens; ++i) {
    EmbeddingLog g;
    g.batch = r.u64();
    g.flag = r.u8() != 0;
    const auto n = r.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
      EmbeddingLogEntry e;
      e.table = r.u32();
      e.row = r.u32();
      e.values.resize(cfg.feature_dim);
      r.floats(e.values.data(), e.values.size());
      g.entries.push_back(std::move(e));
    }
    img.embedding_logs.push_back(std::move(g));
  }
  if (r.u8())
    img.mlp_log = get_log(r);
  if (r.u8())
    img.prev_checkpoint = get_log(r);
  return img;
}

} // namespace cxlsim
