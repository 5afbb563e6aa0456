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

// Emulated persistent memory expander with a data region (embedding tables)
// and a log region (per-batch embedding undo logs, MLP logs, persistent
// flags). Every mutation of the persisted partition is one persist event;
// crash(k) rebuilds the image holding exactly events [0, k).

#include "cxlsim/engine.hpp"
#include "cxlsim/workload.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace cxlsim {

struct EmbeddingLogEntry {
  std::uint32_t table = 0;
  RowIndex row = 0;
  std::vector<float> values;
  bool operator==(const EmbeddingLogEntry &) const = default;
};

/// Pre-update copies of every row one batch touches.
struct EmbeddingLog {
  std::uint64_t batch = 0;
  std::vector<EmbeddingLogEntry> entries;
  bool flag = false;
  bool operator==(const EmbeddingLog &) const = default;
};

/// Serialized bottom+top MLP parameters as of the start of `batch`.
struct MlpLog {
  std::uint64_t batch = 0;
  std::uint64_t expected = 0;
  std::vector<std::uint8_t> bytes;
  bool flag = false;
  bool operator==(const MlpLog &) const = default;
};

/// The persisted partition. Volatile state (MMIO registers, transfer
/// counters, GPU-resident parameters) is not part of it.
struct PersistedImage {
  std::vector<EmbeddingTable<float>> tables;
  std::deque<EmbeddingLog> embedding_logs; // oldest first
  std::optional<MlpLog> mlp_log;           // being filled, or complete but not yet committed
  std::optional<MlpLog> prev_checkpoint;   // last committed MLP log
  bool operator==(const PersistedImage &) const = default;
};

using CrashImage = PersistedImage;

struct Mmio {
  std::uint64_t vector_length = 0;
  double learning_rate = 0.0;
  std::uint64_t mlp_address = 0;
  std::uint64_t mlp_size = 0;
  // Per-batch registration: the batch being trained and its indices.
  std::uint64_t batch = 0;
  std::vector<std::vector<RowIndex>> sparse_indices;
};

enum class PersistKind : std::uint8_t {
  EmbeddingRowCopy,
  EmbeddingFlag,
  DataRowWrite,
  MlpChunk,
  MlpFlag,
  Commit,
};

std::string_view to_string(PersistKind k);

struct PersistEvent {
  PersistKind kind{};
  std::uint64_t batch = 0;
  std::uint32_t table = 0;
  RowIndex row = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> chunk;
  std::uint64_t expected = 0;
  // Address range in the store's flat address map, for trace export.
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

/// Applies one event to an image. The store and crash replay share this.
void apply_event(PersistedImage &img, const PersistEvent &ev);

class PersistentStore {
public:
  struct Options {
    /// Keep every event so crash() can replay any prefix.
    bool journal = false;
    /// When set, the persisted partition is rewritten here after each event.
    std::filesystem::path file;
  };

  PersistentStore(ModelConfig cfg, std::vector<EmbeddingTable<float>> tables);
  PersistentStore(ModelConfig cfg, std::vector<EmbeddingTable<float>> tables,
                  Options opts);

  void configure(const Mmio &regs);
  /// Per-batch MMIO write of the upcoming batch's indices.
  void register_batch(const SparseBatch &batch);
  const Mmio &mmio() const { return mmio_; }

  void log_embeddings(const SparseBatch &batch);
  void update_in_place(const EmbeddingGradient<float> &grad, float lr);
  void log_mlp_chunk(std::span<const std::uint8_t> bytes);
  void commit();

  CrashImage crash(std::uint64_t persist_event_index) const;
  std::uint64_t persist_events() const { return event_count_; }
  const std::vector<PersistEvent> &journal() const { return journal_; }

  const PersistedImage &persisted() const { return image_; }
  const ModelConfig &config() const { return cfg_; }

  bool embedding_flag() const;
  std::uint64_t embedding_batch() const;
  bool mlp_flag() const { return image_.mlp_log && image_.mlp_log->flag; }
  std::uint64_t mlp_received() const {
    return image_.mlp_log ? image_.mlp_log->bytes.size() : 0;
  }
  std::uint64_t mlp_expected() const { return mmio_.mlp_size; }
  bool mlp_in_progress() const { return image_.mlp_log && !image_.mlp_log->flag; }
  /// Batch of the newest complete MLP log, if any.
  std::optional<std::uint64_t> mlp_batch() const;

  /// event#,kind,offset,length per line.
  void export_trace(std::ostream &os) const;

private:
  void persist(PersistEvent ev);
  std::uint64_t data_offset(std::uint32_t table, RowIndex row) const;

  ModelConfig cfg_;
  Options opts_;
  Mmio mmio_;
  bool configured_ = false;
  PersistedImage image_;
  PersistedImage initial_;
  std::vector<PersistEvent> journal_;
  std::uint64_t event_count_ = 0;
  std::uint64_t log_cursor_ = 0;
};

/// Byte length of the serialized MLP parameters for `cfg`.
inline std::uint64_t mlp_log_size(const ModelConfig &cfg) {
  return cfg.mlp_bytes();
}

struct Recovered {
  std::vector<EmbeddingTable<float>> tables;
  /// Empty when no MLP log was ever committed; the caller restarts from
  /// its deterministic initial parameters.
  std::optional<std::pair<Mlp<float>, Mlp<float>>> mlp;
  std::uint64_t resume_batch = 0;
  bool initial = false;
};

/// Rolls the data region back to the newest batch boundary for which a
/// complete MLP log exists, undoing every retained embedding log from the
/// newest down to that batch.
Recovered recover(const CrashImage &image, const ModelConfig &cfg);

void write_image(std::ostream &os, const ModelConfig &cfg,
                 const PersistedImage &img);
PersistedImage read_image(std::istream &is, const ModelConfig &cfg);

} // namespace cxlsim
