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
#include "cxlsim/store.hpp"

#include <doctest.h>

#include <sstream>

using namespace cxlsim;

namespace {

struct Harness {
  ModelConfig cfg = builtin_config("TOY");
  Model<float> model = init_model<float>(cfg, 17);
  PersistentStore store{cfg, model.tables, {true, {}}};
  std::vector<Model<float>> boundaries; // [b] = state at the start of batch b
  std::vector<SparseBatch> batches = WorkloadGenerator(cfg, 5).sequence(4);
  std::size_t chunks = 4;

  Harness() { store.configure({cfg.feature_dim, cfg.learning_rate, 0, cfg.mlp_bytes(), 0, {}}); }

  void log_phase(const SparseBatch &b) {
    boundaries.push_back(model);
    store.register_batch(b);
    store.log_embeddings(b);
    const auto bytes = serialize_mlp(model.bottom, model.top);
    const std::size_t step = (bytes.size() + chunks - 1) / chunks;
    for (std::size_t off = 0; off < bytes.size(); off += step)
      store.log_mlp_chunk(std::span(bytes).subspan(off, std::min(step, bytes.size() - off)));
  }

  void update_phase(const SparseBatch &b) {
    const auto lr = static_cast<float>(cfg.learning_rate);
    const auto reduced = reduce_batch(model.tables, b);
    const auto c = forward(cfg, model.bottom, model.top, b, reduced);
    const auto g = backward(c, model.bottom, model.top, labels_of<float>(b));
    store.update_in_place(g.embedding, lr);
    for (std::size_t t = 0; t < model.tables.size(); ++t)
      apply_update(model.tables[t], g.embedding.tables[t], lr);
    sgd_step(model.bottom, g.mlp.bottom, lr);
    sgd_step(model.top, g.mlp.top, lr);
  }

  void batch(std::size_t i) {
    log_phase(batches[i]);
    update_phase(batches[i]);
    store.commit();
  }
};

SparseBatch rows_batch(const ModelConfig &cfg, std::vector<RowIndex> rows) {
  SparseBatch b;
  Sample s;
  s.dense.assign(cfg.num_dense, 0.1f);
  s.indices.assign(cfg.num_tables, {});
  s.indices[0] = std::move(rows);
  b.samples.push_back(s);
  return b;
}

} // namespace

TEST_SUITE("store") {

TEST_CASE("embedding log: one persist per row copy, then the flag") {
  Harness h;
  const auto b = rows_batch(h.cfg, {0, 1, 1});
  h.store.register_batch(b);
  h.store.log_embeddings(b);
  REQUIRE(h.store.persist_events() == 3);
  const auto &log = h.store.persisted().embedding_logs.back();
  CHECK(log.entries.size() == 2);
  CHECK(log.flag);
  CHECK(h.store.embedding_flag());

  const auto img = h.store.crash(1);
  REQUIRE(img.embedding_logs.size() == 1);
  CHECK(img.embedding_logs[0].entries.size() == 1);
  CHECK_FALSE(img.embedding_logs[0].flag);
}

TEST_CASE("update before the embedding flag is a protocol violation") {
  Harness h;
  EmbeddingGradient<float> g;
  g.tables.resize(h.cfg.num_tables);
  CHECK_THROWS_AS(h.store.update_in_place(g, 0.1f), ProtocolViolation);
  CHECK_THROWS_AS(h.store.commit(), ProtocolViolation);
  PersistentStore raw(h.cfg, h.model.tables);
  CHECK_THROWS_AS(raw.register_batch(h.batches[0]), ProtocolViolation);
}

TEST_CASE("updating a row outside the log is rejected") {
  Harness h;
  const auto b = rows_batch(h.cfg, {0});
  h.store.register_batch(b);
  h.store.log_embeddings(b);
  EmbeddingGradient<float> g;
  g.tables.resize(h.cfg.num_tables);
  g.tables[0][5] = Vector<float>::Ones(static_cast<Eigen::Index>(h.cfg.feature_dim));
  CHECK_THROWS_AS(h.store.update_in_place(g, 0.1f), ProtocolViolation);
}

TEST_CASE("MLP log: flag only after the last chunk") {
  Harness h;
  h.store.register_batch(h.batches[0]);
  const auto bytes = serialize_mlp(h.model.bottom, h.model.top);
  const std::size_t quarter = bytes.size() / 4;
  REQUIRE(bytes.size() % 4 == 0);
  const auto before = h.store.persist_events();
  for (int k = 0; k < 4; ++k) {
    CHECK_FALSE(h.store.mlp_flag());
    h.store.log_mlp_chunk(std::span(bytes).subspan(k * quarter, quarter));
  }
  CHECK(h.store.mlp_flag());
  CHECK(h.store.mlp_received() == h.store.mlp_expected());
  const auto img = h.store.crash(before + 2);
  REQUIRE(img.mlp_log);
  CHECK(img.mlp_log->bytes.size() == 2 * quarter);
  CHECK_FALSE(img.mlp_log->flag);
  CHECK_THROWS_AS(h.store.log_mlp_chunk(std::span(bytes).first(4)), ProtocolViolation);
}

TEST_CASE("commit replaces the previous checkpoint") {
  Harness h;
  h.batch(0);
  REQUIRE(h.store.persisted().prev_checkpoint);
  CHECK(h.store.persisted().prev_checkpoint->batch == 0);
  h.batch(1);
  CHECK(h.store.persisted().prev_checkpoint->batch == 1);
  CHECK(h.store.persisted().embedding_logs.front().batch == 1);
  CHECK(h.store.persisted().tables == h.model.tables);
}

TEST_CASE("commit with the MLP flag unset is rejected") {
  Harness h;
  h.store.register_batch(h.batches[0]);
  h.store.log_embeddings(h.batches[0]);
  CHECK_THROWS_AS(h.store.commit(), ProtocolViolation);
}

TEST_CASE("crash before the commit lands: recover picks the newer log") {
  Harness h;
  h.batch(0);
  h.log_phase(h.batches[1]);
  h.update_phase(h.batches[1]);
  const auto img = h.store.crash(h.store.persist_events());
  REQUIRE(img.prev_checkpoint);
  REQUIRE(img.mlp_log);
  CHECK(img.mlp_log->flag);
  const auto r = recover(img, h.cfg);
  CHECK(r.resume_batch == 1);
  CHECK(r.tables == h.boundaries[1].tables);
  REQUIRE(r.mlp);
  CHECK(r.mlp->first == h.boundaries[1].bottom);
}

TEST_CASE("crash during the update restores the pre-batch tables exactly") {
  Harness h;
  h.batch(0);
  h.log_phase(h.batches[1]);
  const auto before_update = h.store.persist_events();
  h.update_phase(h.batches[1]);
  for (auto k = before_update; k < h.store.persist_events(); ++k) {
    const auto r = recover(h.store.crash(k), h.cfg);
    CHECK(r.resume_batch == 1);
    CHECK(r.tables == h.boundaries[1].tables);
  }
}

TEST_CASE("crash during the embedding log falls back a batch") {
  Harness h;
  h.batch(0);
  const auto start = h.store.persist_events();
  h.store.register_batch(h.batches[1]);
  h.store.log_embeddings(h.batches[1]);
  for (auto k = start; k < h.store.persist_events(); ++k) {
    const auto r = recover(h.store.crash(k), h.cfg);
    CHECK(r.resume_batch == 0);
    CHECK(r.tables == h.boundaries[0].tables);
    CHECK_FALSE(r.initial);
  }
  const auto r0 = recover(h.store.crash(0), h.cfg);
  CHECK(r0.initial);
  CHECK(r0.tables == h.boundaries[0].tables);
}

TEST_CASE("property: every crash point recovers to a batch boundary") {
  Harness h;
  for (std::size_t b = 0; b < h.batches.size(); ++b)
    h.batch(b);
  h.boundaries.push_back(h.model);
  bool committed = false;
  for (std::uint64_t k = 0; k <= h.store.persist_events(); ++k) {
    const auto img = h.store.crash(k);
    // Flag soundness.
    if (img.mlp_log && img.mlp_log->flag) {
      CHECK(img.mlp_log->bytes.size() == img.mlp_log->expected);
      CHECK_NOTHROW(deserialize_mlp(h.cfg, img.mlp_log->bytes));
    }
    for (const auto &log : img.embedding_logs)
      if (log.flag)
        for (const auto &e : log.entries)
          for (std::size_t d = 0; d < e.values.size(); ++d)
            CHECK(e.values[d] ==
                  h.boundaries[log.batch].tables[e.table].rows(e.row, static_cast<Eigen::Index>(d)));
    // At least one complete checkpoint once a batch has committed.
    committed = committed || img.prev_checkpoint.has_value();
    if (committed)
      CHECK((img.prev_checkpoint || (img.mlp_log && img.mlp_log->flag)));

    const auto r = recover(img, h.cfg);
    REQUIRE(r.resume_batch < h.boundaries.size());
    CHECK(r.tables == h.boundaries[r.resume_batch].tables);
    if (r.mlp) {
      CHECK(r.mlp->first == h.boundaries[r.resume_batch].bottom);
      CHECK(r.mlp->second == h.boundaries[r.resume_batch].top);
    }
  }
}

TEST_CASE("persisted image file round trip") {
  Harness h;
  h.batch(0);
  h.log_phase(h.batches[1]);
  std::stringstream ss;
  write_image(ss, h.cfg, h.store.persisted());
  CHECK(read_image(ss, h.cfg) == h.store.persisted());
}

TEST_CASE("trace export lists one line per persist event") {
  Harness h;
  h.batch(0);
  std::stringstream ss;
  h.store.export_trace(ss);
  std::size_t lines = 0;
  for (std::string l; std::getline(ss, l);)
    ++lines;
  CHECK(lines == h.store.persist_events());
}

TEST_CASE("configure rejects mismatched registers") {
  Harness h;
  PersistentStore s(h.cfg, h.model.tables);
  CHECK_THROWS_AS(s.configure({h.cfg.feature_dim + 1, 0.1, 0, h.cfg.mlp_bytes(), 0, {}}),
                  InvalidRequest);
  CHECK_THROWS_AS(s.configure({h.cfg.feature_dim, 0.1, 0, 12, 0, {}}), InvalidRequest);
}

} // TEST_SUITE
