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
#include "cxlsim/engine.hpp"
#include "cxlsim/errors.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <sstream>

using namespace cxlsim;

namespace {

EmbeddingTable<float> table2x2(float a, float b, float c, float d) {
  EmbeddingTable<float> t{RowMajorMatrix<float>(2, 2)};
  t.rows << a, b, c, d;
  return t;
}

std::vector<RowIndex> idx(std::initializer_list<RowIndex> l) { return l; }

} // namespace

TEST_SUITE("engine") {

TEST_CASE("lookup_reduce sums rows with multiplicity") {
  const auto t = table2x2(1, 2, 3, 4);
  auto i01 = idx({0, 1}), i011 = idx({0, 1, 1});
  CHECK(lookup_reduce(t, std::span<const RowIndex>(i01)) == Vector<float>{{4, 6}});
  CHECK(lookup_reduce(t, std::span<const RowIndex>(i011)) == Vector<float>{{7, 10}});
  CHECK(lookup_reduce(t, std::span<const RowIndex>()) == Vector<float>::Zero(2));
  auto bad = idx({2});
  CHECK_THROWS_AS(lookup_reduce(t, std::span<const RowIndex>(bad)), InvalidRequest);
}

TEST_CASE("apply_update is SGD on the touched rows only") {
  EmbeddingTable<float> t{RowMajorMatrix<float>(3, 2)};
  t.rows << 1, 2, 5, 6, 7, 8;
  const auto before = t;
  TableGradient<float> g{{0, Vector<float>{{0.5f, 0.5f}}}};
  apply_update(t, g, 0.1f);
  CHECK(t.rows(0, 0) == doctest::Approx(0.95f));
  CHECK(t.rows(0, 1) == doctest::Approx(1.95f));
  CHECK(t.rows.row(1) == before.rows.row(1));
  CHECK(t.rows.row(2) == before.rows.row(2));

  auto same = before;
  apply_update(same, g, 0.0f);
  CHECK(same == before);

  TableGradient<float> oob{{3, Vector<float>{{1.0f, 1.0f}}}};
  CHECK_THROWS_AS(apply_update(same, oob, 0.1f), InvalidRequest);
}

TEST_CASE("sequential updates match one update with the summed gradient") {
  EmbeddingTable<double> a{RowMajorMatrix<double>(2, 2)};
  a.rows << 1, 2, 3, 4;
  auto b = a;
  const Vector<double> g1{{0.25, -0.5}}, g2{{1.0, 0.75}};
  apply_update(a, TableGradient<double>{{1, g1}}, 0.1);
  apply_update(a, TableGradient<double>{{1, g2}}, 0.1);
  apply_update(b, TableGradient<double>{{1, g1 + g2}}, 0.1);
  CHECK((a.rows - b.rows).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("relaxed correction fixtures") {
  const auto t = table2x2(1, 0, 0, 1);
  const TableGradient<float> g{{0, Vector<float>{{1, 1}}}};
  auto next = idx({0, 1});
  const auto partial = lookup_reduce(t, std::span<const RowIndex>(next));
  const auto shared = shared_indices(std::span<const RowIndex>(next), g);
  const auto out = relaxed_correction(partial, g, shared, 0.1f);
  CHECK(out(0) == doctest::Approx(0.9f));
  CHECK(out(1) == doctest::Approx(0.9f));

  CHECK(relaxed_correction(partial, g, {}, 0.1f) == partial);

  auto dup = idx({0, 0, 1});
  const auto sh = shared_indices(std::span<const RowIndex>(dup), g);
  CHECK(sh == idx({0, 0}));
  const auto p2 = lookup_reduce(t, std::span<const RowIndex>(dup));
  const auto o2 = relaxed_correction(p2, g, sh, 0.1f);
  CHECK(o2(0) == doctest::Approx(1.8f));
  CHECK(o2(1) == doctest::Approx(0.8f));

  auto missing = idx({1});
  CHECK_THROWS_AS(relaxed_correction(p2, g, missing, 0.1f), InvalidRequest);
}

TEST_CASE("property: relaxed correction equals the post-update reduction") {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i)
    worst = std::max(worst, testing::relaxed_trial<double>(rng));
  CHECK(worst <= testing::kRelaxedExactTolerance);
}

TEST_CASE("property: float32 relaxed correction stays within rounding") {
  std::mt19937_64 rng(2025);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i)
    worst = std::max(worst, testing::relaxed_trial<float>(rng));
  CHECK(worst <= testing::kRelaxedTrialTolerance);
}

TEST_CASE("forward: zero parameters predict one half") {
  const auto cfg = testing::fd_config();
  auto m = init_model<double>(cfg, 1);
  for (auto *net : {&m.bottom, &m.top})
    for (auto &l : net->layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
  const auto batch = WorkloadGenerator(cfg, 3).sequence(1).front();
  const auto c = forward(cfg, m.bottom, m.top, batch, reduce_batch(m.tables, batch));
  CHECK(c.top_act.front().rows() ==
        static_cast<Eigen::Index>(cfg.feature_dim * (cfg.num_tables + 1)));
  for (Eigen::Index i = 0; i < c.prediction.size(); ++i)
    CHECK(c.prediction(i) == doctest::Approx(0.5));
}

TEST_CASE("forward: hand-evaluated 2-2-1 network") {
  ModelConfig cfg;
  cfg.name = "hand";
  cfg.feature_dim = 2;
  cfg.num_dense = 2;
  cfg.num_tables = 1;
  cfg.rows_per_table = 2;
  cfg.lookups_per_table = 1;
  cfg.bottom_mlp_layers = {2, 2};
  cfg.top_mlp_layers = {2, 1};
  cfg.batch_size = 1;
  auto m = init_model<double>(cfg, 1);
  m.bottom.layers[0].weight << 1, 0, 0, 1;
  m.bottom.layers[0].bias << 0, -1;
  m.tables[0].rows << 1, -2, 0, 0;
  m.top.layers[0].weight << 1, 1, 0, 0, 0, 0, 1, 1;
  m.top.layers[0].bias << 0, 0;
  m.top.layers[1].weight << 1, 1;
  m.top.layers[1].bias << -0.5;
  SparseBatch b;
  b.samples.push_back({{{0}}, {0.5f, 2.0f}, 1});
  const auto c = forward(cfg, m.bottom, m.top, b, reduce_batch(m.tables, b));
  // bottom [0.5, 1]; interaction [0.5, 1, 1, -2]; hidden [1.5, 0]; logit 1.
  CHECK(c.prediction(0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("backward: a perfect prediction has zero gradients") {
  const auto cfg = testing::fd_config();
  auto m = init_model<double>(cfg, 5);
  const auto batch = WorkloadGenerator(cfg, 5).sequence(1).front();
  auto c = forward(cfg, m.bottom, m.top, batch, reduce_batch(m.tables, batch));
  const auto g = backward(c, m.bottom, m.top, c.prediction);
  for (const auto &l : g.mlp.top.layers)
    CHECK(l.weight.cwiseAbs().maxCoeff() == 0.0);
  for (const auto &t : g.embedding.tables)
    for (const auto &[r, v] : t)
      CHECK(v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward: a doubly looked-up row gets twice the gradient") {
  const auto cfg = testing::fd_config();
  auto m = init_model<double>(cfg, 9);
  SparseBatch once, twice;
  once.samples.push_back({{{1, 2, 3}, {0, 0, 0}}, {0.3f, -0.2f}, 1});
  twice.samples.push_back({{{1, 1, 3}, {0, 0, 0}}, {0.3f, -0.2f}, 1});
  // Same reduced vectors for both so only the multiplicity differs.
  auto reduced = reduce_batch(m.tables, once);
  auto c1 = forward(cfg, m.bottom, m.top, once, reduced);
  auto c2 = forward(cfg, m.bottom, m.top, twice, reduced);
  const auto y = labels_of<double>(once);
  const auto g1 = backward(c1, m.bottom, m.top, y);
  const auto g2 = backward(c2, m.bottom, m.top, y);
  const Vector<double> a = g1.embedding.tables[0].at(1);
  const Vector<double> b = g2.embedding.tables[0].at(1);
  CHECK((b - 2.0 * a).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(g2.embedding.tables[0].count(2) == 0);
}

TEST_CASE("property: analytic gradients match central differences") {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed)
    worst = std::max(worst, testing::fd_gradient_error(seed));
  CHECK(worst <= 1e-4);
}

TEST_CASE("train_batch: determinism, lr 0 and loss decrease") {
  auto cfg = testing::fd_config();
  const auto batch = WorkloadGenerator(cfg, 2).sequence(1).front();
  auto a = init_model<float>(cfg, 3), b = init_model<float>(cfg, 3);
  train_batch(a, cfg, batch);
  train_batch(b, cfg, batch);
  CHECK(a == b);

  cfg.learning_rate = 0.0;
  auto c = init_model<float>(cfg, 3);
  const auto c0 = c;
  train_batch(c, cfg, batch);
  CHECK(c == c0);

  cfg.learning_rate = 0.01;
  auto d = init_model<double>(cfg, 3);
  const double before = batch_loss(d, cfg, batch);
  CHECK(train_batch(d, cfg, batch) == doctest::Approx(before));
  CHECK(batch_loss(d, cfg, batch) < before);
}

TEST_CASE("MLP serialization and snapshots round trip") {
  const auto cfg = builtin_config("TOY");
  const auto m = init_model<float>(cfg, 4);
  const auto bytes = serialize_mlp(m.bottom, m.top);
  CHECK(bytes.size() == cfg.mlp_bytes());
  const auto [bottom, top] = deserialize_mlp(cfg, bytes);
  CHECK(bottom == m.bottom);
  CHECK(top == m.top);
  CHECK_THROWS(deserialize_mlp(cfg, std::span(bytes).first(bytes.size() - 4)));

  std::stringstream ss;
  write_snapshot(ss, cfg, m);
  const std::string raw = ss.str();
  CHECK(raw.substr(0, 8) == "TCXLSNAP");
  CHECK(read_snapshot(ss, cfg) == m);

  std::stringstream tables_only;
  write_snapshot(tables_only, cfg, m, kSnapshotTables);
  std::uint32_t sections = 0;
  const auto t = read_snapshot(tables_only, cfg, &sections);
  CHECK(sections == kSnapshotTables);
  CHECK(t.tables == m.tables);

  std::stringstream wrong(raw);
  auto other = cfg;
  other.learning_rate = 0.5;
  CHECK_THROWS(read_snapshot(wrong, other));
}

TEST_CASE("max_relative_diff") {
  const auto cfg = builtin_config("TOY");
  auto a = init_model<float>(cfg, 1);
  auto b = a;
  CHECK(max_relative_diff(a, b) == 0.0);
  b.top.layers[0].bias(0) += 0.5f;
  CHECK(max_relative_diff(a, b) > 0.1);
  CHECK(max_relative_diff(a, b, false) == 0.0);
}

} // TEST_SUITE
