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
#include "cxlsim/workload.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace cxlsim;

TEST_SUITE("workload") {

TEST_CASE("built-in model table") {
  const auto rm1 = builtin_config("RM1");
  CHECK(rm1.feature_dim == 32);
  CHECK(rm1.num_tables == 20);
  CHECK(rm1.lookups_per_table == 80);
  CHECK(rm1.bottom_mlp_layers == std::vector<std::size_t>{13, 8192, 2048, 32});
  CHECK(rm1.top_mlp_layers == std::vector<std::size_t>{256, 64, 1});

  const auto rm4 = builtin_config("RM4");
  CHECK(rm4.feature_dim == 16);
  CHECK(rm4.num_tables == 52);
  CHECK(rm4.lookups_per_table == 1);
  CHECK(rm4.bottom_mlp_layers ==
        std::vector<std::size_t>{13, 16384, 2048, 512, 16});

  const auto rm2 = builtin_config("RM2");
  CHECK(rm2.num_tables == 4 * rm1.num_tables);
  CHECK(rm2.bottom_mlp_layers.back() == rm2.feature_dim);

  const auto rm3 = builtin_config("RM3");
  CHECK(rm3.lookups_per_table == 20);
  CHECK(rm3.bottom_mlp_layers == std::vector<std::size_t>{13, 10240, 4096, 32});

  for (const auto &name : builtin_config_names()) {
    const auto c = builtin_config(name);
    CHECK(c.rows_per_table > 0);
    CHECK(c.bottom_mlp_layers.front() == c.num_dense);
  }
  CHECK_THROWS_AS(builtin_config("RM5"), ConfigError);
}

TEST_CASE("model validation") {
  auto c = builtin_config("TOY");
  c.bottom_mlp_layers.back() = c.feature_dim + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = builtin_config("TOY");
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = builtin_config("TOY");
  c.top_mlp_layers.back() = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("batches are deterministic and in range") {
  const auto cfg = builtin_config("RM1");
  const WorkloadGenerator g(cfg, 42, {1.05, 0.8});
  const auto a = g.sequence(5);
  const auto b = g.sequence(5);
  CHECK(a == b);
  CHECK(gen_batch(cfg, 42, 3, &a[2], 0.8) == a[3]);
  CHECK_FALSE(WorkloadGenerator(cfg, 43, {1.05, 0.8}).sequence(1) == g.sequence(1));
  for (const auto &batch : a) {
    REQUIRE(batch.samples.size() == cfg.batch_size);
    for (const auto &s : batch.samples) {
      CHECK(s.dense.size() == cfg.num_dense);
      CHECK((s.label == 0 || s.label == 1));
      REQUIRE(s.indices.size() == cfg.num_tables);
      for (const auto &idx : s.indices) {
        CHECK(idx.size() == cfg.lookups_per_table);
        for (auto i : idx)
          CHECK(i < cfg.rows_per_table);
      }
    }
  }
}

TEST_CASE("reuse 0 ignores prev, reuse 1 stays inside prev") {
  const auto cfg = builtin_config("TOY");
  const auto first = gen_batch(cfg, 1, 0, nullptr, 0.0);
  const auto other = gen_batch(cfg, 9, 0, nullptr, 0.0);
  CHECK(gen_batch(cfg, 1, 1, &first, 0.0) == gen_batch(cfg, 1, 1, &other, 0.0));

  const auto next = gen_batch(cfg, 1, 1, &first, 1.0);
  for (std::size_t t = 0; t < cfg.num_tables; ++t) {
    const auto prev = first.table_indices(t);
    const std::set<RowIndex> prev_set(prev.begin(), prev.end());
    for (auto i : next.table_indices(t))
      CHECK(prev_set.count(i) == 1);
  }
  CHECK(overlap_fraction(first, next) == doctest::Approx(1.0));
}

TEST_CASE("reuse without a previous batch is treated as zero") {
  const auto cfg = builtin_config("TOY");
  CHECK(gen_batch(cfg, 5, 0, nullptr, 0.8) == gen_batch(cfg, 5, 0, nullptr, 0.0));
}

TEST_CASE("overlap_fraction fixtures") {
  const auto cfg = builtin_config("TOY");
  const auto a = gen_batch(cfg, 3, 0, nullptr, 0.0);
  CHECK(overlap_fraction(a, a) == 1.0);

  SparseBatch lo, hi, half;
  for (auto *b : {&lo, &hi, &half}) {
    b->samples.resize(1);
    b->samples[0].indices.resize(2);
  }
  for (std::size_t t = 0; t < 2; ++t) {
    lo.samples[0].indices[t] = {0, 1, 2, 3};
    hi.samples[0].indices[t] = {10, 11, 12, 13};
    half.samples[0].indices[t] = {0, 1, 12, 13};
  }
  CHECK(overlap_fraction(lo, hi) == 0.0);
  CHECK(overlap_fraction(lo, half) == 0.5);
}

TEST_CASE("property: measured overlap tracks the reuse rate") {
  auto cfg = builtin_config("RM1");
  cfg.num_tables = 4;
  cfg.batch_size = 16;
  cfg.lookups_per_table = 20;
  for (double reuse : {0.2, 0.5, 0.8}) {
    const auto seq = WorkloadGenerator(cfg, 42, {1.05, reuse}).sequence(600);
    double sum = 0.0;
    for (std::size_t i = 1; i < seq.size(); ++i)
      sum += overlap_fraction(seq[i - 1], seq[i]);
    const double mean = sum / static_cast<double>(seq.size() - 1);
    CHECK(mean >= reuse - 0.05);
    CHECK(mean <= reuse + 0.05);
  }
}

TEST_CASE("Zipf sampler favours low ranks and stays in range") {
  const ZipfSampler z(1000, 1.05);
  std::mt19937_64 rng(1);
  std::vector<int> counts(1000);
  for (int i = 0; i < 20000; ++i) {
    const auto r = z(rng);
    REQUIRE(r < 1000);
    ++counts[r];
  }
  CHECK(counts[0] > counts[10]);
  CHECK(counts[10] > counts[500]);
}

TEST_CASE("trace round trip") {
  const auto cfg = builtin_config("TOY");
  const auto seq = WorkloadGenerator(cfg, 4).sequence(3);
  std::stringstream ss;
  write_trace(ss, seq);
  CHECK(read_trace(ss, cfg) == seq);
  std::stringstream bad("0 1 0.5 99999\n");
  CHECK_THROWS(read_trace(bad, cfg));
}

} // TEST_SUITE
