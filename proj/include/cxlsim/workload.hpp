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

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cxlsim {

using RowIndex = std::uint32_t;

/// Shape of one recommendation model. `bottom_mlp_layers` lists every width
/// including the dense input; `top_mlp_layers` lists output widths only, the
/// top input being the concatenated interaction vector.
struct ModelConfig {
  std::string name;
  std::size_t feature_dim = 0;
  std::size_t num_dense = 0;
  std::size_t num_tables = 0;
  std::size_t rows_per_table = 10'000;
  std::size_t lookups_per_table = 0;
  std::vector<std::size_t> bottom_mlp_layers;
  std::vector<std::size_t> top_mlp_layers;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;

  void validate() const;
  std::size_t interaction_width() const {
    return feature_dim * (num_tables + 1);
  }
  std::size_t mlp_parameter_count() const;
  std::uint64_t mlp_bytes() const { return 4 * mlp_parameter_count(); }
  std::uint64_t row_bytes() const { return 4 * feature_dim; }
  /// Stable 64-bit digest of every field; stamped into snapshots.
  std::uint64_t hash() const;
};

/// RM1..RM4 from the model table, plus "TOY" (4 tables x 64 rows, dim 8)
/// used by the crash-recovery suite.
ModelConfig builtin_config(const std::string &name);
std::vector<std::string> builtin_config_names();

struct Sample {
  std::vector<std::vector<RowIndex>> indices; // [table][lookup]
  std::vector<float> dense;
  int label = 0;
  bool operator==(const Sample &) const = default;
};

/// One training batch: `batch_size` samples, each with `lookups_per_table`
/// indices into every table.
struct SparseBatch {
  std::uint64_t batch_index = 0;
  std::vector<Sample> samples;

  std::size_t num_tables() const {
    return samples.empty() ? 0 : samples.front().indices.size();
  }
  /// All indices of table `t` across samples, in sample order.
  std::vector<RowIndex> table_indices(std::size_t t) const;
  bool operator==(const SparseBatch &) const = default;
};

struct WorkloadParams {
  double zipf_exponent = 1.05;
  double reuse_rate = 0.8;
};

/// Zipf over row ranks, rank 0 hottest. Inverse-CDF sampling.
class ZipfSampler {
public:
  ZipfSampler(std::size_t rows, double exponent);
  RowIndex operator()(std::mt19937_64 &rng) const;
  std::size_t rows() const { return cdf_.size(); }

private:
  std::vector<double> cdf_;
};

/// Uniform [0,1) from the top 53 bits; independent of the standard
/// library's distribution implementation.
double unit_uniform(std::mt19937_64 &rng);

class WorkloadGenerator {
public:
  WorkloadGenerator(ModelConfig cfg, std::uint64_t seed,
                    WorkloadParams params = {});

  SparseBatch generate(std::uint64_t batch_index,
                       const SparseBatch *prev) const;
  /// Batches 0..n-1, each reusing from its predecessor.
  std::vector<SparseBatch> sequence(std::size_t n) const;

  const ModelConfig &config() const { return cfg_; }
  const WorkloadParams &params() const { return params_; }

private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  WorkloadParams params_;
  ZipfSampler zipf_;
};

SparseBatch gen_batch(const ModelConfig &cfg, std::uint64_t seed,
                      std::uint64_t batch_index, const SparseBatch *prev,
                      double reuse_rate, double zipf_exponent = 1.05);

/// Fraction of b's lookups whose row also appears in a, per table, averaged.
double overlap_fraction(const SparseBatch &a, const SparseBatch &b);

/// One line per sample:
///   <batch> <label> <dense,...> <table0 idx,...>|<table1 idx,...>|...
void write_trace(std::ostream &os, std::span<const SparseBatch> batches);
std::vector<SparseBatch> read_trace(std::istream &is, const ModelConfig &cfg);

} // namespace cxlsim
