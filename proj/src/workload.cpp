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
#include "cxlsim/workload.hpp"

#include "cxlsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

namespace cxlsim {

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string join(const std::vector<std::size_t> &v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i)
      out += '-';
    out += std::to_string(v[i]);
  }
  return out;
}

std::mt19937_64 batch_rng(std::uint64_t seed, std::uint64_t batch_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(batch_index),
                    static_cast<std::uint32_t>(batch_index >> 32),
                    0x5eedu};
  return std::mt19937_64(seq);
}

std::uint64_t bounded(std::mt19937_64 &rng, std::uint64_t n) {
  return static_cast<std::uint64_t>(unit_uniform(rng) * static_cast<double>(n));
}

} // namespace

void ModelConfig::validate() const {
  if (feature_dim == 0 || num_dense == 0 || num_tables == 0 ||
      rows_per_table == 0 || lookups_per_table == 0 || batch_size == 0)
    throw ConfigError(name + ": all counts must be positive");
  if (bottom_mlp_layers.size() < 2)
    throw ConfigError(name + ": bottom MLP needs an input and an output width");
  if (bottom_mlp_layers.front() != num_dense)
    throw ConfigError(name + ": bottom MLP must start at num_dense");
  if (bottom_mlp_layers.back() != feature_dim)
    throw ConfigError(name + ": bottom MLP must end at feature_dim");
  if (top_mlp_layers.empty() || top_mlp_layers.back() != 1)
    throw ConfigError(name + ": top MLP must end in a single output");
  for (auto w : bottom_mlp_layers)
    if (w == 0)
      throw ConfigError(name + ": zero-width bottom layer");
  for (auto w : top_mlp_layers)
    if (w == 0)
      throw ConfigError(name + ": zero-width top layer");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    throw ConfigError(name + ": learning rate must be finite and >= 0");
  if (rows_per_table > (std::size_t{1} << 31))
    throw ConfigError(name + ": rows_per_table too large");
}

std::size_t ModelConfig::mlp_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < bottom_mlp_layers.size(); ++i)
    n += bottom_mlp_layers[i] * bottom_mlp_layers[i + 1] +
         bottom_mlp_layers[i + 1];
  std::size_t in = interaction_width();
  for (auto out : top_mlp_layers) {
    n += in * out + out;
    in = out;
  }
  return n;
}

std::uint64_t ModelConfig::hash() const {
  return fnv1a(fmt::format("{}|{}|{}|{}|{}|{}|{}|{}|{:.17g}|{}", name,
                           feature_dim, num_dense, num_tables, rows_per_table,
                           lookups_per_table, join(bottom_mlp_layers),
                           join(top_mlp_layers), learning_rate, batch_size));
}

ModelConfig builtin_config(const std::string &name) {
  ModelConfig c;
  c.name = name;
  c.num_dense = 13;
  if (name == "RM1") {
    c.feature_dim = 32;
    c.num_tables = 20;
    c.lookups_per_table = 80;
    c.bottom_mlp_layers = {13, 8192, 2048, 32};
    c.top_mlp_layers = {256, 64, 1};
  } else if (name == "RM2") {
    // The bottom MLP output feeds the interaction, so it equals feature_dim.
    c.feature_dim = 32;
    c.num_tables = 80;
    c.lookups_per_table = 80;
    c.bottom_mlp_layers = {13, 8192, 2048, 32};
    c.top_mlp_layers = {512, 128, 1};
  } else if (name == "RM3") {
    c.feature_dim = 32;
    c.num_tables = 20;
    c.lookups_per_table = 20;
    c.bottom_mlp_layers = {13, 10240, 4096, 32};
    c.top_mlp_layers = {512, 128, 1};
  } else if (name == "RM4") {
    c.feature_dim = 16;
    c.num_tables = 52;
    c.lookups_per_table = 1;
    c.bottom_mlp_layers = {13, 16384, 2048, 512, 16};
    c.top_mlp_layers = {512, 128, 1};
  } else if (name == "TOY") {
    c.feature_dim = 8;
    c.num_dense = 4;
    c.num_tables = 4;
    c.rows_per_table = 64;
    c.lookups_per_table = 4;
    c.bottom_mlp_layers = {4, 8, 8};
    c.top_mlp_layers = {8, 1};
    c.batch_size = 4;
  } else {
    throw ConfigError("unknown model '" + name + "'");
  }
  c.validate();
  return c;
}

std::vector<std::string> builtin_config_names() {
  return {"RM1", "RM2", "RM3", "RM4", "TOY"};
}

std::vector<RowIndex> SparseBatch::table_indices(std::size_t t) const {
  std::vector<RowIndex> out;
  for (const auto &s : samples)
    out.insert(out.end(), s.indices.at(t).begin(), s.indices.at(t).end());
  return out;
}

double unit_uniform(std::mt19937_64 &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

ZipfSampler::ZipfSampler(std::size_t rows, double exponent) : cdf_(rows) {
  if (rows == 0)
    throw ConfigError("zipf over zero rows");
  double acc = 0.0;
  for (std::size_t k = 0; k < rows; ++k) {
    acc += 1.0 / std::pow(static_cast<double>(k + 1), exponent);
    cdf_[k] = acc;
  }
  for (auto &v : cdf_)
    v /= acc;
}

RowIndex ZipfSampler::operator()(std::mt19937_64 &rng) const {
  const double u = unit_uniform(rng);
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end())
    --it;
  return static_cast<RowIndex>(it - cdf_.begin());
}

WorkloadGenerator::WorkloadGenerator(ModelConfig cfg, std::uint64_t seed,
                                     WorkloadParams params)
    : cfg_(std::move(cfg)), seed_(seed), params_(params),
      zipf_(cfg_.rows_per_table, params.zipf_exponent) {
  cfg_.validate();
  if (!(params_.reuse_rate >= 0.0 && params_.reuse_rate <= 1.0))
    throw ConfigError("reuse_rate must lie in [0, 1]");
}

SparseBatch WorkloadGenerator::generate(std::uint64_t batch_index,
                                        const SparseBatch *prev) const {
  auto rng = batch_rng(seed_, batch_index);
  const std::size_t per_table = cfg_.batch_size * cfg_.lookups_per_table;
  const double reuse = prev ? params_.reuse_rate : 0.0;
  const auto n_reuse =
      static_cast<std::size_t>(std::llround(reuse * static_cast<double>(per_table)));

  SparseBatch batch;
  batch.batch_index = batch_index;
  batch.samples.resize(cfg_.batch_size);
  for (auto &s : batch.samples)
    s.indices.resize(cfg_.num_tables);

  std::vector<RowIndex> list;
  for (std::size_t t = 0; t < cfg_.num_tables; ++t) {
    list.clear();
    std::vector<RowIndex> prev_set;
    if (prev && n_reuse > 0) {
      prev_set = prev->table_indices(t);
      std::sort(prev_set.begin(), prev_set.end());
      prev_set.erase(std::unique(prev_set.begin(), prev_set.end()),
                     prev_set.end());
    }
    if (!prev_set.empty())
      for (std::size_t i = 0; i < n_reuse; ++i)
        list.push_back(prev_set[bounded(rng, prev_set.size())]);

    // Fresh draws avoid the reused set so measured overlap tracks reuse_rate.
    std::vector<RowIndex> complement;
    auto in_prev = [&](RowIndex r) {
      return std::binary_search(prev_set.begin(), prev_set.end(), r);
    };
    while (list.size() < per_table) {
      RowIndex r = zipf_(rng);
      int tries = 0;
      while (!prev_set.empty() && in_prev(r) && ++tries < 64)
        r = zipf_(rng);
      if (!prev_set.empty() && in_prev(r)) {
        if (complement.empty())
          for (RowIndex c = 0; c < cfg_.rows_per_table; ++c)
            if (!in_prev(c))
              complement.push_back(c);
        if (!complement.empty())
          r = complement[bounded(rng, complement.size())];
      }
      list.push_back(r);
    }
    for (std::size_t i = list.size(); i > 1; --i)
      std::swap(list[i - 1], list[bounded(rng, i)]);
    for (std::size_t s = 0; s < cfg_.batch_size; ++s)
      batch.samples[s].indices[t].assign(
          list.begin() + static_cast<std::ptrdiff_t>(s * cfg_.lookups_per_table),
          list.begin() +
              static_cast<std::ptrdiff_t>((s + 1) * cfg_.lookups_per_table));
  }
  for (auto &s : batch.samples) {
    s.dense.resize(cfg_.num_dense);
    for (auto &v : s.dense)
      v = static_cast<float>(unit_uniform(rng));
    s.label = unit_uniform(rng) < 0.5 ? 1 : 0;
  }
  return batch;
}

std::vector<SparseBatch> WorkloadGenerator::sequence(std::size_t n) const {
  std::vector<SparseBatch> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(generate(i, i ? &out.back() : nullptr));
  return out;
}

SparseBatch gen_batch(const ModelConfig &cfg, std::uint64_t seed,
                      std::uint64_t batch_index, const SparseBatch *prev,
                      double reuse_rate, double zipf_exponent) {
  return WorkloadGenerator(cfg, seed, {zipf_exponent, reuse_rate})
      .generate(batch_index, prev);
}

double overlap_fraction(const SparseBatch &a, const SparseBatch &b) {
  const std::size_t tables = b.num_tables();
  if (tables == 0)
    return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < tables; ++t) {
    const auto av = a.table_indices(t);
    const std::unordered_set<RowIndex> aset(av.begin(), av.end());
    const auto bv = b.table_indices(t);
    if (bv.empty())
      continue;
    std::size_t hit = 0;
    for (auto r : bv)
      hit += aset.count(r);
    sum += static_cast<double>(hit) / static_cast<double>(bv.size());
  }
  return sum / static_cast<double>(tables);
}

void write_trace(std::ostream &os, std::span<const SparseBatch> batches) {
  for (const auto &b : batches) {
    for (const auto &s : b.samples) {
      os << b.batch_index << ' ' << s.label << ' ';
      for (std::size_t i = 0; i < s.dense.size(); ++i)
        os << (i ? "," : "") << fmt::format("{:.9g}", s.dense[i]);
      os << ' ';
      for (std::size_t t = 0; t < s.indices.size(); ++t) {
        if (t)
          os << '|';
        for (std::size_t i = 0; i < s.indices[t].size(); ++i)
          os << (i ? "," : "") << s.indices[t][i];
      }
      os << '\n';
    }
  }
}

std::vector<SparseBatch> read_trace(std::istream &is, const ModelConfig &cfg) {
  std::vector<SparseBatch> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::uint64_t bi = 0;
    Sample s;
    std::string dense, idx;
    if (!(ls >> bi >> s.label >> dense >> idx))
      throw ConfigError(fmt::format("trace line {}: malformed", lineno));
    std::istringstream ds(dense);
    for (std::string tok; std::getline(ds, tok, ',');)
      s.dense.push_back(std::stof(tok));
    std::istringstream ts(idx);
    for (std::string table; std::getline(ts, table, '|');) {
      auto &list = s.indices.emplace_back();
      std::istringstream rs(table);
      for (std::string tok; std::getline(rs, tok, ',');) {
        const auto r = std::stoul(tok);
        if (r >= cfg.rows_per_table)
          throw ConfigError(fmt::format("trace line {}: index out of range", lineno));
        list.push_back(static_cast<RowIndex>(r));
      }
    }
    if (s.dense.size() != cfg.num_dense || s.indices.size() != cfg.num_tables)
      throw ConfigError(fmt::format("trace line {}: shape mismatch", lineno));
    if (out.empty() || out.back().batch_index != bi)
      out.push_back(SparseBatch{bi, {}});
    out.back().samples.push_back(std::move(s));
  }
  return out;
}

} // namespace cxlsim
