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

// Functional DLRM training: sum-pooled embedding lookups, bottom/top MLPs,
// concatenation interaction, BCE loss and plain SGD. Everything is templated
// on the scalar so gradient checks can run in double while the simulator
// trains in float.

#include "cxlsim/errors.hpp"
#include "cxlsim/workload.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <vector>

namespace cxlsim {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar> struct EmbeddingTable {
  RowMajorMatrix<Scalar> rows; // rows_per_table x feature_dim

  Eigen::Index num_rows() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
  bool operator==(const EmbeddingTable &o) const { return rows == o.rows; }
};

/// Row index -> gradient for one table. Ordered so updates apply in a
/// deterministic sequence.
template <typename Scalar>
using TableGradient = std::map<RowIndex, Vector<Scalar>>;

template <typename Scalar> struct EmbeddingGradient {
  std::vector<TableGradient<Scalar>> tables;
};

template <typename Scalar> struct Layer {
  Matrix<Scalar> weight; // out x in
  Vector<Scalar> bias;
  bool operator==(const Layer &o) const {
    return weight == o.weight && bias == o.bias;
  }
};

template <typename Scalar> struct Mlp {
  std::vector<Layer<Scalar>> layers;
  bool operator==(const Mlp &) const = default;
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto &l : layers)
      n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
};

/// Complete trainable state. Field order is the snapshot order.
template <typename Scalar> struct Model {
  std::vector<EmbeddingTable<Scalar>> tables;
  Mlp<Scalar> bottom;
  Mlp<Scalar> top;
  bool operator==(const Model &) const = default;
};

namespace detail {

inline void check_index(RowIndex i, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(i) >= rows)
    throw InvalidRequest("embedding index " + std::to_string(i) +
                         " out of range");
}

template <typename Scalar> Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

} // namespace detail

template <typename Scalar>
Vector<Scalar> lookup_reduce(const EmbeddingTable<Scalar> &table,
                             std::span<const RowIndex> indices) {
  Vector<Scalar> out = Vector<Scalar>::Zero(table.dim());
  for (RowIndex i : indices) {
    detail::check_index(i, table.num_rows());
    out += table.rows.row(i).transpose();
  }
  return out;
}

template <typename Scalar>
void apply_update(EmbeddingTable<Scalar> &table,
                  const TableGradient<Scalar> &grad, Scalar lr) {
  for (const auto &[i, g] : grad)
    detail::check_index(i, table.num_rows());
  for (const auto &[i, g] : grad)
    table.rows.row(i) -= lr * g.transpose();
}

/// Indices of the next lookup that the previous update touched, with the
/// multiplicity they have in `next`.
template <typename Scalar>
std::vector<RowIndex> shared_indices(std::span<const RowIndex> next,
                                     const TableGradient<Scalar> &grad) {
  std::vector<RowIndex> out;
  for (RowIndex i : next)
    if (grad.count(i))
      out.push_back(i);
  return out;
}

/// Turns a reduction over the pre-update table into the reduction over the
/// post-update table: sum pooling is linear, so only the shared rows' update
/// terms need subtracting.
template <typename Scalar>
Vector<Scalar> relaxed_correction(const Vector<Scalar> &partial,
                                  const TableGradient<Scalar> &grad,
                                  std::span<const RowIndex> shared,
                                  Scalar lr) {
  Vector<Scalar> delta = Vector<Scalar>::Zero(partial.size());
  for (RowIndex i : shared) {
    auto it = grad.find(i);
    if (it == grad.end())
      throw InvalidRequest("no gradient for shared index " +
                           std::to_string(i));
    delta += it->second;
  }
  return partial - lr * delta;
}

/// Per-table reduced vectors for a whole batch: reduced[t] is dim x B.
template <typename Scalar>
std::vector<Matrix<Scalar>>
reduce_batch(const std::vector<EmbeddingTable<Scalar>> &tables,
             const SparseBatch &batch) {
  std::vector<Matrix<Scalar>> reduced;
  reduced.reserve(tables.size());
  const auto n = static_cast<Eigen::Index>(batch.samples.size());
  for (std::size_t t = 0; t < tables.size(); ++t) {
    Matrix<Scalar> r(tables[t].dim(), n);
    for (Eigen::Index s = 0; s < n; ++s)
      r.col(s) = lookup_reduce(tables[t], std::span<const RowIndex>(
                                              batch.samples[s].indices.at(t)));
    reduced.push_back(std::move(r));
  }
  return reduced;
}

template <typename Scalar> struct ForwardCache {
  std::vector<Matrix<Scalar>> bottom_act; // [0] = dense input
  std::vector<Matrix<Scalar>> top_act;    // [0] = interaction
  Vector<Scalar> prediction;
  std::size_t feature_dim = 0;
  std::size_t num_tables = 0;
  const SparseBatch *batch = nullptr;
};

template <typename Scalar> struct MlpGradients {
  Mlp<Scalar> bottom;
  Mlp<Scalar> top;
};

template <typename Scalar> struct Gradients {
  MlpGradients<Scalar> mlp;
  EmbeddingGradient<Scalar> embedding;
};

template <typename Scalar>
ForwardCache<Scalar> forward(const ModelConfig &cfg, const Mlp<Scalar> &bottom,
                             const Mlp<Scalar> &top, const SparseBatch &batch,
                             const std::vector<Matrix<Scalar>> &reduced) {
  const auto n = static_cast<Eigen::Index>(batch.samples.size());
  const auto dim = static_cast<Eigen::Index>(cfg.feature_dim);
  if (reduced.size() != cfg.num_tables)
    throw InvalidRequest("reduced vector count does not match num_tables");

  ForwardCache<Scalar> c;
  c.feature_dim = cfg.feature_dim;
  c.num_tables = cfg.num_tables;
  c.batch = &batch;

  Matrix<Scalar> x(static_cast<Eigen::Index>(cfg.num_dense), n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto &d = batch.samples[s].dense;
    if (d.size() != cfg.num_dense)
      throw InvalidRequest("dense feature count mismatch");
    for (Eigen::Index k = 0; k < x.rows(); ++k)
      x(k, s) = static_cast<Scalar>(d[k]);
  }
  c.bottom_act.push_back(std::move(x));
  for (const auto &l : bottom.layers) {
    if (l.weight.cols() != c.bottom_act.back().rows())
      throw InvalidRequest("bottom MLP shape mismatch");
    Matrix<Scalar> z = (l.weight * c.bottom_act.back()).colwise() + l.bias;
    c.bottom_act.push_back(z.cwiseMax(Scalar(0)));
  }
  if (c.bottom_act.back().rows() != dim)
    throw InvalidRequest("bottom MLP output must equal feature_dim");

  Matrix<Scalar> inter(dim * static_cast<Eigen::Index>(cfg.num_tables + 1), n);
  inter.topRows(dim) = c.bottom_act.back();
  for (std::size_t t = 0; t < cfg.num_tables; ++t) {
    if (reduced[t].rows() != dim || reduced[t].cols() != n)
      throw InvalidRequest("reduced vector shape mismatch");
    inter.middleRows(dim * static_cast<Eigen::Index>(t + 1), dim) = reduced[t];
  }
  c.top_act.push_back(std::move(inter));
  for (std::size_t i = 0; i < top.layers.size(); ++i) {
    const auto &l = top.layers[i];
    if (l.weight.cols() != c.top_act.back().rows())
      throw InvalidRequest("top MLP shape mismatch");
    Matrix<Scalar> z = (l.weight * c.top_act.back()).colwise() + l.bias;
    if (i + 1 < top.layers.size())
      c.top_act.push_back(z.cwiseMax(Scalar(0)));
    else
      c.top_act.push_back(z.unaryExpr([](Scalar v) { return detail::sigmoid(v); }));
  }
  if (c.top_act.back().rows() != 1)
    throw InvalidRequest("top MLP must produce one output");
  c.prediction = c.top_act.back().row(0).transpose();
  return c;
}

template <typename Scalar>
Vector<Scalar> labels_of(const SparseBatch &batch) {
  Vector<Scalar> y(static_cast<Eigen::Index>(batch.samples.size()));
  for (std::size_t s = 0; s < batch.samples.size(); ++s)
    y(static_cast<Eigen::Index>(s)) = static_cast<Scalar>(batch.samples[s].label);
  return y;
}

/// Mean binary cross-entropy.
template <typename Scalar>
Scalar bce_loss(const Vector<Scalar> &p, const Vector<Scalar> &y) {
  const Scalar eps = Scalar(1e-12);
  Scalar sum = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    sum -= y(i) * std::log(std::max(p(i), eps)) +
           (Scalar(1) - y(i)) * std::log(std::max(Scalar(1) - p(i), eps));
  return sum / static_cast<Scalar>(p.size());
}

template <typename Scalar>
Gradients<Scalar> backward(const ForwardCache<Scalar> &c,
                           const Mlp<Scalar> &bottom, const Mlp<Scalar> &top,
                           const Vector<Scalar> &labels) {
  const auto n = c.prediction.size();
  const auto dim = static_cast<Eigen::Index>(c.feature_dim);
  Gradients<Scalar> g;
  g.mlp.top.layers.resize(top.layers.size());
  g.mlp.bottom.layers.resize(bottom.layers.size());

  // d(mean BCE)/d(logit) for a logistic output.
  Matrix<Scalar> delta =
      ((c.prediction - labels) / static_cast<Scalar>(n)).transpose();
  for (std::size_t i = top.layers.size(); i-- > 0;) {
    const auto &in = c.top_act[i];
    g.mlp.top.layers[i].weight = delta * in.transpose();
    g.mlp.top.layers[i].bias = delta.rowwise().sum();
    Matrix<Scalar> up = top.layers[i].weight.transpose() * delta;
    if (i > 0)
      delta = up.cwiseProduct(
          in.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); }));
    else
      delta = std::move(up);
  }
  const Matrix<Scalar> d_inter = std::move(delta);

  delta = d_inter.topRows(dim);
  for (std::size_t i = bottom.layers.size(); i-- > 0;) {
    const auto &out = c.bottom_act[i + 1];
    delta = delta.cwiseProduct(
        out.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); }));
    const auto &in = c.bottom_act[i];
    g.mlp.bottom.layers[i].weight = delta * in.transpose();
    g.mlp.bottom.layers[i].bias = delta.rowwise().sum();
    if (i > 0)
      delta = bottom.layers[i].weight.transpose() * delta;
  }

  // Sum-pool adjoint: every contributing row receives the reduced vector's
  // gradient once per occurrence.
  g.embedding.tables.resize(c.num_tables);
  for (std::size_t t = 0; t < c.num_tables; ++t) {
    auto &tg = g.embedding.tables[t];
    const auto block =
        d_inter.middleRows(dim * static_cast<Eigen::Index>(t + 1), dim);
    for (Eigen::Index s = 0; s < n; ++s)
      for (RowIndex r : c.batch->samples[static_cast<std::size_t>(s)].indices[t]) {
        auto [it, fresh] = tg.try_emplace(r, block.col(s));
        if (!fresh)
          it->second += block.col(s);
      }
  }
  return g;
}

template <typename Scalar>
void sgd_step(Mlp<Scalar> &mlp, const Mlp<Scalar> &grad, Scalar lr) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    mlp.layers[i].weight -= lr * grad.layers[i].weight;
    mlp.layers[i].bias -= lr * grad.layers[i].bias;
  }
}

/// One FWP + BWP + SGD step. Returns the loss measured before the update.
template <typename Scalar>
Scalar train_batch(Model<Scalar> &m, const ModelConfig &cfg,
                   const SparseBatch &batch) {
  const auto lr = static_cast<Scalar>(cfg.learning_rate);
  const auto reduced = reduce_batch(m.tables, batch);
  const auto cache = forward(cfg, m.bottom, m.top, batch, reduced);
  const auto y = labels_of<Scalar>(batch);
  const Scalar loss = bce_loss(cache.prediction, y);
  const auto g = backward(cache, m.bottom, m.top, y);
  for (std::size_t t = 0; t < m.tables.size(); ++t)
    apply_update(m.tables[t], g.embedding.tables[t], lr);
  sgd_step(m.bottom, g.mlp.bottom, lr);
  sgd_step(m.top, g.mlp.top, lr);
  return loss;
}

template <typename Scalar>
Scalar batch_loss(const Model<Scalar> &m, const ModelConfig &cfg,
                  const SparseBatch &batch) {
  const auto cache =
      forward(cfg, m.bottom, m.top, batch, reduce_batch(m.tables, batch));
  return bce_loss(cache.prediction, labels_of<Scalar>(batch));
}

namespace detail {

inline double init_uniform(std::mt19937_64 &rng, double bound) {
  return (2.0 * unit_uniform(rng) - 1.0) * bound;
}

template <typename Scalar>
Mlp<Scalar> init_mlp(std::mt19937_64 &rng, std::span<const std::size_t> widths) {
  Mlp<Scalar> m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(widths[i]);
    const auto out = static_cast<Eigen::Index>(widths[i + 1]);
    const double wb = std::sqrt(6.0 / static_cast<double>(in + out));
    const double bb = 1.0 / std::sqrt(static_cast<double>(in));
    Layer<Scalar> l{Matrix<Scalar>(out, in), Vector<Scalar>(out)};
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index k = 0; k < in; ++k)
        l.weight(r, k) = static_cast<Scalar>(init_uniform(rng, wb));
    for (Eigen::Index r = 0; r < out; ++r)
      l.bias(r) = static_cast<Scalar>(init_uniform(rng, bb));
    m.layers.push_back(std::move(l));
  }
  return m;
}

} // namespace detail

template <typename Scalar>
Model<Scalar> init_model(const ModelConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), 0x1a17u};
  std::mt19937_64 rng(seq);
  Model<Scalar> m;
  const double eb = 1.0 / std::sqrt(static_cast<double>(cfg.rows_per_table));
  for (std::size_t t = 0; t < cfg.num_tables; ++t) {
    EmbeddingTable<Scalar> tab{RowMajorMatrix<Scalar>(
        static_cast<Eigen::Index>(cfg.rows_per_table),
        static_cast<Eigen::Index>(cfg.feature_dim))};
    for (Eigen::Index i = 0; i < tab.rows.size(); ++i)
      tab.rows.data()[i] = static_cast<Scalar>(detail::init_uniform(rng, eb));
    m.tables.push_back(std::move(tab));
  }
  m.bottom = detail::init_mlp<Scalar>(rng, cfg.bottom_mlp_layers);
  std::vector<std::size_t> top_widths{cfg.interaction_width()};
  top_widths.insert(top_widths.end(), cfg.top_mlp_layers.begin(),
                    cfg.top_mlp_layers.end());
  m.top = detail::init_mlp<Scalar>(rng, top_widths);
  return m;
}

/// Shape-only MLPs (zero-filled) for decoding logs and snapshots.
template <typename Scalar>
std::pair<Mlp<Scalar>, Mlp<Scalar>> zero_mlps(const ModelConfig &cfg) {
  auto make = [](std::span<const std::size_t> widths) {
    Mlp<Scalar> m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      m.layers.push_back({Matrix<Scalar>::Zero(static_cast<Eigen::Index>(widths[i + 1]),
                                               static_cast<Eigen::Index>(widths[i])),
                          Vector<Scalar>::Zero(static_cast<Eigen::Index>(widths[i + 1]))});
    return m;
  };
  std::vector<std::size_t> top_widths{cfg.interaction_width()};
  top_widths.insert(top_widths.end(), cfg.top_mlp_layers.begin(),
                    cfg.top_mlp_layers.end());
  return {make(cfg.bottom_mlp_layers), make(top_widths)};
}

/// Largest element difference divided by max(1, |reference|max), over
/// tables and optionally both MLPs. Infinite on shape mismatch.
template <typename Scalar>
double max_relative_diff(const Model<Scalar> &a, const Model<Scalar> &ref,
                         bool include_mlp = true) {
  auto rel = [](const auto &x, const auto &y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
      return std::numeric_limits<double>::infinity();
    if (x.size() == 0)
      return 0.0;
    const double scale =
        std::max(1.0, static_cast<double>(y.cwiseAbs().maxCoeff()));
    return static_cast<double>((x - y).cwiseAbs().maxCoeff()) / scale;
  };
  if (a.tables.size() != ref.tables.size())
    return std::numeric_limits<double>::infinity();
  double d = 0.0;
  for (std::size_t t = 0; t < a.tables.size(); ++t)
    d = std::max(d, rel(a.tables[t].rows, ref.tables[t].rows));
  if (!include_mlp)
    return d;
  auto layers = [&](const Mlp<Scalar> &x, const Mlp<Scalar> &y) {
    if (x.layers.size() != y.layers.size()) {
      d = std::numeric_limits<double>::infinity();
      return;
    }
    for (std::size_t l = 0; l < x.layers.size(); ++l) {
      d = std::max(d, rel(x.layers[l].weight, y.layers[l].weight));
      d = std::max(d, rel(x.layers[l].bias, y.layers[l].bias));
    }
  };
  layers(a.bottom, ref.bottom);
  layers(a.top, ref.top);
  return d;
}

// Serialization. Floats are written little-endian, weights row-major then
// bias, bottom layers before top layers.

std::vector<std::uint8_t> serialize_mlp(const Mlp<float> &bottom,
                                        const Mlp<float> &top);
std::pair<Mlp<float>, Mlp<float>>
deserialize_mlp(const ModelConfig &cfg, std::span<const std::uint8_t> bytes);

inline constexpr char kSnapshotMagic[8] = {'T', 'C', 'X', 'L',
                                           'S', 'N', 'A', 'P'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

enum SnapshotSections : std::uint32_t {
  kSnapshotTables = 1u << 0,
  kSnapshotMlp = 1u << 1,
};

/// magic | u32 version | u32 sections | u64 config hash | float arrays.
void write_snapshot(std::ostream &os, const ModelConfig &cfg,
                    const Model<float> &m,
                    std::uint32_t sections = kSnapshotTables | kSnapshotMlp);
/// Sections absent from the stream come back zero-filled.
Model<float> read_snapshot(std::istream &is, const ModelConfig &cfg,
                           std::uint32_t *sections = nullptr);

} // namespace cxlsim
