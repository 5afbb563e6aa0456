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
#include "cxlsim/le_io.hpp"

#include <cstring>
#include <istream>
#include <ostream>

namespace cxlsim {

namespace {

template <typename Fn> void for_each_array(Mlp<float> &m, Fn &&fn) {
  for (auto &l : m.layers) {
    RowMajorMatrix<float> w = l.weight;
    fn(w.data(), static_cast<std::size_t>(w.size()));
    l.weight = w;
    fn(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
}

void put_mlp(ByteWriter &w, const Mlp<float> &m) {
  for (const auto &l : m.layers) {
    const RowMajorMatrix<float> rm = l.weight;
    w.floats(rm.data(), static_cast<std::size_t>(rm.size()));
    w.floats(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
}

} // namespace

std::vector<std::uint8_t> serialize_mlp(const Mlp<float> &bottom,
                                        const Mlp<float> &top) {
  ByteWriter w;
  put_mlp(w, bottom);
  put_mlp(w, top);
  return w.take();
}

std::pair<Mlp<float>, Mlp<float>>
deserialize_mlp(const ModelConfig &cfg, std::span<const std::uint8_t> bytes) {
  auto [bottom, top] = zero_mlps<float>(cfg);
  if (bytes.size() != cfg.mlp_bytes())
    throw InvalidRequest("MLP buffer has " + std::to_string(bytes.size()) +
                         " bytes, expected " + std::to_string(cfg.mlp_bytes()));
  ByteReader r(bytes);
  auto fill = [&](float *p, std::size_t n) { r.floats(p, n); };
  for_each_array(bottom, fill);
  for_each_array(top, fill);
  return {std::move(bottom), std::move(top)};
}

void write_snapshot(std::ostream &os, const ModelConfig &cfg,
                    const Model<float> &m, std::uint32_t sections) {
  ByteWriter w;
  w.raw(kSnapshotMagic, sizeof kSnapshotMagic);
  w.u32(kSnapshotVersion);
  w.u32(sections);
  w.u64(cfg.hash());
  if (sections & kSnapshotTables)
    for (const auto &t : m.tables)
      w.floats(t.rows.data(), static_cast<std::size_t>(t.rows.size()));
  if (sections & kSnapshotMlp) {
    put_mlp(w, m.bottom);
    put_mlp(w, m.top);
  }
  const auto bytes = w.take();
  os.write(reinterpret_cast<const char *>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os)
    throw ConfigError("snapshot write failed");
}

Model<float> read_snapshot(std::istream &is, const ModelConfig &cfg,
                           std::uint32_t *sections_out) {
  StreamReader r(is);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kSnapshotMagic, sizeof magic) != 0)
    throw ConfigError("not a snapshot (bad magic)");
  if (r.u32() != kSnapshotVersion)
    throw ConfigError("unsupported snapshot version");
  const std::uint32_t sections = r.u32();
  if (r.u64() != cfg.hash())
    throw ConfigError("snapshot was written for a different model config");

  Model<float> m;
  auto [bottom, top] = zero_mlps<float>(cfg);
  m.bottom = std::move(bottom);
  m.top = std::move(top);
  for (std::size_t t = 0; t < cfg.num_tables; ++t)
    m.tables.push_back({RowMajorMatrix<float>::Zero(
        static_cast<Eigen::Index>(cfg.rows_per_table),
        static_cast<Eigen::Index>(cfg.feature_dim))});
  if (sections & kSnapshotTables)
    for (auto &t : m.tables)
      r.floats(t.rows.data(), static_cast<std::size_t>(t.rows.size()));
  if (sections & kSnapshotMlp) {
    auto fill = [&](float *p, std::size_t n) { r.floats(p, n); };
    for_each_array(m.bottom, fill);
    for_each_array(m.top, fill);
  }
  if (sections_out)
    *sections_out = sections;
  return m;
}

} // namespace cxlsim
