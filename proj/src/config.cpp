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
#include "cxlsim/config.hpp"
#include "cxlsim/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <set>

namespace cxlsim {

using nlohmann::json;

namespace {

json profile_doc(const DeviceProfile &p) {
  return {{"read_latency", p.read_latency},
          {"write_latency", p.write_latency},
          {"read_bandwidth", p.read_bandwidth},
          {"write_bandwidth", p.write_bandwidth},
          {"access_granularity", p.access_granularity},
          {"raw_penalty_factor", p.raw_penalty_factor},
          {"raw_window", p.raw_window},
          {"energy_read", p.energy_read},
          {"energy_write", p.energy_write},
          {"energy_request", p.energy_request},
          {"energy_static", p.energy_static}};
}

json link_doc(const LinkProfile &l) {
  return {{"per_transfer_latency", l.per_transfer_latency},
          {"bandwidth", l.bandwidth}};
}

// Reads the fields of one object and rejects keys nobody asked for.
class Reader {
public:
  Reader(const json &j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object())
      throw ConfigError(fmt::format("{}: expected an object", where_));
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions())
      return;
    for (const auto &[k, v] : j_.items())
      if (!seen_.count(k))
        throw ConfigError(fmt::format("{}: unknown key '{}'", where_, k));
  }

  const json &at(const std::string &k) {
    seen_.insert(k);
    if (!j_.contains(k))
      throw ConfigError(fmt::format("{}: missing key '{}'", where_, k));
    return j_.at(k);
  }
  bool has(const std::string &k) const { return j_.contains(k); }

  template <typename T> void get(const std::string &k, T &out) {
    const json &v = at(k);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean())
          throw ConfigError(fmt::format("{}.{}: expected a boolean", where_, k));
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
          throw ConfigError(
              fmt::format("{}.{}: expected a non-negative integer", where_, k));
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number())
          throw ConfigError(fmt::format("{}.{}: expected a number", where_, k));
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string())
          throw ConfigError(fmt::format("{}.{}: expected a string", where_, k));
      }
      out = v.get<T>();
    } catch (const json::exception &e) {
      throw ConfigError(fmt::format("{}.{}: {}", where_, k, e.what()));
    }
  }

  void opt(const std::string &k, std::optional<double> &out) {
    const json &v = at(k);
    if (v.is_null()) {
      out.reset();
      return;
    }
    if (!v.is_number())
      throw ConfigError(fmt::format("{}.{}: expected a number or null", where_, k));
    out = v.get<double>();
  }

  const std::string &where() const { return where_; }

private:
  const json &j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_profile(const json &j, const std::string &where, DeviceProfile &p) {
  Reader r(j, where);
  r.get("read_latency", p.read_latency);
  r.get("write_latency", p.write_latency);
  r.get("read_bandwidth", p.read_bandwidth);
  r.get("write_bandwidth", p.write_bandwidth);
  r.get("access_granularity", p.access_granularity);
  r.get("raw_penalty_factor", p.raw_penalty_factor);
  r.get("raw_window", p.raw_window);
  r.get("energy_read", p.energy_read);
  r.get("energy_write", p.energy_write);
  r.get("energy_request", p.energy_request);
  r.get("energy_static", p.energy_static);
}

void read_link(const json &j, const std::string &where, LinkProfile &l) {
  Reader r(j, where);
  r.get("per_transfer_latency", l.per_transfer_latency);
  r.get("bandwidth", l.bandwidth);
}

ModelConfig read_model(const json &j, std::size_t i) {
  const auto where = fmt::format("models[{}]", i);
  if (j.is_string()) {
    try {
      return builtin_config(j.get<std::string>());
    } catch (const std::exception &e) {
      throw ConfigError(fmt::format("{}: {}", where, e.what()));
    }
  }
  ModelConfig c;
  {
    Reader r(j, where);
    r.get("name", c.name);
    r.get("feature_dim", c.feature_dim);
    r.get("num_dense", c.num_dense);
    r.get("num_tables", c.num_tables);
    r.get("rows_per_table", c.rows_per_table);
    r.get("lookups_per_table", c.lookups_per_table);
    r.get("bottom_mlp_layers", c.bottom_mlp_layers);
    r.get("top_mlp_layers", c.top_mlp_layers);
    r.get("learning_rate", c.learning_rate);
    r.get("batch_size", c.batch_size);
  }
  try {
    c.validate();
  } catch (const std::exception &e) {
    throw ConfigError(fmt::format("{}: {}", where, e.what()));
  }
  return c;
}

CrashMode parse_crash_mode(const std::string &s) {
  if (s == "none")
    return CrashMode::None;
  if (s == "exhaustive")
    return CrashMode::Exhaustive;
  if (s == "sampled")
    return CrashMode::Sampled;
  throw ConfigError(fmt::format(
      "crash_test.mode: '{}' is not none, exhaustive or sampled", s));
}

json parse_value(std::string_view value) {
  try {
    return json::parse(value);
  } catch (const json::parse_error &) {
    return json(std::string(value));
  }
}

} // namespace

json default_document() {
  const Platform p = default_platform();
  const WorkloadParams w;
  json policies = json::array();
  for (Policy pol : all_policies())
    policies.push_back(std::string(to_string(pol)));
  return {
      {"models", json::array({"RM1"})},
      {"policies", policies},
      {"batches", 10},
      {"seed", 42},
      {"staleness_bound", 100},
      {"functional", true},
      {"checkpointing", true},
      {"output_dir", "cxlsim-out"},
      {"baseline", "PMEM"},
      {"threads", 0},
      {"crash_test", {{"mode", "none"}, {"limit", 0}}},
      {"workload",
       {{"reuse_rate", w.reuse_rate},
        {"zipf_exponent", w.zipf_exponent},
        {"rows_per_table", nullptr},
        {"batch_size", nullptr}}},
      {"gpu_stages",
       {{"bottom_fwd", nullptr}, {"top", nullptr}, {"bottom_bwd", nullptr}}},
      {"platform",
       {{"dram", profile_doc(p.dram)},
        {"pmem", profile_doc(p.pmem)},
        {"ssd", profile_doc(p.ssd)},
        {"cxl_link", link_doc(p.cxl_link)},
        {"pcie_link", link_doc(p.pcie_link)},
        {"gpu",
         {{"sec_per_mac", p.gpu.sec_per_mac},
          {"kernel_overhead", p.gpu.kernel_overhead}}},
        {"sync_overhead", p.sync_overhead},
        {"host_sec_per_op", p.host_sec_per_op},
        {"mem_sec_per_op", p.mem_sec_per_op},
        {"host_parallelism", p.host_parallelism},
        {"ssd_parallelism", p.ssd_parallelism},
        {"device_parallelism", p.device_parallelism},
        {"device_bandwidth_scale", p.device_bandwidth_scale},
        {"mlp_chunk_bytes", p.mlp_chunk_bytes},
        {"dram_static_multiplier", p.dram_static_multiplier}}}};
}

RunSpec spec_from_document(const json &doc) {
  RunSpec s;
  s.platform = default_platform();
  Reader r(doc, "config");

  const json &models = r.at("models");
  if (!models.is_array() || models.empty())
    throw ConfigError("models: expected a non-empty list");
  for (std::size_t i = 0; i < models.size(); ++i)
    s.models.push_back(read_model(models[i], i));

  const json &pols = r.at("policies");
  if (!pols.is_array() || pols.empty())
    throw ConfigError("policies: at least one policy is required");
  for (const auto &p : pols) {
    if (!p.is_string())
      throw ConfigError("policies: expected policy names");
    const Policy pol = parse_policy(p.get<std::string>());
    if (std::find(s.policies.begin(), s.policies.end(), pol) != s.policies.end())
      throw ConfigError(fmt::format("policies: {} listed twice", to_string(pol)));
    s.policies.push_back(pol);
  }

  r.get("batches", s.n_batches);
  r.get("seed", s.seed);
  r.get("staleness_bound", s.staleness_bound);
  if (s.staleness_bound == 0)
    throw ConfigError("staleness_bound must be at least 1");
  r.get("functional", s.functional);
  r.get("checkpointing", s.checkpointing);
  r.get("output_dir", s.output_dir);
  r.get("baseline", s.baseline);
  parse_policy(s.baseline);
  r.get("threads", s.threads);
  {
    Reader c(r.at("crash_test"), "crash_test");
    std::string mode;
    c.get("mode", mode);
    s.crash.mode = parse_crash_mode(mode);
    c.get("limit", s.crash.limit);
    if (s.crash.mode == CrashMode::Sampled && s.crash.limit == 0)
      throw ConfigError("crash_test.limit: sampled mode needs a point count");
  }
  {
    Reader w(r.at("workload"), "workload");
    w.get("reuse_rate", s.workload.reuse_rate);
    w.get("zipf_exponent", s.workload.zipf_exponent);
    if (!(s.workload.reuse_rate >= 0.0 && s.workload.reuse_rate <= 1.0))
      throw ConfigError("workload.reuse_rate must lie in [0, 1]");
    if (!(s.workload.zipf_exponent > 0.0))
      throw ConfigError("workload.zipf_exponent must be positive");
    for (const char *k : {"rows_per_table", "batch_size"}) {
      const json &v = w.at(k);
      if (v.is_null())
        continue;
      if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
        throw ConfigError(fmt::format("workload.{}: expected a positive integer", k));
      for (auto &m : s.models)
        (std::string_view(k) == "rows_per_table" ? m.rows_per_table
                                                 : m.batch_size) =
            v.get<std::size_t>();
    }
  }
  {
    Reader g(r.at("gpu_stages"), "gpu_stages");
    g.opt("bottom_fwd", s.gpu.bottom_fwd);
    g.opt("top", s.gpu.top);
    g.opt("bottom_bwd", s.gpu.bottom_bwd);
  }
  {
    Reader p(r.at("platform"), "platform");
    auto &pf = s.platform;
    read_profile(p.at("dram"), "platform.dram", pf.dram);
    read_profile(p.at("pmem"), "platform.pmem", pf.pmem);
    read_profile(p.at("ssd"), "platform.ssd", pf.ssd);
    read_link(p.at("cxl_link"), "platform.cxl_link", pf.cxl_link);
    read_link(p.at("pcie_link"), "platform.pcie_link", pf.pcie_link);
    {
      Reader g(p.at("gpu"), "platform.gpu");
      g.get("sec_per_mac", pf.gpu.sec_per_mac);
      g.get("kernel_overhead", pf.gpu.kernel_overhead);
    }
    p.get("sync_overhead", pf.sync_overhead);
    p.get("host_sec_per_op", pf.host_sec_per_op);
    p.get("mem_sec_per_op", pf.mem_sec_per_op);
    p.get("host_parallelism", pf.host_parallelism);
    p.get("ssd_parallelism", pf.ssd_parallelism);
    p.get("device_parallelism", pf.device_parallelism);
    p.get("device_bandwidth_scale", pf.device_bandwidth_scale);
    p.get("mlp_chunk_bytes", pf.mlp_chunk_bytes);
    p.get("dram_static_multiplier", pf.dram_static_multiplier);
  }
  try {
    s.platform.validate();
    for (const auto &m : s.models)
      m.validate();
  } catch (const ConfigError &) {
    throw;
  } catch (const std::exception &e) {
    throw ConfigError(e.what());
  }
  return s;
}

void apply_override(json &doc, std::string_view path, std::string_view value) {
  json *node = &doc;
  std::string_view rest = path;
  std::string walked;
  while (!rest.empty()) {
    const auto dot = rest.find('.');
    const std::string key(rest.substr(0, dot));
    rest = dot == std::string_view::npos ? std::string_view{}
                                         : rest.substr(dot + 1);
    walked += walked.empty() ? key : "." + key;
    if (!node->is_object() || !node->contains(key))
      throw ConfigError(fmt::format("unknown setting '{}'", walked));
    node = &(*node)[key];
  }
  json v = parse_value(value);
  if (node->is_array() && !v.is_array()) {
    // Comma lists for list-valued settings.
    json list = json::array();
    std::string_view s = value;
    while (true) {
      const auto c = s.find(',');
      const auto item = s.substr(0, c);
      if (!item.empty())
        list.push_back(parse_value(item));
      if (c == std::string_view::npos)
        break;
      s = s.substr(c + 1);
    }
    v = std::move(list);
  }
  *node = std::move(v);
}

void apply_override(json &doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError(fmt::format("expected key=value, got '{}'", assignment));
  apply_override(doc, assignment.substr(0, eq), assignment.substr(eq + 1));
}

json load_document(const std::filesystem::path &file) {
  std::ifstream in(file);
  if (!in)
    throw ConfigError(fmt::format("cannot open config file {}", file.string()));
  json patch;
  try {
    patch = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error &e) {
    throw ConfigError(fmt::format("{}: {}", file.string(), e.what()));
  }
  if (!patch.is_object())
    throw ConfigError(fmt::format("{}: top level must be an object", file.string()));
  json doc = default_document();
  doc.merge_patch(patch);
  return doc;
}

std::string document_hash(const json &doc) {
  // Where results go and how many workers compute them do not change them.
  json canonical = doc;
  if (canonical.is_object()) {
    canonical.erase("output_dir");
    canonical.erase("threads");
  }
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return fmt::format("{:016x}", h);
}

std::string provenance_line(const json &doc) {
  return fmt::format("# cxlsim {} config={}", kVersion, document_hash(doc));
}

SimOptions sim_options(const RunSpec &spec) {
  SimOptions o;
  o.n_batches = spec.n_batches;
  o.seed = spec.seed;
  o.workload = spec.workload;
  o.staleness_bound = spec.staleness_bound;
  o.functional = spec.functional;
  o.checkpointing = spec.checkpointing;
  o.gpu = spec.gpu;
  return o;
}

} // namespace cxlsim
