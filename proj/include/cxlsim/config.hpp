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

// Run specification. The JSON document is the single source of truth:
// defaults, then the config file (merge patch), then `key.path=value`
// overrides from the command line, in that order. The effective document
// is what gets hashed for provenance.

#include "cxlsim/crash.hpp"
#include "cxlsim/sim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cxlsim {

inline constexpr std::string_view kVersion = "0.1.0";
/// Environment variable that overrides `output_dir` from the file.
inline constexpr const char *kOutDirEnv = "CXLSIM_OUT_DIR";

struct RunSpec {
  std::vector<ModelConfig> models;
  std::vector<Policy> policies;
  Platform platform;
  std::uint64_t n_batches = 10;
  std::uint64_t seed = 42;
  WorkloadParams workload;
  std::uint64_t staleness_bound = 100;
  bool functional = true;
  bool checkpointing = true;
  StageOverrides gpu;
  std::string output_dir = "cxlsim-out";
  std::string baseline = "PMEM";
  CrashSelection crash{CrashMode::None, 0};
  unsigned threads = 0;
};

nlohmann::json default_document();
/// Strict conversion; unknown keys and bad values raise ConfigError.
RunSpec spec_from_document(const nlohmann::json &doc);

/// Sets `path` (dot separated) to `value`, parsed as JSON when it parses
/// and taken as a string otherwise. Unknown paths raise ConfigError.
void apply_override(nlohmann::json &doc, std::string_view path,
                    std::string_view value);
/// Splits `key=value`.
void apply_override(nlohmann::json &doc, std::string_view assignment);

nlohmann::json load_document(const std::filesystem::path &file);

/// 64-bit FNV-1a of the canonical dump without `output_dir` and
/// `threads`, as 16 hex digits.
std::string document_hash(const nlohmann::json &doc);
/// `# cxlsim <version> config=<hash>`
std::string provenance_line(const nlohmann::json &doc);

SimOptions sim_options(const RunSpec &spec);

} // namespace cxlsim
