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

#include <stdexcept>
#include <string>

namespace cxlsim {

/// Malformed access/transfer request (zero length, bad range).
class InvalidRequest : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Bad model/profile/run configuration. The CLI maps this to exit status 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// The checkpoint protocol was driven out of order (e.g. update before the
/// undo log is durable). Always indicates a scheduler bug.
class ProtocolViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// A simulation invariant failed at runtime. The CLI maps this to exit 3.
class InvariantViolation : public std::runtime_error {
public:
  InvariantViolation(std::string name, const std::string &detail)
      : std::runtime_error(name + ": " + detail), name_(std::move(name)) {}

  const std::string &invariant() const noexcept { return name_; }

private:
  std::string name_;
};

} // namespace cxlsim
