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

// Little-endian byte packing shared by snapshots, the MLP log and the
// file-backed store.

#include "cxlsim/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <span>
#include <vector>

namespace cxlsim {

class ByteWriter {
public:
  void raw(const void *p, std::size_t n) {
    const auto *b = static_cast<const std::uint8_t *>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void floats(const float *p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      u32(std::bit_cast<std::uint32_t>(p[i]));
  }
  void bytes(std::span<const std::uint8_t> b) {
    u64(b.size());
    buf_.insert(buf_.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t{b_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  void floats(float *p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      p[i] = std::bit_cast<float>(u32());
  }
  std::size_t remaining() const { return b_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size())
      throw InvalidRequest("truncated buffer");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

class StreamReader {
public:
  explicit StreamReader(std::istream &is) : is_(is) {}
  void raw(void *p, std::size_t n) {
    is_.read(static_cast<char *>(p), static_cast<std::streamsize>(n));
    if (!is_)
      throw ConfigError("truncated stream");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    raw(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t{b[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t{b[i]} << (8 * i);
    return v;
  }
  void floats(float *p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      p[i] = std::bit_cast<float>(u32());
  }
  std::vector<std::uint8_t> bytes() {
    const auto n = u64();
    std::vector<std::uint8_t> v(n);
    if (n)
      raw(v.data(), n);
    return v;
  }

private:
  std::istream &is_;
};

} // namespace cxlsim
