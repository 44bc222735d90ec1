/*
 * Copyright 2026 The Rangeplace Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rangeplace {

// Little-endian primitives shared by every on-disk format. Bytes are
// assembled explicitly so the files are identical on any host.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) {
      throw std::runtime_error("cannot open for writing: " + path.string());
    }
  }

  void magic(std::string_view magic) { bytes(magic.data(), magic.size()); }

  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }

  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw std::runtime_error("write failed: " + path_.string());
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("close failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) {
      throw std::runtime_error("cannot open for reading: " + path.string());
    }
  }

  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    bytes(got.data(), got.size());
    if (got != magic) {
      throw std::runtime_error(path_.string() + ": bad magic, expected " +
                               std::string(magic));
    }
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw std::runtime_error(path_.string() + ": truncated at byte " +
                               std::to_string(offset_ + in_.gcount()));
    }
    offset_ += n;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  std::uint64_t offset() const { return offset_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace rangeplace
