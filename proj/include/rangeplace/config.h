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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rangeplace {

/// `key = value` text with '#' comments. Keys are kept sorted so that
/// serialized configs are stable.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void save(const std::filesystem::path& path) const;
  std::string to_string() const;

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void merge(const KeyValueConfig& other);

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::uint64_t> get_uint_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest text that reads back to the identical double.
std::string format_double(double v);

}  // namespace rangeplace
