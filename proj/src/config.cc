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

#include "rangeplace/config.h"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rangeplace {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                  ": expected `key = value`");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    config.values_[key] = trim(line.substr(eq + 1));
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << to_string();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [key, value] : other.values_) values_[key] = value;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("missing config key: " + key);
  return it->second;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string s = get_string(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("config key " + key + ": not a number: " + s);
  }
  return v;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key) const {
  const std::string s = get_string(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("config key " + key + ": not an unsigned integer: " + s);
  }
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const std::string s = get_string(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config key " + key + ": not a boolean: " + s);
}

std::vector<std::uint64_t> KeyValueConfig::get_uint_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  std::istringstream in(get_string(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw std::invalid_argument("config key " + key + ": bad list entry: " + item);
    }
    out.push_back(v);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace rangeplace
