// Copyright 2026 The Charge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace charge::jsonl {

std::vector<nlohmann::json> read(const std::string& path);

/// Writes atomically (temp file + rename) so an interrupted stage never leaves
/// a truncated artifact behind.
void write(const std::string& path, const std::vector<nlohmann::json>& rows);

template <typename T>
std::vector<T> read_as(const std::string& path) {
  std::vector<T> out;
  for (const auto& row : read(path)) out.push_back(row.get<T>());
  return out;
}

template <typename T>
void write_all(const std::string& path, const std::vector<T>& items) {
  std::vector<nlohmann::json> rows;
  rows.reserve(items.size());
  for (const auto& item : items) rows.emplace_back(item);
  write(path, rows);
}

/// Serialized form used for on-disk artifacts: compact, keys sorted.
std::string dump(const nlohmann::json& j);

}  // namespace charge::jsonl
