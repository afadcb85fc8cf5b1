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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace charge::text {

/// Unicode NFC, lowercase, whitespace collapsed and trimmed. This is the one
/// normalization used for every string equality and containment check.
std::string normalize(std::string_view s);

/// Trim and collapse runs of whitespace to a single ASCII space. Case and
/// composition are preserved.
std::string collapse_whitespace(std::string_view s);

/// Lowercased alphanumeric tokens; tokens of a single code point are dropped.
std::vector<std::string> tokenize(std::string_view s);

/// Whitespace-delimited token count.
std::size_t word_count(std::string_view s);

std::string sha256_hex(std::string_view data);

/// First 12 hex chars of sha256, the id stem used across artifacts.
std::string short_hash(std::string_view data);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

bool starts_with_pronoun(std::string_view statement);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace charge::text
