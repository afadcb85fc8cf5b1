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

#include "charge/corpus.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace charge::providers {
class ProviderClient;
}

namespace charge::keypoints {

enum class Modality { text, chart };
enum class Status { candidate, retained, dropped };
enum class DropReason { retrievable_crossmodally, not_retrievable_from_source, judge_unavailable };
/// Outcome of the initial classification: the pool a candidate lands in.
enum class Pool { text, chart, both };

std::string_view to_string(Modality m);
std::string_view to_string(Status s);
std::string_view to_string(DropReason r);
std::string_view to_string(Pool p);

inline constexpr std::size_t kDefaultMaxPerSource = 20;

struct SourceRef {
  std::string doc_id;
  std::string source_id;  // chunk_id or chart_id
};

struct Keypoint {
  std::string kp_id;
  std::string statement;
  Modality claimed_modality = Modality::text;
  SourceRef source;
  Status status = Status::candidate;
  std::optional<DropReason> drop_reason;
  std::optional<Pool> pool;

  void retain();
  void drop(DropReason reason);
};

/// hash(doc_id, source_id, normalized statement), truncated.
std::string keypoint_id(const std::string& doc_id, const std::string& source_id, std::string_view statement);

/// True for statements that open with a pronoun or demonstrative and so are
/// not self-contained.
bool fails_self_contained_lint(std::string_view statement);

struct ExtractOptions {
  std::size_t max_per_source = kDefaultMaxPerSource;
};

std::vector<Keypoint> extract_text_keypoints(const corpus::TextChunk& chunk, providers::ProviderClient& provider,
                                             const ExtractOptions& options = {});

/// `image_path` is the resolved chart image; the prompt carries the image
/// and the serialized OCR values.
std::vector<Keypoint> extract_chart_keypoints(const corpus::Chart& chart, const std::string& image_path,
                                              providers::ProviderClient& provider,
                                              const ExtractOptions& options = {});

/// A keypoint whose normalized statement occurs verbatim in both the chunk
/// and the chart's OCR text is `both` without consulting the provider.
Pool classify_modality(const Keypoint& keypoint, const corpus::TextChunk* chunk, const corpus::Chart* chart,
                       const std::string& image_path, providers::ProviderClient& provider);

/// Maps a classification onto a pool. A verdict that contradicts the source
/// modality means the fact was seen in both places.
Pool assign_pool(const Keypoint& keypoint, Pool classified);

/// Stable on-disk order: (doc_id, source_id, kp_id).
void sort_keypoints(std::vector<Keypoint>& kps);

void to_json(nlohmann::json& j, const Keypoint& k);
void from_json(const nlohmann::json& j, Keypoint& k);

Modality modality_from_string(std::string_view s);
Pool pool_from_string(std::string_view s);

}  // namespace charge::keypoints
