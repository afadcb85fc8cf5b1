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
#include "charge/keypoints.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace charge::providers {
class ProviderClient;
}

namespace charge::verification {

enum class Decision { Retain, Drop };

std::string_view to_string(Decision d);

struct ProbeQuestion {
  std::string kp_id;
  std::string question;
};

struct VerificationRecord {
  std::string kp_id;
  keypoints::Modality claimed_modality = keypoints::Modality::text;
  ProbeQuestion probe;
  std::string answer_from_text;
  std::string answer_from_chart;
  bool match_source = false;
  bool match_other = false;
  Decision decision = Decision::Drop;
  std::optional<keypoints::DropReason> drop_reason;
};

/// Retain iff the claimed modality answers the probe and the other does not.
constexpr Decision decide(bool match_source, bool match_other) {
  return (match_source && !match_other) ? Decision::Retain : Decision::Drop;
}

ProbeQuestion generate_probe(const keypoints::Keypoint& keypoint, providers::ProviderClient& provider);
std::string answer_from_text(const ProbeQuestion& probe, const corpus::TextChunk& chunk,
                             providers::ProviderClient& provider);
std::string answer_from_chart(const ProbeQuestion& probe, const corpus::Chart& chart, const std::string& image_path,
                              providers::ProviderClient& provider);

struct VerifyProviders {
  providers::ProviderClient* text_gen = nullptr;
  providers::ProviderClient* vision_gen = nullptr;
  providers::ProviderClient* judge = nullptr;
};

/// Material a keypoint is checked against. For a text keypoint `chunk` is its
/// source and `chart` the paired chart (or null when the document has none);
/// for a chart keypoint the roles swap.
struct VerifyInputs {
  const corpus::TextChunk* chunk = nullptr;
  const corpus::Chart* chart = nullptr;
  std::string chart_image_path;
};

/// Runs probe → text answer → chart answer, judges both answers against the
/// statement and updates the keypoint's status. With `strict` off a
/// BackendUnavailable drops the keypoint (judge_unavailable) instead of
/// propagating.
VerificationRecord verify(keypoints::Keypoint& keypoint, const VerifyInputs& inputs, const VerifyProviders& providers,
                          bool strict = false);

/// Nearest block of the other modality in the same document, ties to the
/// earlier block. Returns the index into `candidates_positions` or npos.
std::size_t nearest_by_position(std::size_t position, const std::vector<std::size_t>& candidate_positions);

/// Resolves VerifyInputs for a keypoint from the corpus using the
/// nearest-in-document-order pairing.
VerifyInputs pair_sources(const keypoints::Keypoint& keypoint, const corpus::Corpus& corpus);

void to_json(nlohmann::json& j, const VerificationRecord& r);
void from_json(const nlohmann::json& j, VerificationRecord& r);

}  // namespace charge::verification
