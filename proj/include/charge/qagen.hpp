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

#include <array>
#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace charge::providers {
class ProviderClient;
}

namespace charge::qagen {

enum class Scope { single_point, intra_document, inter_document };
enum class CategoryModality { text_only, chart_only, text_chart };

std::string_view to_string(Scope s);
std::string_view to_string(CategoryModality m);

/// One of the eight valid (scope, modality) combinations. The combination
/// (single_point, text_chart) cannot be constructed.
class QACategory {
 public:
  QACategory() = default;  // single_point / text_only

  static std::optional<QACategory> make(Scope scope, CategoryModality modality);
  static QACategory parse(std::string_view label);
  /// The eight categories in reporting order.
  static const std::array<QACategory, 8>& all();

  Scope scope() const { return scope_; }
  CategoryModality modality() const { return modality_; }
  int hops() const { return scope_ == Scope::single_point ? 1 : 2; }
  std::string label() const;

  auto operator<=>(const QACategory&) const = default;

 private:
  QACategory(Scope s, CategoryModality m) : scope_(s), modality_(m) {}

  Scope scope_ = Scope::single_point;
  CategoryModality modality_ = CategoryModality::text_only;
};

enum class ReviewState { pending, accepted, rejected };
enum class RejectionReason { ocr_error, redundant, other };

std::string_view to_string(ReviewState s);
std::string_view to_string(RejectionReason r);
RejectionReason rejection_reason_from_string(std::string_view s);

struct GtSource {
  std::string doc_id;
  std::string source_id;
  keypoints::Modality modality = keypoints::Modality::text;

  bool operator==(const GtSource&) const = default;
};

struct QAPair {
  std::string qa_id;
  std::string question;
  std::string answer;
  QACategory category;
  int hops = 1;
  std::vector<std::string> gt_keypoints;
  std::vector<GtSource> gt_sources;
  ReviewState review_state = ReviewState::pending;
  std::optional<RejectionReason> rejection_reason;
};

/// Returns every violated QAPair invariant (empty when valid). Keypoints are
/// looked up to check that gt_sources are exactly their sources.
std::vector<std::string> check_invariants(const QAPair& pair,
                                          const std::map<std::string, keypoints::Keypoint>& keypoints_by_id);

class KeypointIndex {
 public:
  static KeypointIndex build(const std::vector<keypoints::Keypoint>& kps, providers::ProviderClient& embedder);

  void add(const std::string& kp_id, std::vector<double> unit_vector);
  bool contains(const std::string& kp_id) const { return entries_.count(kp_id) != 0; }
  const std::vector<double>& vector(const std::string& kp_id) const;
  const std::map<std::string, std::vector<double>>& entries() const { return entries_; }
  std::size_t dimension() const { return dimension_; }
  std::string embedder_id;

 private:
  std::map<std::string, std::vector<double>> entries_;
  std::size_t dimension_ = 0;
};

using PoolFilter = std::function<bool(const std::string& kp_id)>;

/// Top-k by cosine over the filtered pool, excluding `selected`; ties by
/// ascending kp_id.
std::vector<std::pair<std::string, double>> retrieve_related(const std::string& selected, const KeypointIndex& index,
                                                             std::size_t k, const PoolFilter& filter = {});

QACategory categorize(const keypoints::Keypoint& selected, const keypoints::Keypoint& retrieved);

/// Source material behind a keypoint.
struct SourceMaterial {
  const corpus::TextChunk* chunk = nullptr;
  const corpus::Chart* chart = nullptr;
  std::string image_path;

  static SourceMaterial for_keypoint(const keypoints::Keypoint& kp, const corpus::Corpus& corpus);
};

struct GenProviders {
  providers::ProviderClient* text_gen = nullptr;
  providers::ProviderClient* vision_gen = nullptr;  // used whenever a chart is involved
};

QAPair generate_single_point(const keypoints::Keypoint& keypoint, const SourceMaterial& material,
                             const GenProviders& providers);

QAPair generate_multihop(const keypoints::Keypoint& selected, const keypoints::Keypoint& retrieved,
                         const SourceMaterial& selected_material, const SourceMaterial& retrieved_material,
                         const GenProviders& providers);

struct BuildOptions {
  std::uint64_t seed = 0;
  std::size_t retrieval_k = 10;
  double dedup_threshold = 0.95;
  std::size_t retry_budget = 5;
};

struct CategoryOutcome {
  std::size_t quota = 0;
  std::size_t produced = 0;
  std::size_t duplicates_discarded = 0;
  bool pool_exhausted = false;
};

struct BuildResult {
  std::vector<QAPair> pairs;
  std::map<QACategory, CategoryOutcome> outcomes;
  nlohmann::json manifest;
};

/// Name of the pinned random stream recorded in the manifest.
inline constexpr std::string_view kRngName = "mt19937_64";

/// Generates pairs category by category in reporting order. Selected
/// keypoints are drawn without replacement from a per-category seeded stream;
/// partners come from retrieve_related restricted to the category's pool.
BuildResult build_dataset(const corpus::Corpus& corpus, const std::vector<keypoints::Keypoint>& retained,
                          const std::map<QACategory, std::size_t>& quotas, const BuildOptions& options,
                          const GenProviders& providers, providers::ProviderClient& embedder);

void to_json(nlohmann::json& j, const QACategory& c);
void from_json(const nlohmann::json& j, QACategory& c);
void to_json(nlohmann::json& j, const GtSource& s);
void from_json(const nlohmann::json& j, GtSource& s);
void to_json(nlohmann::json& j, const QAPair& p);
void from_json(const nlohmann::json& j, QAPair& p);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace charge::qagen
