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
#include "charge/qagen.hpp"
#include "charge/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace charge::providers {
class ProviderClient;
}

namespace charge::evaluation {

enum class Mode { no_rag, rag_k, gt_retrieval };

std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct EvalCondition {
  Mode mode = Mode::no_rag;
  std::optional<std::size_t> k;
  std::optional<retrieval::Architecture> architecture;
  std::optional<retrieval::FusionPolicy> ratio;

  static EvalCondition no_rag() { return {}; }
  static EvalCondition rag(std::size_t k, retrieval::Architecture arch,
                           retrieval::FusionPolicy ratio = retrieval::FusionPolicy::three_to_two()) {
    return {Mode::rag_k, k, arch, ratio};
  }
  static EvalCondition gt() { return {Mode::gt_retrieval, std::nullopt, std::nullopt, std::nullopt}; }

  /// rag_k requires k and an architecture. Throws ConfigInvalid.
  void validate() const;
  /// "no_rag", "rag_k=5", "gt_retrieval".
  std::string label() const;
};

/// A retrieved or ground-truth source handed to the responder.
struct ContextItem {
  std::string ref_id;
  keypoints::Modality modality = keypoints::Modality::text;
  std::string text;
  std::string image_path;
  std::string chart_values;
};

std::vector<ContextItem> context_from_retrieved(const retrieval::RetrievedSet& retrieved, const corpus::Corpus& corpus);
std::vector<ContextItem> context_from_gt(const qagen::QAPair& pair, const corpus::Corpus& corpus);

/// Renders the no-context template for no_rag, otherwise the context
/// template with one block per item. The response is returned verbatim.
std::string answer(const std::string& question, const EvalCondition& condition,
                   const std::vector<ContextItem>& context, providers::ProviderClient& responder);

std::vector<std::string> extract_response_keypoints(const std::string& response, const std::string& question,
                                                    providers::ProviderClient& extractor);

struct MatchResult {
  /// Indices into the ground-truth list, in ground-truth order.
  std::vector<std::size_t> matched_gt;
  /// (extracted index, gt index) pairs.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t extracted_count = 0;
  std::size_t gt_count = 0;
  bool perfect = false;
};

using Equivalence = std::function<bool(std::size_t extracted, std::size_t gt)>;

/// Maximum bipartite matching. Extracted items are taken in emission order
/// and first try ground-truth items in dataset order; augmenting paths then
/// repair any greedy choice that blocks a later item. The predicate is
/// evaluated lazily and at most once per pair.
MatchResult match_keypoints(std::size_t extracted_count, std::size_t gt_count, const Equivalence& equivalent);

/// Convenience overload: equivalence via judge_equivalent.
MatchResult match_keypoints(const std::vector<std::string>& extracted, const std::vector<std::string>& gt_statements,
                            providers::ProviderClient* judge);

int correctness(const MatchResult& m);
double coverage(const MatchResult& m);

struct EvalRecord {
  std::string qa_id;
  qagen::QACategory category;
  std::string condition;
  std::string response;
  std::vector<std::string> extracted;
  std::vector<std::string> matched_gt;  // kp ids
  std::size_t gt_count = 0;
  int correctness = 0;
  double coverage = 0.0;
  std::optional<double> recall;
  bool failed = false;
  std::string error;
};

struct SuiteProviders {
  providers::ProviderClient* responder = nullptr;
  providers::ProviderClient* extractor = nullptr;  // response keypoint extraction
  providers::ProviderClient* judge = nullptr;
};

struct RetrievalContext {
  const retrieval::IndexSet* indexes = nullptr;
  retrieval::Embedders embedders;
};

struct Cell {
  std::size_t n = 0;
  double correctness = 0.0;  // percent, 2 decimals
  double coverage = 0.0;
  std::optional<double> recall;
};

struct Report {
  /// condition label → ("overall" or category label) → cell.
  std::map<std::string, std::map<std::string, Cell>> cells;
  std::map<std::string, std::size_t> failures;
  std::vector<std::string> condition_order;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Means per (condition, category) and overall, as percentages rounded to two
/// decimals. Pure function of the records.
Report summarize(const std::vector<EvalRecord>& records, const std::vector<std::string>& condition_order);

struct SuiteResult {
  std::vector<EvalRecord> records;
  Report report;
};

/// Scores every pair under every condition. A provider failure on an item is
/// recorded, scored (0, 0) and counted rather than excluded.
SuiteResult run_suite(const std::vector<qagen::QAPair>& dataset, const std::vector<keypoints::Keypoint>& keypoints,
                      const std::vector<EvalCondition>& conditions, const corpus::Corpus& corpus,
                      const SuiteProviders& providers, const RetrievalContext& retrieval);

/// Writes records.jsonl, report.json and report.txt into `dir`.
void write_suite(const SuiteResult& result, const std::string& dir);

struct BiasProbe {
  std::string qa_id;
  std::string text_phrasing;
  std::string chart_phrasing;
};

enum class Preference { text_phrasing, chart_phrasing, both_acknowledged, neither };

std::string_view to_string(Preference p);

/// Verbatim (normalized) containment decides when possible; otherwise the
/// judge classifies the response.
Preference modality_preference(const std::string& response, const BiasProbe& probe, providers::ProviderClient* judge);

void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);

}  // namespace charge::evaluation
