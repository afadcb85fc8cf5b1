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
#include "charge/qagen.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace charge::providers {
class ProviderClient;
}

namespace charge::retrieval {

using keypoints::Modality;

enum class StoreModality { text, chart, mixed };
enum class Architecture { unified_single, caption_combined, separate_fused };

std::string_view to_string(StoreModality m);
std::string_view to_string(Architecture a);
Architecture architecture_from_string(std::string_view s);

inline constexpr double kRrfConstant = 60.0;

/// How separate_fused splits k between the text and chart streams.
struct FusionPolicy {
  enum class Kind { three_to_two, balanced, weighted };
  Kind kind = Kind::three_to_two;
  double text_weight = 3.0;
  double chart_weight = 2.0;

  static FusionPolicy three_to_two() { return {}; }
  static FusionPolicy balanced() { return {Kind::balanced, 1.0, 1.0}; }
  static FusionPolicy weighted(double text, double chart) { return {Kind::weighted, text, chart}; }
  static FusionPolicy parse(std::string_view name);

  std::string name() const;
  /// Text slots before backfill. three_to_two: round(0.6k); balanced:
  /// ceil(k/2); weighted: round(k * wt / (wt + wc)).
  std::size_t text_slots(std::size_t k) const;
};

struct ScoredRef {
  std::string ref_id;
  double score = 0.0;
  Modality modality = Modality::text;
  std::string text;  // chunk text, caption, or empty for raw chart images
};

/// Exhaustive cosine store over unit vectors held as 32-bit floats.
class DenseStore {
 public:
  DenseStore() = default;
  DenseStore(StoreModality modality, std::string embedder_id) : modality_(modality), embedder_id_(std::move(embedder_id)) {}

  /// Normalizes and stores. Throws DimensionMismatch on a dimension change.
  void add(const std::string& ref_id, Modality modality, const std::vector<double>& vec, std::string text = {});

  /// Top-k by cosine, ties broken by ascending ref_id.
  std::vector<ScoredRef> search(const std::vector<double>& query, std::size_t k) const;

  std::size_t size() const { return ids_.size(); }
  std::size_t dimension() const { return dimension_; }
  StoreModality modality() const { return modality_; }
  const std::string& embedder_id() const { return embedder_id_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::vector<double> vector(std::size_t row) const;
  Modality ref_modality(std::size_t row) const { return modalities_[row]; }
  const std::string& ref_text(std::size_t row) const { return texts_[row]; }

  /// `<name>.f32` (row-major little-endian float32) plus `<name>.json`.
  void save(const std::string& dir, const std::string& name) const;
  static DenseStore load(const std::string& dir, const std::string& name);

 private:
  StoreModality modality_ = StoreModality::mixed;
  std::string embedder_id_;
  std::size_t dimension_ = 0;
  std::vector<std::string> ids_;
  std::vector<Modality> modalities_;
  std::vector<std::string> texts_;
  std::vector<float> data_;
};

/// Okapi BM25 over the text tokenizer. idf uses the non-negative
/// ln(1 + (N - df + 0.5) / (df + 0.5)) form.
class SparseIndex {
 public:
  explicit SparseIndex(double k1 = 1.2, double b = 0.75) : k1_(k1), b_(b) {}

  void add(const std::string& ref_id, Modality modality, const std::string& text);

  double score(const std::vector<std::string>& query_terms, const std::string& ref_id) const;
  std::vector<ScoredRef> search(const std::string& query, std::size_t k) const;

  double idf(const std::string& term) const;
  double avgdl() const;
  std::size_t size() const { return ids_.size(); }
  double k1() const { return k1_; }
  double b() const { return b_; }
  /// term → (ref_id, tf) in insertion order.
  const std::map<std::string, std::vector<std::pair<std::string, std::size_t>>>& postings() const { return postings_; }

  void save(const std::string& dir) const;
  static SparseIndex load(const std::string& dir);

 private:
  double k1_;
  double b_;
  std::vector<std::string> ids_;
  std::vector<Modality> modalities_;
  std::vector<std::string> texts_;
  std::vector<std::size_t> lengths_;
  std::map<std::string, std::size_t> row_of_;
  std::map<std::string, std::vector<std::pair<std::string, std::size_t>>> postings_;
  std::size_t total_length_ = 0;
};

double bm25_score(const SparseIndex& index, const std::vector<std::string>& query_terms, const std::string& ref_id);

struct Embedders {
  providers::ProviderClient* text = nullptr;
  /// Image-capable embedder; its text side encodes queries against chart vectors.
  providers::ProviderClient* image = nullptr;
};

struct IndexSet {
  Architecture architecture = Architecture::separate_fused;
  std::optional<DenseStore> unified;
  std::optional<DenseStore> text;
  std::optional<DenseStore> chart;
  std::optional<SparseIndex> sparse;

  void save(const std::string& dir) const;
  static IndexSet load(const std::string& dir);
};

struct SparseParams {
  double k1 = 1.2;
  double b = 0.75;
};

/// Text summary of a chart from the captioner slot (template "caption_chart").
std::string caption_chart(const corpus::Chart& chart, const std::string& image_path,
                          providers::ProviderClient& captioner);

IndexSet index_unified(const corpus::Corpus& corpus, const Embedders& embedders);
IndexSet index_caption_combined(const corpus::Corpus& corpus, providers::ProviderClient& captioner,
                                const Embedders& embedders, const SparseParams& sparse = {});
IndexSet index_separate(const corpus::Corpus& corpus, const Embedders& embedders,
                        const std::optional<SparseParams>& sparse = SparseParams{});

struct RetrievedSet {
  std::string query_id;
  std::vector<ScoredRef> refs;
  std::size_t k = 0;
  Architecture architecture = Architecture::separate_fused;
};

/// Reciprocal-rank fusion of ranked lists; ties by ref_id.
std::vector<ScoredRef> reciprocal_rank_fusion(const std::vector<std::vector<ScoredRef>>& lists, std::size_t k,
                                              double constant = kRrfConstant);

RetrievedSet search(const IndexSet& indexes, const std::string& query, std::size_t k, const FusionPolicy& policy,
                    const Embedders& embedders, std::string query_id = {});

struct SlotCounts {
  std::size_t text = 0;
  std::size_t chart = 0;
};

/// Slot split with backfill: a short stream hands its deficit to the other.
SlotCounts allocate_slots(std::size_t k, const FusionPolicy& policy, std::size_t text_available,
                          std::size_t chart_available);

struct GroundTruthRef {
  std::string ref_id;
  Modality modality = Modality::text;
  std::vector<std::string> sentences;
};

struct GroundTruthRefs {
  std::vector<GroundTruthRef> refs;

  static GroundTruthRefs from_pair(const qagen::QAPair& pair, const corpus::Corpus& corpus);
};

/// Fraction of ground-truth references matched: a text reference needs every
/// one of its sentences inside some retrieved ref's text (normalized
/// substring); a chart reference needs its exact ref_id.
double recall_at_k(const RetrievedSet& retrieved, const GroundTruthRefs& gt);

void to_json(nlohmann::json& j, const ScoredRef& r);
void from_json(const nlohmann::json& j, ScoredRef& r);
void to_json(nlohmann::json& j, const RetrievedSet& r);
void from_json(const nlohmann::json& j, RetrievedSet& r);

}  // namespace charge::retrieval
