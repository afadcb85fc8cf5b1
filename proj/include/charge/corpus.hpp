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

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace charge::providers {
class ProviderClient;
}

namespace charge::corpus {

inline constexpr std::size_t kDefaultTargetWords = 25;

struct ChartEntry {
  std::string label;
  std::optional<std::string> series;
  double value = 0.0;
  std::optional<std::string> unit;

  bool operator==(const ChartEntry&) const = default;
};

/// Values read off a chart by the OCR provider. Empty entries is a valid
/// state: it records an OCR failure rather than raising one.
struct ChartValues {
  std::vector<ChartEntry> entries;
  std::string raw_ocr_text;

  /// One "label (series): value unit" line per entry, used in prompts.
  std::string serialize() const;
};

struct TextChunk {
  std::string chunk_id;
  std::string doc_id;
  std::string text;
  std::vector<std::string> sentences;
  std::size_t word_count = 0;
  /// Index of the chunk among all blocks of its document (charts included).
  std::size_t position = 0;
};

struct Chart {
  std::string chart_id;
  std::string doc_id;
  /// Path relative to the corpus directory, e.g. "images/<chart_id>.svg".
  std::string image_ref;
  std::optional<std::string> caption;
  ChartValues values;
  std::size_t position = 0;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string source_uri;
  std::vector<std::string> chunk_ids;
  std::vector<std::string> chart_ids;
  std::string domain_tag;
};

/// Raw input for ingestion: ordered blocks, each either a paragraph of text or
/// a chart image on disk.
struct BundleBlock {
  std::optional<std::string> text;
  std::optional<std::string> image_path;
  std::optional<std::string> caption;
};

struct DocumentBundle {
  std::string title;
  std::string source_uri;
  std::string domain_tag;
  std::vector<BundleBlock> blocks;

  /// Parses the bundle JSON format; relative image paths resolve against
  /// `base_dir`.
  static DocumentBundle from_json(const nlohmann::json& j, const std::string& base_dir);
};

std::vector<std::string> split_sentences(std::string_view text);

/// Greedy sentence packing. Sentences are never split; a chunk is emitted as
/// soon as the next sentence would push it past `target_words`.
std::vector<TextChunk> chunk_text(std::string_view text, std::size_t target_words = kDefaultTargetWords);

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t chunks = 0;
  std::size_t charts = 0;
  double mean_chunk_words = 0.0;
  double mean_chart_entries = 0.0;
};

/// In-memory corpus backed by a directory of JSONL files plus an image blob
/// folder. Append-only while ingesting.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::string root) : root_(std::move(root)) {}

  const std::string& root() const { return root_; }

  const std::vector<Document>& documents() const { return documents_; }
  const std::vector<TextChunk>& chunks() const { return chunks_; }
  const std::vector<Chart>& charts() const { return charts_; }

  const Document* find_document(const std::string& doc_id) const;
  const TextChunk* find_chunk(const std::string& chunk_id) const;
  const Chart* find_chart(const std::string& chart_id) const;

  /// Absolute (root-joined) path of a chart's image.
  std::string image_path(const Chart& chart) const;

  void add(Document doc, std::vector<TextChunk> chunks, std::vector<Chart> charts);

  void save() const;
  static Corpus load(const std::string& root);

 private:
  void reindex();

  std::string root_;
  std::vector<Document> documents_;
  std::vector<TextChunk> chunks_;
  std::vector<Chart> charts_;
  std::map<std::string, std::size_t> doc_index_;
  std::map<std::string, std::size_t> chunk_index_;
  std::map<std::string, std::size_t> chart_index_;
};

/// Chunks the text blocks, runs OCR on every chart and copies chart images
/// into the corpus blob folder. Ids derive from content hashes, so ingesting
/// the same bundle twice yields identical ids.
const Document& ingest_document(Corpus& corpus, const DocumentBundle& bundle, providers::ProviderClient& ocr,
                                std::size_t target_words = kDefaultTargetWords);

/// Runs the OCR provider on an image. A provider-reported failure yields a
/// chart with empty values; an unreadable handle throws UnreadableImage.
Chart register_chart(const std::string& image_path, providers::ProviderClient& ocr);

CorpusStats corpus_stats(const Corpus& corpus);

void to_json(nlohmann::json& j, const ChartEntry& e);
void from_json(const nlohmann::json& j, ChartEntry& e);
void to_json(nlohmann::json& j, const ChartValues& v);
void from_json(const nlohmann::json& j, ChartValues& v);
void to_json(nlohmann::json& j, const TextChunk& c);
void from_json(const nlohmann::json& j, TextChunk& c);
void to_json(nlohmann::json& j, const Chart& c);
void from_json(const nlohmann::json& j, Chart& c);
void to_json(nlohmann::json& j, const Document& d);
void from_json(const nlohmann::json& j, Document& d);
void to_json(nlohmann::json& j, const CorpusStats& s);

}  // namespace charge::corpus
