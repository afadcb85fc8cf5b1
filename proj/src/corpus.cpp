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

#include "charge/corpus.hpp"

#include "charge/error.hpp"
#include "charge/jsonl.hpp"
#include "charge/providers.hpp"
#include "charge/text.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace charge::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

UChar32 code_point_at(std::string_view s, std::size_t pos) {
  int32_t i = static_cast<int32_t>(pos);
  UChar32 c = 0;
  U8_NEXT(reinterpret_cast<const uint8_t*>(s.data()), i, static_cast<int32_t>(s.size()), c);
  return c;
}

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

bool starts_with_any(std::string_view s, std::size_t pos, std::initializer_list<std::string_view> prefixes) {
  for (auto p : prefixes) {
    if (s.substr(pos, p.size()) == p) return true;
  }
  return false;
}

bool opens_sentence(std::string_view s, std::size_t pos) {
  if (pos >= s.size()) return false;
  char c = s[pos];
  if (c == '"' || c == '\'' || c == '(' || std::isdigit(static_cast<unsigned char>(c))) return true;
  if (starts_with_any(s, pos, {"“", "‘"})) return true;
  return u_isupper(code_point_at(s, pos)) || u_istitle(code_point_at(s, pos));
}

constexpr std::array<std::string_view, 30> kAbbreviations = {
    "mr.",   "mrs.",  "ms.",   "dr.",  "prof.", "sr.",  "jr.",   "st.",  "vs.",  "etc.",
    "e.g.",  "i.e.",  "u.s.",  "u.k.", "no.",   "inc.", "ltd.",  "co.",  "corp.", "approx.",
    "fig.",  "al.",   "jan.",  "feb.", "aug.",  "sept.", "oct.", "nov.", "dec.", "gov."};

bool is_abbreviation(std::string_view text, std::size_t dot) {
  std::size_t start = text.rfind(' ', dot);
  start = start == std::string_view::npos ? 0 : start + 1;
  std::string word(text.substr(start, dot - start + 1));
  while (!word.empty() && (word.front() == '(' || word.front() == '"')) word.erase(word.begin());
  std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

}  // namespace

std::string ChartValues::serialize() const {
  std::string out;
  for (const auto& e : entries) {
    out += e.label;
    if (e.series) out += " (" + *e.series + ")";
    out += ": " + format_number(e.value);
    if (e.unit) out += *e.unit == "%" ? "%" : " " + *e.unit;
    out += "\n";
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view raw) {
  const std::string text = text::collapse_whitespace(raw);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c != '.' && c != '?' && c != '!') continue;
    std::size_t end = i + 1;
    while (end < text.size() && is_closer(text[end])) ++end;
    while (end < text.size() && starts_with_any(text, end, {"”", "’"})) end += 3;
    if (end >= text.size() || text[end] != ' ') continue;
    if (!opens_sentence(text, end + 1)) continue;
    if (c == '.' && is_abbreviation(text, i)) continue;
    out.push_back(text.substr(start, end - start));
    start = end + 1;
    i = end;
  }
  if (start < text.size()) out.push_back(text.substr(start));
  return out;
}

std::vector<TextChunk> chunk_text(std::string_view input, std::size_t target_words) {
  if (target_words < 5) throw Error(ErrorCode::PreconditionFailed, "target_words must be at least 5");
  std::vector<TextChunk> chunks;
  TextChunk current;
  auto emit = [&] {
    if (current.sentences.empty()) return;
    std::string joined;
    for (const auto& s : current.sentences) {
      if (!joined.empty()) joined.push_back(' ');
      joined += s;
    }
    current.text = std::move(joined);
    chunks.push_back(std::move(current));
    current = TextChunk{};
  };
  for (auto& sentence : split_sentences(input)) {
    std::size_t words = text::word_count(sentence);
    if (!current.sentences.empty() && current.word_count + words > target_words) emit();
    current.sentences.push_back(std::move(sentence));
    current.word_count += words;
  }
  emit();
  return chunks;
}

DocumentBundle DocumentBundle::from_json(const json& j, const std::string& base_dir) {
  DocumentBundle b;
  b.title = j.value("title", "");
  b.source_uri = j.value("source_uri", "");
  b.domain_tag = j.value("domain_tag", "");
  for (const auto& block : j.value("blocks", json::array())) {
    BundleBlock bb;
    if (block.contains("text")) bb.text = block.at("text").get<std::string>();
    if (block.contains("image")) {
      fs::path p = block.at("image").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
      bb.image_path = p.lexically_normal().string();
    }
    if (block.contains("caption")) bb.caption = block.at("caption").get<std::string>();
    b.blocks.push_back(std::move(bb));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Corpus

const Document* Corpus::find_document(const std::string& id) const {
  auto it = doc_index_.find(id);
  return it == doc_index_.end() ? nullptr : &documents_[it->second];
}

const TextChunk* Corpus::find_chunk(const std::string& id) const {
  auto it = chunk_index_.find(id);
  return it == chunk_index_.end() ? nullptr : &chunks_[it->second];
}

const Chart* Corpus::find_chart(const std::string& id) const {
  auto it = chart_index_.find(id);
  return it == chart_index_.end() ? nullptr : &charts_[it->second];
}

std::string Corpus::image_path(const Chart& chart) const {
  fs::path p(chart.image_ref);
  if (p.is_absolute() || root_.empty()) return p.string();
  return (fs::path(root_) / p).string();
}

void Corpus::add(Document doc, std::vector<TextChunk> chunks, std::vector<Chart> charts) {
  if (doc_index_.count(doc.doc_id)) return;
  for (const auto& id : doc.chunk_ids) {
    if (std::none_of(chunks.begin(), chunks.end(), [&](const TextChunk& c) { return c.chunk_id == id; })) {
      throw Error(ErrorCode::PreconditionFailed, "document references missing chunk " + id);
    }
  }
  for (auto& c : chunks) chunks_.push_back(std::move(c));
  for (auto& c : charts) charts_.push_back(std::move(c));
  documents_.push_back(std::move(doc));
  reindex();
}

void Corpus::reindex() {
  doc_index_.clear();
  chunk_index_.clear();
  chart_index_.clear();
  for (std::size_t i = 0; i < documents_.size(); ++i) doc_index_[documents_[i].doc_id] = i;
  for (std::size_t i = 0; i < chunks_.size(); ++i) chunk_index_[chunks_[i].chunk_id] = i;
  for (std::size_t i = 0; i < charts_.size(); ++i) chart_index_[charts_[i].chart_id] = i;
}

void Corpus::save() const {
  if (root_.empty()) throw Error(ErrorCode::Io, "corpus has no root directory");
  fs::create_directories(fs::path(root_) / "images");
  jsonl::write_all((fs::path(root_) / "corpus.jsonl").string(), documents_);
  jsonl::write_all((fs::path(root_) / "chunks.jsonl").string(), chunks_);
  jsonl::write_all((fs::path(root_) / "charts.jsonl").string(), charts_);
}

Corpus Corpus::load(const std::string& root) {
  Corpus c(root);
  for (const char* name : {"corpus.jsonl", "chunks.jsonl", "charts.jsonl"}) {
    if (!fs::exists(fs::path(root) / name)) {
      throw Error(ErrorCode::MissingStageInput, (fs::path(root) / name).string());
    }
  }
  c.documents_ = jsonl::read_as<Document>((fs::path(root) / "corpus.jsonl").string());
  c.chunks_ = jsonl::read_as<TextChunk>((fs::path(root) / "chunks.jsonl").string());
  c.charts_ = jsonl::read_as<Chart>((fs::path(root) / "charts.jsonl").string());
  c.reindex();
  return c;
}

// ---------------------------------------------------------------------------
// Ingestion

Chart register_chart(const std::string& image_path, providers::ProviderClient& ocr) {
  std::error_code ec;
  if (image_path.empty() || !fs::is_regular_file(image_path, ec)) {
    throw Error(ErrorCode::UnreadableImage, image_path.empty() ? "<empty handle>" : image_path);
  }
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::ocr;
  req.template_id = "chart_ocr";
  req.slots["image"] = providers::SlotValue::image(image_path);
  providers::ProviderResponse r = ocr.call(req);

  Chart chart;
  chart.image_ref = image_path;
  std::optional<json> payload = r.structured;
  if (!payload && r.text) payload = providers::parse_json_payload(*r.text);
  if (!payload || !payload->is_object() || payload->contains("error")) {
    if (r.text && !payload) chart.values.raw_ocr_text = *r.text;
    return chart;
  }
  chart.values.raw_ocr_text = payload->value("raw_ocr_text", "");
  for (const auto& e : payload->value("entries", json::array())) {
    if (!e.is_object() || !e.contains("label") || !e.contains("value") || !e.at("value").is_number()) continue;
    ChartEntry entry = e.get<ChartEntry>();
    if (!std::isfinite(entry.value)) continue;
    chart.values.entries.push_back(std::move(entry));
  }
  return chart;
}

const Document& ingest_document(Corpus& corpus, const DocumentBundle& bundle, providers::ProviderClient& ocr,
                                std::size_t target_words) {
  bool has_content = false;
  json canonical_blocks = json::array();
  std::vector<std::string> image_bytes(bundle.blocks.size());
  for (std::size_t i = 0; i < bundle.blocks.size(); ++i) {
    const auto& block = bundle.blocks[i];
    json cb = json::object();
    if (block.text && !text::collapse_whitespace(*block.text).empty()) {
      has_content = true;
      cb["text"] = text::collapse_whitespace(*block.text);
    }
    if (block.image_path) {
      std::error_code ec;
      if (!fs::is_regular_file(*block.image_path, ec)) throw Error(ErrorCode::UnreadableImage, *block.image_path);
      image_bytes[i] = text::read_file(*block.image_path);
      cb["image_sha256"] = text::sha256_hex(image_bytes[i]);
      if (block.caption) cb["caption"] = *block.caption;
      has_content = true;
    }
    canonical_blocks.push_back(std::move(cb));
  }
  if (!has_content) throw Error(ErrorCode::EmptyBundle, "bundle '" + bundle.title + "' has no text and no charts");

  json canonical = {{"title", bundle.title},
                    {"source_uri", bundle.source_uri},
                    {"domain_tag", bundle.domain_tag},
                    {"blocks", canonical_blocks}};
  Document doc;
  doc.doc_id = text::short_hash(jsonl::dump(canonical));
  if (const Document* existing = corpus.find_document(doc.doc_id)) return *existing;
  doc.title = bundle.title;
  doc.source_uri = bundle.source_uri;
  doc.domain_tag = bundle.domain_tag;

  std::vector<TextChunk> chunks;
  std::vector<Chart> charts;
  std::size_t position = 0;
  for (std::size_t i = 0; i < bundle.blocks.size(); ++i) {
    const auto& block = bundle.blocks[i];
    if (block.text) {
      for (auto& chunk : chunk_text(*block.text, target_words)) {
        chunk.doc_id = doc.doc_id;
        chunk.chunk_id = text::short_hash(doc.doc_id + "\n" + chunk.text) + "-" + std::to_string(chunks.size());
        chunk.position = position++;
        doc.chunk_ids.push_back(chunk.chunk_id);
        chunks.push_back(std::move(chunk));
      }
    }
    if (block.image_path) {
      Chart chart = register_chart(*block.image_path, ocr);
      chart.chart_id = text::short_hash(doc.doc_id + "\n" + image_bytes[i]) + "-" + std::to_string(charts.size());
      chart.doc_id = doc.doc_id;
      chart.caption = block.caption;
      chart.position = position++;
      if (!corpus.root().empty()) {
        fs::path rel = fs::path("images") / (chart.chart_id + fs::path(*block.image_path).extension().string());
        text::write_file((fs::path(corpus.root()) / rel).string(), image_bytes[i]);
        chart.image_ref = rel.string();
      } else {
        chart.image_ref = *block.image_path;
      }
      doc.chart_ids.push_back(chart.chart_id);
      charts.push_back(std::move(chart));
    }
  }
  std::string id = doc.doc_id;
  corpus.add(std::move(doc), std::move(chunks), std::move(charts));
  return *corpus.find_document(id);
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.documents = corpus.documents().size();
  s.chunks = corpus.chunks().size();
  s.charts = corpus.charts().size();
  if (s.chunks) {
    double total = 0;
    for (const auto& c : corpus.chunks()) total += static_cast<double>(c.word_count);
    s.mean_chunk_words = total / static_cast<double>(s.chunks);
  }
  if (s.charts) {
    double total = 0;
    for (const auto& c : corpus.charts()) total += static_cast<double>(c.values.entries.size());
    s.mean_chart_entries = total / static_cast<double>(s.charts);
  }
  return s;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const ChartEntry& e) {
  j = {{"label", e.label}, {"value", e.value}};
  j["series"] = e.series ? json(*e.series) : json(nullptr);
  j["unit"] = e.unit ? json(*e.unit) : json(nullptr);
}

void from_json(const json& j, ChartEntry& e) {
  e.label = j.at("label").get<std::string>();
  e.value = j.at("value").get<double>();
  e.series = j.contains("series") && j.at("series").is_string() ? std::optional(j.at("series").get<std::string>())
                                                                 : std::nullopt;
  e.unit = j.contains("unit") && j.at("unit").is_string() ? std::optional(j.at("unit").get<std::string>())
                                                           : std::nullopt;
}

void to_json(json& j, const ChartValues& v) { j = {{"entries", v.entries}, {"raw_ocr_text", v.raw_ocr_text}}; }

void from_json(const json& j, ChartValues& v) {
  v.entries = j.value("entries", std::vector<ChartEntry>{});
  v.raw_ocr_text = j.value("raw_ocr_text", "");
}

void to_json(json& j, const TextChunk& c) {
  j = {{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id},         {"text", c.text},
       {"sentences", c.sentences}, {"word_count", c.word_count}, {"position", c.position}};
}

void from_json(const json& j, TextChunk& c) {
  c.chunk_id = j.at("chunk_id").get<std::string>();
  c.doc_id = j.at("doc_id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.sentences = j.at("sentences").get<std::vector<std::string>>();
  c.word_count = j.at("word_count").get<std::size_t>();
  c.position = j.value("position", std::size_t{0});
}

void to_json(json& j, const Chart& c) {
  j = {{"chart_id", c.chart_id}, {"doc_id", c.doc_id},         {"image_ref", c.image_ref},
       {"values", c.values},     {"position", c.position}};
  j["caption"] = c.caption ? json(*c.caption) : json(nullptr);
}

void from_json(const json& j, Chart& c) {
  c.chart_id = j.at("chart_id").get<std::string>();
  c.doc_id = j.at("doc_id").get<std::string>();
  c.image_ref = j.at("image_ref").get<std::string>();
  c.caption = j.contains("caption") && j.at("caption").is_string() ? std::optional(j.at("caption").get<std::string>())
                                                                   : std::nullopt;
  c.values = j.at("values").get<ChartValues>();
  c.position = j.value("position", std::size_t{0});
}

void to_json(json& j, const Document& d) {
  j = {{"doc_id", d.doc_id},       {"title", d.title},          {"source_uri", d.source_uri},
       {"chunk_ids", d.chunk_ids}, {"chart_ids", d.chart_ids}, {"domain_tag", d.domain_tag}};
}

void from_json(const json& j, Document& d) {
  d.doc_id = j.at("doc_id").get<std::string>();
  d.title = j.value("title", "");
  d.source_uri = j.value("source_uri", "");
  d.chunk_ids = j.value("chunk_ids", std::vector<std::string>{});
  d.chart_ids = j.value("chart_ids", std::vector<std::string>{});
  d.domain_tag = j.value("domain_tag", "");
}

void to_json(json& j, const CorpusStats& s) {
  j = {{"documents", s.documents},
       {"chunks", s.chunks},
       {"charts", s.charts},
       {"mean_chunk_words", s.mean_chunk_words},
       {"mean_chart_entries", s.mean_chart_entries}};
}

}  // namespace charge::corpus
