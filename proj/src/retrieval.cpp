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

#include "charge/retrieval.hpp"

#include "charge/error.hpp"
#include "charge/jsonl.hpp"
#include "charge/providers.hpp"
#include "charge/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace charge::retrieval {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(StoreModality m) {
  switch (m) {
    case StoreModality::text: return "text";
    case StoreModality::chart: return "chart";
    case StoreModality::mixed: return "mixed";
  }
  return "mixed";
}

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::unified_single: return "unified_single";
    case Architecture::caption_combined: return "caption_combined";
    case Architecture::separate_fused: return "separate_fused";
  }
  return "separate_fused";
}

Architecture architecture_from_string(std::string_view s) {
  if (s == "unified_single" || s == "unified") return Architecture::unified_single;
  if (s == "caption_combined" || s == "caption") return Architecture::caption_combined;
  if (s == "separate_fused" || s == "separate") return Architecture::separate_fused;
  throw Error(ErrorCode::ConfigInvalid, "unknown architecture '" + std::string(s) + "'");
}

namespace {

StoreModality store_modality_from_string(std::string_view s) {
  for (auto m : {StoreModality::text, StoreModality::chart, StoreModality::mixed}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::Io, "unknown store modality '" + std::string(s) + "'");
}

bool ranks_before(const ScoredRef& a, const ScoredRef& b) {
  return a.score != b.score ? a.score > b.score : a.ref_id < b.ref_id;
}

}  // namespace

// ---------------------------------------------------------------------------
// FusionPolicy

FusionPolicy FusionPolicy::parse(std::string_view name) {
  if (name == "three_to_two" || name == "3:2") return three_to_two();
  if (name == "balanced") return balanced();
  if (name.substr(0, 9) == "weighted:") {
    std::string rest(name.substr(9));
    auto colon = rest.find(':');
    if (colon != std::string::npos) {
      try {
        double t = std::stod(rest.substr(0, colon));
        double c = std::stod(rest.substr(colon + 1));
        if (t >= 0 && c >= 0 && t + c > 0) return weighted(t, c);
      } catch (const std::exception&) {
      }
    }
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown ratio policy '" + std::string(name) + "'");
}

std::string FusionPolicy::name() const {
  switch (kind) {
    case Kind::three_to_two: return "three_to_two";
    case Kind::balanced: return "balanced";
    case Kind::weighted: {
      json t = text_weight, c = chart_weight;
      return "weighted:" + t.dump() + ":" + c.dump();
    }
  }
  return "three_to_two";
}

std::size_t FusionPolicy::text_slots(std::size_t k) const {
  switch (kind) {
    case Kind::three_to_two: return (6 * k + 5) / 10;
    case Kind::balanced: return (k + 1) / 2;
    case Kind::weighted: {
      double total = text_weight + chart_weight;
      if (total <= 0) throw Error(ErrorCode::ConfigInvalid, "fusion weights must sum to a positive value");
      return static_cast<std::size_t>(std::llround(static_cast<double>(k) * text_weight / total));
    }
  }
  return k;
}

SlotCounts allocate_slots(std::size_t k, const FusionPolicy& policy, std::size_t text_available,
                          std::size_t chart_available) {
  SlotCounts s;
  s.text = std::min(policy.text_slots(k), k);
  s.chart = k - s.text;
  if (s.text > text_available) {
    s.chart += s.text - text_available;
    s.text = text_available;
  }
  if (s.chart > chart_available) {
    std::size_t deficit = s.chart - chart_available;
    s.chart = chart_available;
    s.text = std::min(text_available, s.text + deficit);
  }
  return s;
}

// ---------------------------------------------------------------------------
// DenseStore

void DenseStore::add(const std::string& ref_id, Modality modality, const std::vector<double>& vec, std::string text) {
  if (vec.empty()) throw Error(ErrorCode::DimensionMismatch, "empty vector for " + ref_id);
  if (dimension_ == 0) dimension_ = vec.size();
  if (vec.size() != dimension_) {
    throw Error(ErrorCode::DimensionMismatch, "vector for " + ref_id + " has dimension " + std::to_string(vec.size()) +
                                                  ", store has " + std::to_string(dimension_));
  }
  double norm = 0;
  for (double x : vec) norm += x * x;
  norm = std::sqrt(norm);
  for (double x : vec) data_.push_back(static_cast<float>(norm > 0 ? x / norm : 0.0));
  ids_.push_back(ref_id);
  modalities_.push_back(modality);
  texts_.push_back(std::move(text));
}

std::vector<double> DenseStore::vector(std::size_t row) const {
  return {data_.begin() + static_cast<std::ptrdiff_t>(row * dimension_),
          data_.begin() + static_cast<std::ptrdiff_t>((row + 1) * dimension_)};
}

std::vector<ScoredRef> DenseStore::search(const std::vector<double>& query, std::size_t k) const {
  if (ids_.empty()) return {};
  if (query.size() != dimension_) {
    throw Error(ErrorCode::DimensionMismatch, "query dimension " + std::to_string(query.size()) + ", store has " +
                                                  std::to_string(dimension_));
  }
  double qn = 0;
  for (double x : query) qn += x * x;
  qn = std::sqrt(qn);
  std::vector<ScoredRef> scored;
  scored.reserve(ids_.size());
  for (std::size_t row = 0; row < ids_.size(); ++row) {
    double dot = 0;
    const float* v = data_.data() + row * dimension_;
    for (std::size_t i = 0; i < dimension_; ++i) dot += static_cast<double>(v[i]) * query[i];
    scored.push_back({ids_[row], qn > 0 ? dot / qn : 0.0, modalities_[row], texts_[row]});
  }
  std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), ranks_before);
  scored.resize(n);
  return scored;
}

void DenseStore::save(const std::string& dir, const std::string& name) const {
  std::string bytes;
  bytes.reserve(data_.size() * 4);
  for (float f : data_) {
    std::uint32_t u;
    std::memcpy(&u, &f, sizeof u);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  text::write_file((fs::path(dir) / (name + ".f32")).string(), bytes);
  json modalities = json::array();
  for (auto m : modalities_) modalities.push_back(keypoints::to_string(m));
  json sidecar = {{"modality", to_string(modality_)}, {"embedder_id", embedder_id_}, {"dimension", dimension_},
                  {"ids", ids_},                      {"modalities", modalities},   {"texts", texts_}};
  text::write_file((fs::path(dir) / (name + ".json")).string(), sidecar.dump(2) + "\n");
}

DenseStore DenseStore::load(const std::string& dir, const std::string& name) {
  auto sidecar_path = (fs::path(dir) / (name + ".json")).string();
  auto data_path = (fs::path(dir) / (name + ".f32")).string();
  if (!fs::exists(sidecar_path)) throw Error(ErrorCode::MissingStageInput, sidecar_path);
  if (!fs::exists(data_path)) throw Error(ErrorCode::MissingStageInput, data_path);
  json j = json::parse(text::read_file(sidecar_path));
  DenseStore s(store_modality_from_string(j.at("modality").get<std::string>()), j.at("embedder_id").get<std::string>());
  s.dimension_ = j.at("dimension").get<std::size_t>();
  s.ids_ = j.at("ids").get<std::vector<std::string>>();
  for (const auto& m : j.at("modalities")) s.modalities_.push_back(keypoints::modality_from_string(m.get<std::string>()));
  s.texts_ = j.at("texts").get<std::vector<std::string>>();
  std::string bytes = text::read_file(data_path);
  if (bytes.size() != s.ids_.size() * s.dimension_ * 4 || s.modalities_.size() != s.ids_.size() ||
      s.texts_.size() != s.ids_.size()) {
    throw Error(ErrorCode::Io, "index store '" + name + "' in " + dir + " is inconsistent");
  }
  s.data_.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < s.data_.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    std::memcpy(&s.data_[i], &u, sizeof u);
  }
  return s;
}

// ---------------------------------------------------------------------------
// SparseIndex

void SparseIndex::add(const std::string& ref_id, Modality modality, const std::string& body) {
  if (row_of_.count(ref_id)) throw Error(ErrorCode::PreconditionFailed, "duplicate ref " + ref_id);
  auto tokens = text::tokenize(body);
  std::map<std::string, std::size_t> tf;
  for (const auto& t : tokens) ++tf[t];
  row_of_[ref_id] = ids_.size();
  ids_.push_back(ref_id);
  modalities_.push_back(modality);
  texts_.push_back(body);
  lengths_.push_back(tokens.size());
  total_length_ += tokens.size();
  for (const auto& [term, n] : tf) postings_[term].emplace_back(ref_id, n);
}

double SparseIndex::avgdl() const {
  return ids_.empty() ? 0.0 : static_cast<double>(total_length_) / static_cast<double>(ids_.size());
}

double SparseIndex::idf(const std::string& term) const {
  auto it = postings_.find(term);
  double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  double n = static_cast<double>(ids_.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

namespace {

double term_weight(double idf, double tf, double len, double avgdl, double k1, double b) {
  double norm = avgdl > 0 ? len / avgdl : 1.0;
  return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
}

std::set<std::string> unique_terms(const std::vector<std::string>& terms) {
  std::set<std::string> out;
  for (const auto& t : terms) {
    for (auto& tok : text::tokenize(t)) out.insert(std::move(tok));
  }
  return out;
}

}  // namespace

double SparseIndex::score(const std::vector<std::string>& query_terms, const std::string& ref_id) const {
  auto row = row_of_.find(ref_id);
  if (row == row_of_.end()) throw Error(ErrorCode::UnknownRef, ref_id);
  const double len = static_cast<double>(lengths_[row->second]);
  const double dl = avgdl();
  double total = 0;
  for (const auto& term : unique_terms(query_terms)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    for (const auto& [id, tf] : it->second) {
      if (id == ref_id) {
        total += term_weight(idf(term), static_cast<double>(tf), len, dl, k1_, b_);
        break;
      }
    }
  }
  return total;
}

double bm25_score(const SparseIndex& index, const std::vector<std::string>& query_terms, const std::string& ref_id) {
  return index.score(query_terms, ref_id);
}

std::vector<ScoredRef> SparseIndex::search(const std::string& query, std::size_t k) const {
  std::vector<double> totals(ids_.size(), 0.0);
  std::vector<bool> hit(ids_.size(), false);
  const double dl = avgdl();
  for (const auto& term : unique_terms({query})) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(term);
    for (const auto& [id, tf] : it->second) {
      std::size_t row = row_of_.at(id);
      totals[row] += term_weight(w, static_cast<double>(tf), static_cast<double>(lengths_[row]), dl, k1_, b_);
      hit[row] = true;
    }
  }
  std::vector<ScoredRef> scored;
  for (std::size_t row = 0; row < ids_.size(); ++row) {
    if (hit[row]) scored.push_back({ids_[row], totals[row], modalities_[row], texts_[row]});
  }
  std::sort(scored.begin(), scored.end(), ranks_before);
  if (scored.size() > k) scored.resize(k);
  return scored;
}

void SparseIndex::save(const std::string& dir) const {
  json docs = json::array();
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    docs.push_back({{"ref_id", ids_[i]},
                    {"modality", keypoints::to_string(modalities_[i])},
                    {"length", lengths_[i]},
                    {"text", texts_[i]}});
  }
  json meta = {{"k1", k1_}, {"b", b_}, {"docs", docs}};
  text::write_file((fs::path(dir) / "sparse.json").string(), meta.dump(2) + "\n");
  std::vector<json> rows;
  for (const auto& [term, list] : postings_) {
    json p = json::array();
    for (const auto& [id, tf] : list) p.push_back(json::array({id, tf}));
    rows.push_back({{"term", term}, {"postings", p}});
  }
  jsonl::write((fs::path(dir) / "postings.jsonl").string(), rows);
}

SparseIndex SparseIndex::load(const std::string& dir) {
  auto meta_path = (fs::path(dir) / "sparse.json").string();
  if (!fs::exists(meta_path)) throw Error(ErrorCode::MissingStageInput, meta_path);
  json meta = json::parse(text::read_file(meta_path));
  SparseIndex s(meta.at("k1").get<double>(), meta.at("b").get<double>());
  for (const auto& d : meta.at("docs")) {
    s.row_of_[d.at("ref_id").get<std::string>()] = s.ids_.size();
    s.ids_.push_back(d.at("ref_id").get<std::string>());
    s.modalities_.push_back(keypoints::modality_from_string(d.at("modality").get<std::string>()));
    s.lengths_.push_back(d.at("length").get<std::size_t>());
    s.texts_.push_back(d.at("text").get<std::string>());
    s.total_length_ += s.lengths_.back();
  }
  auto postings_path = (fs::path(dir) / "postings.jsonl").string();
  if (!fs::exists(postings_path)) throw Error(ErrorCode::MissingStageInput, postings_path);
  for (const auto& row : jsonl::read(postings_path)) {
    auto& list = s.postings_[row.at("term").get<std::string>()];
    for (const auto& p : row.at("postings")) {
      auto id = p.at(0).get<std::string>();
      if (!s.row_of_.count(id)) throw Error(ErrorCode::Io, "posting for unknown ref " + id);
      list.emplace_back(id, p.at(1).get<std::size_t>());
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Index construction

void IndexSet::save(const std::string& dir) const {
  fs::create_directories(dir);
  json meta = {{"architecture", to_string(architecture)},
               {"stores", json::array()},
               {"sparse", sparse.has_value()}};
  if (unified) {
    unified->save(dir, "unified");
    meta["stores"].push_back("unified");
  }
  if (text) {
    text->save(dir, "text");
    meta["stores"].push_back("text");
  }
  if (chart) {
    chart->save(dir, "chart");
    meta["stores"].push_back("chart");
  }
  if (sparse) sparse->save(dir);
  text::write_file((fs::path(dir) / "index.json").string(), meta.dump(2) + "\n");
}

IndexSet IndexSet::load(const std::string& dir) {
  auto meta_path = (fs::path(dir) / "index.json").string();
  if (!fs::exists(meta_path)) throw Error(ErrorCode::MissingStageInput, meta_path);
  json meta = json::parse(text::read_file(meta_path));
  IndexSet set;
  set.architecture = architecture_from_string(meta.at("architecture").get<std::string>());
  for (const auto& name : meta.at("stores")) {
    auto n = name.get<std::string>();
    if (n == "unified") set.unified = DenseStore::load(dir, n);
    if (n == "text") set.text = DenseStore::load(dir, n);
    if (n == "chart") set.chart = DenseStore::load(dir, n);
  }
  if (meta.value("sparse", false)) set.sparse = SparseIndex::load(dir);
  return set;
}

namespace {

providers::ProviderClient& need(providers::ProviderClient* p, const char* what) {
  if (!p) throw Error(ErrorCode::BackendUnavailable, std::string("no ") + what + " embedder configured");
  return *p;
}

std::string chart_text(const corpus::Chart& chart) { return chart.caption.value_or(""); }

}  // namespace

IndexSet index_unified(const corpus::Corpus& corpus, const Embedders& embedders) {
  auto& text_embedder = need(embedders.text, "text");
  auto& image_embedder = need(embedders.image, "image");
  IndexSet set;
  set.architecture = Architecture::unified_single;
  DenseStore store(StoreModality::mixed, text_embedder.backend_id() + "+" + image_embedder.backend_id());
  for (const auto& chunk : corpus.chunks()) store.add(chunk.chunk_id, Modality::text, text_embedder.embed_text(chunk.text), chunk.text);
  for (const auto& chart : corpus.charts()) {
    store.add(chart.chart_id, Modality::chart, image_embedder.embed_image(corpus.image_path(chart)), chart_text(chart));
  }
  set.unified = std::move(store);
  return set;
}

std::string caption_chart(const corpus::Chart& chart, const std::string& image_path,
                          providers::ProviderClient& captioner) {
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::vision_gen;
  req.template_id = "caption_chart";
  req.slots["image"] = providers::SlotValue::image(image_path);
  req.slots["chart_values"] = chart.values.serialize();
  req.slots["caption"] = chart.caption.value_or("");
  return text::collapse_whitespace(captioner.call_text(req));
}

IndexSet index_caption_combined(const corpus::Corpus& corpus, providers::ProviderClient& captioner,
                                const Embedders& embedders, const SparseParams& sparse) {
  auto& text_embedder = need(embedders.text, "text");
  IndexSet set;
  set.architecture = Architecture::caption_combined;
  DenseStore store(StoreModality::mixed, text_embedder.backend_id());
  SparseIndex index(sparse.k1, sparse.b);
  for (const auto& chunk : corpus.chunks()) {
    store.add(chunk.chunk_id, Modality::text, text_embedder.embed_text(chunk.text), chunk.text);
    index.add(chunk.chunk_id, Modality::text, chunk.text);
  }
  for (const auto& chart : corpus.charts()) {
    std::string caption = caption_chart(chart, corpus.image_path(chart), captioner);
    store.add(chart.chart_id, Modality::chart, text_embedder.embed_text(caption), caption);
    index.add(chart.chart_id, Modality::chart, caption);
  }
  set.unified = std::move(store);
  set.sparse = std::move(index);
  return set;
}

IndexSet index_separate(const corpus::Corpus& corpus, const Embedders& embedders,
                        const std::optional<SparseParams>& sparse) {
  auto& text_embedder = need(embedders.text, "text");
  auto& image_embedder = need(embedders.image, "image");
  IndexSet set;
  set.architecture = Architecture::separate_fused;
  DenseStore text_store(StoreModality::text, text_embedder.backend_id());
  DenseStore chart_store(StoreModality::chart, image_embedder.backend_id());
  std::optional<SparseIndex> index;
  if (sparse) index.emplace(sparse->k1, sparse->b);
  for (const auto& chunk : corpus.chunks()) {
    text_store.add(chunk.chunk_id, Modality::text, text_embedder.embed_text(chunk.text), chunk.text);
    if (index) index->add(chunk.chunk_id, Modality::text, chunk.text);
  }
  for (const auto& chart : corpus.charts()) {
    chart_store.add(chart.chart_id, Modality::chart, image_embedder.embed_image(corpus.image_path(chart)),
                    chart_text(chart));
  }
  set.text = std::move(text_store);
  set.chart = std::move(chart_store);
  set.sparse = std::move(index);
  return set;
}

// ---------------------------------------------------------------------------
// Search

std::vector<ScoredRef> reciprocal_rank_fusion(const std::vector<std::vector<ScoredRef>>& lists, std::size_t k,
                                              double constant) {
  std::map<std::string, ScoredRef> fused;
  for (const auto& list : lists) {
    for (std::size_t rank = 0; rank < list.size(); ++rank) {
      const ScoredRef& r = list[rank];
      auto [it, inserted] = fused.try_emplace(r.ref_id, r);
      if (inserted) it->second.score = 0.0;
      it->second.score += 1.0 / (constant + static_cast<double>(rank + 1));
    }
  }
  std::vector<ScoredRef> out;
  out.reserve(fused.size());
  for (auto& [id, r] : fused) out.push_back(std::move(r));
  std::sort(out.begin(), out.end(), ranks_before);
  if (out.size() > k) out.resize(k);
  return out;
}

RetrievedSet search(const IndexSet& indexes, const std::string& query, std::size_t k, const FusionPolicy& policy,
                    const Embedders& embedders, std::string query_id) {
  if (k == 0) throw Error(ErrorCode::PreconditionFailed, "k must be at least 1");
  RetrievedSet out;
  out.query_id = std::move(query_id);
  out.k = k;
  out.architecture = indexes.architecture;
  switch (indexes.architecture) {
    case Architecture::unified_single: {
      if (!indexes.unified || indexes.unified->size() == 0) throw Error(ErrorCode::EmptyIndex, "unified store is empty");
      out.refs = indexes.unified->search(need(embedders.text, "text").embed_text(query), k);
      break;
    }
    case Architecture::caption_combined: {
      if (!indexes.unified || indexes.unified->size() == 0) throw Error(ErrorCode::EmptyIndex, "caption store is empty");
      const std::size_t depth = indexes.unified->size();
      std::vector<std::vector<ScoredRef>> lists;
      lists.push_back(indexes.unified->search(need(embedders.text, "text").embed_text(query), depth));
      if (indexes.sparse) lists.push_back(indexes.sparse->search(query, depth));
      out.refs = reciprocal_rank_fusion(lists, k);
      break;
    }
    case Architecture::separate_fused: {
      const std::size_t n_text = indexes.text ? indexes.text->size() : 0;
      const std::size_t n_chart = indexes.chart ? indexes.chart->size() : 0;
      if (n_text + n_chart == 0) throw Error(ErrorCode::EmptyIndex, "text and chart stores are empty");
      SlotCounts slots = allocate_slots(k, policy, n_text, n_chart);
      if (slots.text > 0) {
        auto dense = indexes.text->search(need(embedders.text, "text").embed_text(query), n_text);
        std::vector<ScoredRef> stream;
        if (indexes.sparse) {
          stream = reciprocal_rank_fusion({dense, indexes.sparse->search(query, n_text)}, slots.text);
        } else {
          dense.resize(slots.text);
          stream = std::move(dense);
        }
        out.refs.insert(out.refs.end(), stream.begin(), stream.end());
      }
      if (slots.chart > 0) {
        auto charts = indexes.chart->search(need(embedders.image, "image").embed_text(query), slots.chart);
        out.refs.insert(out.refs.end(), charts.begin(), charts.end());
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recall

GroundTruthRefs GroundTruthRefs::from_pair(const qagen::QAPair& pair, const corpus::Corpus& corpus) {
  GroundTruthRefs gt;
  for (const auto& src : pair.gt_sources) {
    GroundTruthRef ref{src.source_id, src.modality, {}};
    if (src.modality == Modality::text) {
      const auto* chunk = corpus.find_chunk(src.source_id);
      if (!chunk) throw Error(ErrorCode::UnknownRef, src.source_id);
      ref.sentences = chunk->sentences;
    } else if (!corpus.find_chart(src.source_id)) {
      throw Error(ErrorCode::UnknownRef, src.source_id);
    }
    gt.refs.push_back(std::move(ref));
  }
  if (gt.refs.empty()) throw Error(ErrorCode::PreconditionFailed, "QA pair " + pair.qa_id + " has no sources");
  return gt;
}

double recall_at_k(const RetrievedSet& retrieved, const GroundTruthRefs& gt) {
  if (gt.refs.empty()) throw Error(ErrorCode::PreconditionFailed, "recall needs at least one ground-truth reference");
  std::set<std::string> ids;
  std::vector<std::string> texts;
  for (const auto& r : retrieved.refs) {
    ids.insert(r.ref_id);
    texts.push_back(text::normalize(r.text));
  }
  std::size_t matched = 0;
  for (const auto& g : gt.refs) {
    bool hit;
    if (g.modality == Modality::chart || g.sentences.empty()) {
      hit = ids.count(g.ref_id) != 0;
    } else {
      hit = std::all_of(g.sentences.begin(), g.sentences.end(), [&](const std::string& s) {
        auto needle = text::normalize(s);
        return std::any_of(texts.begin(), texts.end(),
                           [&](const std::string& t) { return t.find(needle) != std::string::npos; });
      });
    }
    matched += hit ? 1 : 0;
  }
  return static_cast<double>(matched) / static_cast<double>(gt.refs.size());
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const ScoredRef& r) {
  j = {{"ref_id", r.ref_id}, {"score", r.score}, {"modality", keypoints::to_string(r.modality)}, {"text", r.text}};
}

void from_json(const json& j, ScoredRef& r) {
  r.ref_id = j.at("ref_id").get<std::string>();
  r.score = j.at("score").get<double>();
  r.modality = keypoints::modality_from_string(j.at("modality").get<std::string>());
  r.text = j.value("text", "");
}

void to_json(json& j, const RetrievedSet& r) {
  j = {{"query_id", r.query_id}, {"k", r.k}, {"architecture", to_string(r.architecture)}, {"refs", r.refs}};
}

void from_json(const json& j, RetrievedSet& r) {
  r.query_id = j.at("query_id").get<std::string>();
  r.k = j.at("k").get<std::size_t>();
  r.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  r.refs = j.at("refs").get<std::vector<ScoredRef>>();
}

}  // namespace charge::retrieval
