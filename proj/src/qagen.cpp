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

#include "charge/qagen.hpp"

#include "charge/error.hpp"
#include "charge/providers.hpp"
#include "charge/text.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace charge::qagen {

using keypoints::Keypoint;
using keypoints::Modality;
using nlohmann::json;

std::string_view to_string(Scope s) {
  switch (s) {
    case Scope::single_point: return "single_point";
    case Scope::intra_document: return "intra_document";
    case Scope::inter_document: return "inter_document";
  }
  return "single_point";
}

std::string_view to_string(CategoryModality m) {
  switch (m) {
    case CategoryModality::text_only: return "text_only";
    case CategoryModality::chart_only: return "chart_only";
    case CategoryModality::text_chart: return "text_chart";
  }
  return "text_only";
}

std::string_view to_string(ReviewState s) {
  switch (s) {
    case ReviewState::pending: return "pending";
    case ReviewState::accepted: return "accepted";
    case ReviewState::rejected: return "rejected";
  }
  return "pending";
}

std::string_view to_string(RejectionReason r) {
  switch (r) {
    case RejectionReason::ocr_error: return "ocr_error";
    case RejectionReason::redundant: return "redundant";
    case RejectionReason::other: return "other";
  }
  return "other";
}

RejectionReason rejection_reason_from_string(std::string_view s) {
  for (auto r : {RejectionReason::ocr_error, RejectionReason::redundant, RejectionReason::other}) {
    if (to_string(r) == s) return r;
  }
  throw Error(ErrorCode::PreconditionFailed, "unknown rejection reason '" + std::string(s) + "'");
}

namespace {

ReviewState review_state_from_string(std::string_view s) {
  for (auto r : {ReviewState::pending, ReviewState::accepted, ReviewState::rejected}) {
    if (to_string(r) == s) return r;
  }
  throw Error(ErrorCode::Io, "unknown review state '" + std::string(s) + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// QACategory

std::optional<QACategory> QACategory::make(Scope scope, CategoryModality modality) {
  if (scope == Scope::single_point && modality == CategoryModality::text_chart) return std::nullopt;
  return QACategory(scope, modality);
}

const std::array<QACategory, 8>& QACategory::all() {
  static const std::array<QACategory, 8> kAll = {
      QACategory(Scope::single_point, CategoryModality::text_only),
      QACategory(Scope::single_point, CategoryModality::chart_only),
      QACategory(Scope::intra_document, CategoryModality::text_only),
      QACategory(Scope::intra_document, CategoryModality::chart_only),
      QACategory(Scope::intra_document, CategoryModality::text_chart),
      QACategory(Scope::inter_document, CategoryModality::text_only),
      QACategory(Scope::inter_document, CategoryModality::chart_only),
      QACategory(Scope::inter_document, CategoryModality::text_chart),
  };
  return kAll;
}

std::string QACategory::label() const { return std::string(to_string(scope_)) + "/" + std::string(to_string(modality_)); }

QACategory QACategory::parse(std::string_view label) {
  for (const auto& c : all()) {
    if (c.label() == label) return c;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown QA category '" + std::string(label) + "'");
}

// ---------------------------------------------------------------------------
// Invariants

std::vector<std::string> check_invariants(const QAPair& pair, const std::map<std::string, Keypoint>& kps) {
  std::vector<std::string> v;
  if (pair.qa_id.empty()) v.push_back("qa_id empty");
  if (text::collapse_whitespace(pair.question).empty()) v.push_back("question empty");
  if (text::collapse_whitespace(pair.answer).empty()) v.push_back("answer empty");
  if (pair.hops != 1 && pair.hops != 2) v.push_back("hops not in {1,2}");
  if (pair.hops != pair.category.hops()) v.push_back("hops disagree with scope");
  if (pair.gt_keypoints.size() != static_cast<std::size_t>(pair.hops)) v.push_back("|gt_keypoints| != hops");
  if (std::set<std::string>(pair.gt_keypoints.begin(), pair.gt_keypoints.end()).size() != pair.gt_keypoints.size()) {
    v.push_back("duplicate gt keypoints");
  }
  std::vector<const Keypoint*> resolved;
  for (const auto& id : pair.gt_keypoints) {
    auto it = kps.find(id);
    if (it == kps.end()) {
      v.push_back("unknown gt keypoint " + id);
    } else {
      resolved.push_back(&it->second);
    }
  }
  if (resolved.size() == pair.gt_keypoints.size() && !resolved.empty()) {
    std::vector<GtSource> expected;
    for (const Keypoint* kp : resolved) {
      GtSource s{kp->source.doc_id, kp->source.source_id, kp->claimed_modality};
      if (std::find(expected.begin(), expected.end(), s) == expected.end()) expected.push_back(s);
    }
    if (expected != pair.gt_sources) v.push_back("gt_sources differ from keypoint sources");
    if (resolved.size() == 2) {
      bool same_doc = resolved[0]->source.doc_id == resolved[1]->source.doc_id;
      if (pair.category.scope() == Scope::inter_document && same_doc) v.push_back("inter_document pair shares a doc");
      if (pair.category.scope() == Scope::intra_document && !same_doc) v.push_back("intra_document pair spans docs");
    }
    std::size_t n_text = 0;
    for (const Keypoint* kp : resolved) n_text += kp->claimed_modality == Modality::text ? 1 : 0;
    std::size_t n_chart = resolved.size() - n_text;
    switch (pair.category.modality()) {
      case CategoryModality::text_only:
        if (n_chart) v.push_back("text_only pair has a chart keypoint");
        break;
      case CategoryModality::chart_only:
        if (n_text) v.push_back("chart_only pair has a text keypoint");
        break;
      case CategoryModality::text_chart:
        if (n_text != 1 || n_chart != 1) v.push_back("text_chart pair needs one keypoint per modality");
        break;
    }
  }
  if (pair.rejection_reason && pair.review_state != ReviewState::rejected) {
    v.push_back("rejection reason on a non-rejected pair");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Keypoint index and retrieval

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "cosine of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void KeypointIndex::add(const std::string& kp_id, std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::DimensionMismatch, "empty embedding for " + kp_id);
  if (dimension_ == 0) dimension_ = v.size();
  if (v.size() != dimension_) throw Error(ErrorCode::DimensionMismatch, "embedding dimension changed at " + kp_id);
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& x : v) x /= norm;
  }
  entries_[kp_id] = std::move(v);
}

const std::vector<double>& KeypointIndex::vector(const std::string& kp_id) const {
  auto it = entries_.find(kp_id);
  if (it == entries_.end()) throw Error(ErrorCode::UnknownKeypoint, kp_id);
  return it->second;
}

KeypointIndex KeypointIndex::build(const std::vector<Keypoint>& kps, providers::ProviderClient& embedder) {
  KeypointIndex index;
  index.embedder_id = embedder.backend_id();
  for (const auto& kp : kps) index.add(kp.kp_id, embedder.embed_text(kp.statement));
  return index;
}

std::vector<std::pair<std::string, double>> retrieve_related(const std::string& selected, const KeypointIndex& index,
                                                             std::size_t k, const PoolFilter& filter) {
  if (!index.contains(selected)) throw Error(ErrorCode::UnknownKeypoint, selected);
  if (k == 0) throw Error(ErrorCode::PreconditionFailed, "k must be at least 1");
  const auto& query = index.vector(selected);
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& [id, vec] : index.entries()) {
    if (id == selected || (filter && !filter(id))) continue;
    double dot = 0;
    for (std::size_t i = 0; i < vec.size(); ++i) dot += vec[i] * query[i];
    scored.emplace_back(id, dot);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

QACategory categorize(const Keypoint& selected, const Keypoint& retrieved) {
  Scope scope = selected.source.doc_id == retrieved.source.doc_id ? Scope::intra_document : Scope::inter_document;
  CategoryModality modality;
  if (selected.claimed_modality == Modality::text && retrieved.claimed_modality == Modality::text) {
    modality = CategoryModality::text_only;
  } else if (selected.claimed_modality == Modality::chart && retrieved.claimed_modality == Modality::chart) {
    modality = CategoryModality::chart_only;
  } else {
    modality = CategoryModality::text_chart;
  }
  return *QACategory::make(scope, modality);
}

// ---------------------------------------------------------------------------
// Generation

SourceMaterial SourceMaterial::for_keypoint(const Keypoint& kp, const corpus::Corpus& corpus) {
  SourceMaterial m;
  if (kp.claimed_modality == Modality::text) {
    m.chunk = corpus.find_chunk(kp.source.source_id);
    if (!m.chunk) throw Error(ErrorCode::PreconditionFailed, "unknown chunk " + kp.source.source_id);
  } else {
    m.chart = corpus.find_chart(kp.source.source_id);
    if (!m.chart) throw Error(ErrorCode::PreconditionFailed, "unknown chart " + kp.source.source_id);
    m.image_path = corpus.image_path(*m.chart);
  }
  return m;
}

namespace {

void require_retained(const Keypoint& kp) {
  if (kp.status != keypoints::Status::retained) {
    throw Error(ErrorCode::PreconditionFailed, "keypoint " + kp.kp_id + " is not retained");
  }
}

std::string describe(const SourceMaterial& m) {
  if (m.chunk) return m.chunk->text;
  if (m.chart) {
    std::string out = "Chart";
    if (m.chart->caption) out += " \"" + *m.chart->caption + "\"";
    out += " with values:\n" + m.chart->values.serialize();
    return out;
  }
  return {};
}

bool is_qa_object(const json& j) {
  return j.is_object() && j.contains("question") && j.at("question").is_string() && j.contains("answer") &&
         j.at("answer").is_string() && !text::collapse_whitespace(j.at("question").get<std::string>()).empty();
}

QAPair make_pair(const QACategory& category, const std::vector<const Keypoint*>& kps, const json& qa) {
  QAPair p;
  p.category = category;
  p.hops = category.hops();
  p.question = text::collapse_whitespace(qa.at("question").get<std::string>());
  p.answer = text::collapse_whitespace(qa.at("answer").get<std::string>());
  std::string id_material = category.label();
  for (const Keypoint* kp : kps) {
    p.gt_keypoints.push_back(kp->kp_id);
    GtSource s{kp->source.doc_id, kp->source.source_id, kp->claimed_modality};
    if (std::find(p.gt_sources.begin(), p.gt_sources.end(), s) == p.gt_sources.end()) p.gt_sources.push_back(s);
    id_material += "|" + kp->kp_id;
  }
  p.qa_id = "qa-" + text::short_hash(id_material + "|" + text::normalize(p.question));
  return p;
}

}  // namespace

QAPair generate_single_point(const Keypoint& keypoint, const SourceMaterial& material, const GenProviders& providers) {
  require_retained(keypoint);
  if (keypoints::fails_self_contained_lint(keypoint.statement)) {
    throw Error(ErrorCode::PreconditionFailed, "keypoint " + keypoint.kp_id + " is not a self-contained statement");
  }
  const bool chart = keypoint.claimed_modality == Modality::chart;
  providers::ProviderClient* client = chart ? providers.vision_gen : providers.text_gen;
  if (!client) throw Error(ErrorCode::BackendUnavailable, "no generation provider configured");
  providers::ProviderRequest req;
  req.kind = chart ? providers::RequestKind::vision_gen : providers::RequestKind::text_gen;
  req.template_id = "generate_single_point";
  req.slots["keypoint"] = keypoint.statement;
  req.slots["source"] = describe(material);
  if (chart) req.slots["image"] = providers::SlotValue::image(material.image_path);
  json qa = client->call_structured(req, is_qa_object);
  auto category = *QACategory::make(Scope::single_point,
                                    chart ? CategoryModality::chart_only : CategoryModality::text_only);
  return make_pair(category, {&keypoint}, qa);
}

QAPair generate_multihop(const Keypoint& selected, const Keypoint& retrieved, const SourceMaterial& selected_material,
                         const SourceMaterial& retrieved_material, const GenProviders& providers) {
  require_retained(selected);
  require_retained(retrieved);
  if (selected.kp_id == retrieved.kp_id) {
    throw Error(ErrorCode::PreconditionFailed, "multi-hop pair needs two distinct keypoints");
  }
  QACategory category = categorize(selected, retrieved);
  const bool any_chart = selected.claimed_modality == Modality::chart || retrieved.claimed_modality == Modality::chart;
  providers::ProviderClient* client = any_chart ? providers.vision_gen : providers.text_gen;
  if (!client) throw Error(ErrorCode::BackendUnavailable, "no generation provider configured");
  providers::ProviderRequest req;
  req.kind = any_chart ? providers::RequestKind::vision_gen : providers::RequestKind::text_gen;
  req.template_id = "generate_multihop";
  req.slots["keypoint_a"] = selected.statement;
  req.slots["keypoint_b"] = retrieved.statement;
  req.slots["source_a"] = describe(selected_material);
  req.slots["source_b"] = describe(retrieved_material);
  req.slots["category"] = category.label();
  if (selected_material.chart) req.slots["image_a"] = providers::SlotValue::image(selected_material.image_path);
  if (retrieved_material.chart) req.slots["image_b"] = providers::SlotValue::image(retrieved_material.image_path);
  json qa = client->call_structured(req, is_qa_object);
  return make_pair(category, {&selected, &retrieved}, qa);
}

// ---------------------------------------------------------------------------
// Dataset assembly

namespace {

/// Fisher-Yates driven directly by the engine so the permutation does not
/// depend on the standard library's distribution implementations.
std::vector<std::size_t> seeded_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Modality selected_modality(const QACategory& c) {
  return c.modality() == CategoryModality::text_only ? Modality::text : Modality::chart;
}

Modality partner_modality(const QACategory& c) {
  return c.modality() == CategoryModality::chart_only ? Modality::chart : Modality::text;
}

}  // namespace

BuildResult build_dataset(const corpus::Corpus& corpus, const std::vector<Keypoint>& retained,
                          const std::map<QACategory, std::size_t>& quotas, const BuildOptions& options,
                          const GenProviders& providers, providers::ProviderClient& embedder) {
  BuildResult result;
  std::map<std::string, const Keypoint*> by_id;
  for (const auto& kp : retained) {
    require_retained(kp);
    by_id[kp.kp_id] = &kp;
  }
  KeypointIndex index = KeypointIndex::build(retained, embedder);
  std::vector<std::vector<double>> accepted_questions;

  json quota_json = json::object();
  json counts = json::object();
  json exhausted = json::array();

  const auto& categories = QACategory::all();
  for (std::size_t ci = 0; ci < categories.size(); ++ci) {
    const QACategory& cat = categories[ci];
    auto q = quotas.find(cat);
    if (q == quotas.end() || q->second == 0) continue;
    CategoryOutcome outcome;
    outcome.quota = q->second;
    quota_json[cat.label()] = q->second;

    std::vector<const Keypoint*> pool;
    for (const auto& kp : retained) {
      if (kp.claimed_modality == selected_modality(cat)) pool.push_back(&kp);
    }
    std::mt19937_64 rng(text::splitmix64(options.seed ^ (0x9e3779b97f4a7c15ULL * (ci + 1))));
    std::vector<std::size_t> order = seeded_order(pool.size(), rng);
    std::size_t cursor = 0;

    while (outcome.produced < outcome.quota && !outcome.pool_exhausted) {
      std::size_t discarded_this_slot = 0;
      bool filled = false;
      while (!filled) {
        if (cursor >= order.size()) {
          outcome.pool_exhausted = true;
          break;
        }
        const Keypoint& selected = *pool[order[cursor++]];
        QAPair pair;
        try {
          if (cat.scope() == Scope::single_point) {
            pair = generate_single_point(selected, SourceMaterial::for_keypoint(selected, corpus), providers);
          } else {
            const Modality want = partner_modality(cat);
            const bool intra = cat.scope() == Scope::intra_document;
            auto related = retrieve_related(selected.kp_id, index, options.retrieval_k, [&](const std::string& id) {
              const Keypoint& other = *by_id.at(id);
              return other.claimed_modality == want && (other.source.doc_id == selected.source.doc_id) == intra;
            });
            if (related.empty()) continue;
            const Keypoint& partner = *by_id.at(related.front().first);
            pair = generate_multihop(selected, partner, SourceMaterial::for_keypoint(selected, corpus),
                                     SourceMaterial::for_keypoint(partner, corpus), providers);
          }
        } catch (const Error& e) {
          if (e.code() != ErrorCode::StructuredParseError) throw;
          continue;
        }
        auto qvec = embedder.embed_text(pair.question);
        bool duplicate = std::any_of(accepted_questions.begin(), accepted_questions.end(),
                                     [&](const auto& v) { return cosine(v, qvec) > options.dedup_threshold; });
        if (duplicate) {
          ++outcome.duplicates_discarded;
          if (++discarded_this_slot > options.retry_budget) {
            outcome.pool_exhausted = true;
            break;
          }
          continue;
        }
        accepted_questions.push_back(std::move(qvec));
        result.pairs.push_back(std::move(pair));
        ++outcome.produced;
        filled = true;
      }
    }
    counts[cat.label()] = outcome.produced;
    if (outcome.pool_exhausted) exhausted.push_back(cat.label());
    result.outcomes[cat] = outcome;
  }

  result.manifest = {
      {"seed", options.seed},
      {"rng", kRngName},
      {"quotas", quota_json},
      {"thresholds",
       {{"retrieval_k", options.retrieval_k},
        {"dedup_threshold", options.dedup_threshold},
        {"retry_budget", options.retry_budget}}},
      {"provider_ids",
       {{"text_gen", providers.text_gen ? providers.text_gen->backend_id() : ""},
        {"vision_gen", providers.vision_gen ? providers.vision_gen->backend_id() : ""},
        {"embedder", embedder.backend_id()}}},
      {"counts", counts},
      {"pool_exhausted", exhausted},
      {"total", result.pairs.size()},
  };
  return result;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const QACategory& c) {
  j = {{"scope", to_string(c.scope())}, {"modality", to_string(c.modality())}};
}

void from_json(const json& j, QACategory& c) {
  const auto scope = j.at("scope").get<std::string>();
  const auto modality = j.at("modality").get<std::string>();
  c = QACategory::parse(scope + "/" + modality);
}

void to_json(json& j, const GtSource& s) {
  j = {{"doc_id", s.doc_id}, {"source_id", s.source_id}, {"modality", keypoints::to_string(s.modality)}};
}

void from_json(const json& j, GtSource& s) {
  s.doc_id = j.at("doc_id").get<std::string>();
  s.source_id = j.at("source_id").get<std::string>();
  s.modality = keypoints::modality_from_string(j.at("modality").get<std::string>());
}

void to_json(json& j, const QAPair& p) {
  j = {{"qa_id", p.qa_id},
       {"question", p.question},
       {"answer", p.answer},
       {"category", p.category},
       {"hops", p.hops},
       {"gt_keypoints", p.gt_keypoints},
       {"gt_sources", p.gt_sources},
       {"review_state", to_string(p.review_state)}};
  j["rejection_reason"] = p.rejection_reason ? json(to_string(*p.rejection_reason)) : json(nullptr);
}

void from_json(const json& j, QAPair& p) {
  p.qa_id = j.at("qa_id").get<std::string>();
  p.question = j.at("question").get<std::string>();
  p.answer = j.at("answer").get<std::string>();
  p.category = j.at("category").get<QACategory>();
  p.hops = j.at("hops").get<int>();
  p.gt_keypoints = j.at("gt_keypoints").get<std::vector<std::string>>();
  p.gt_sources = j.at("gt_sources").get<std::vector<GtSource>>();
  p.review_state = review_state_from_string(j.value("review_state", "pending"));
  p.rejection_reason.reset();
  if (j.contains("rejection_reason") && j.at("rejection_reason").is_string()) {
    p.rejection_reason = rejection_reason_from_string(j.at("rejection_reason").get<std::string>());
  }
}

}  // namespace charge::qagen
