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

#include "charge/keypoints.hpp"

#include "charge/error.hpp"
#include "charge/providers.hpp"
#include "charge/text.hpp"

#include <algorithm>
#include <set>

namespace charge::keypoints {

using nlohmann::json;

std::string_view to_string(Modality m) { return m == Modality::text ? "text" : "chart"; }

std::string_view to_string(Status s) {
  switch (s) {
    case Status::candidate: return "candidate";
    case Status::retained: return "retained";
    case Status::dropped: return "dropped";
  }
  return "candidate";
}

std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::retrievable_crossmodally: return "retrievable_crossmodally";
    case DropReason::not_retrievable_from_source: return "not_retrievable_from_source";
    case DropReason::judge_unavailable: return "judge_unavailable";
  }
  return "judge_unavailable";
}

std::string_view to_string(Pool p) {
  switch (p) {
    case Pool::text: return "text";
    case Pool::chart: return "chart";
    case Pool::both: return "both";
  }
  return "both";
}

Modality modality_from_string(std::string_view s) {
  if (s == "text") return Modality::text;
  if (s == "chart") return Modality::chart;
  throw Error(ErrorCode::StructuredParseError, "unknown modality '" + std::string(s) + "'");
}

Pool pool_from_string(std::string_view s) {
  if (s == "text") return Pool::text;
  if (s == "chart") return Pool::chart;
  if (s == "both") return Pool::both;
  throw Error(ErrorCode::StructuredParseError, "unknown modality class '" + std::string(s) + "'");
}

namespace {

Status status_from_string(std::string_view s) {
  if (s == "candidate") return Status::candidate;
  if (s == "retained") return Status::retained;
  if (s == "dropped") return Status::dropped;
  throw Error(ErrorCode::Io, "unknown keypoint status '" + std::string(s) + "'");
}

DropReason drop_reason_from_string(std::string_view s) {
  for (auto r : {DropReason::retrievable_crossmodally, DropReason::not_retrievable_from_source,
                 DropReason::judge_unavailable}) {
    if (to_string(r) == s) return r;
  }
  throw Error(ErrorCode::Io, "unknown drop reason '" + std::string(s) + "'");
}

bool is_statement_list(const json& j) {
  const json* list = &j;
  if (j.is_object()) {
    if (!j.contains("keypoints")) return false;
    list = &j.at("keypoints");
  }
  return list->is_array() && std::all_of(list->begin(), list->end(), [](const json& x) { return x.is_string(); });
}

std::vector<std::string> statements_of(const json& j) {
  const json& list = j.is_object() ? j.at("keypoints") : j;
  return list.get<std::vector<std::string>>();
}

std::vector<Keypoint> build(const std::vector<std::string>& statements, Modality modality, const std::string& doc_id,
                            const std::string& source_id, const ExtractOptions& options) {
  std::vector<Keypoint> out;
  std::set<std::string> seen;
  for (const auto& raw : statements) {
    std::string statement = text::collapse_whitespace(raw);
    if (statement.empty() || fails_self_contained_lint(statement)) continue;
    if (!seen.insert(text::normalize(statement)).second) continue;
    if (out.size() >= options.max_per_source) break;
    Keypoint kp;
    kp.kp_id = keypoint_id(doc_id, source_id, statement);
    kp.statement = std::move(statement);
    kp.claimed_modality = modality;
    kp.source = {doc_id, source_id};
    out.push_back(std::move(kp));
  }
  return out;
}

}  // namespace

void Keypoint::retain() {
  if (status != Status::candidate) throw Error(ErrorCode::PreconditionFailed, "keypoint " + kp_id + " is not a candidate");
  status = Status::retained;
  drop_reason.reset();
}

void Keypoint::drop(DropReason reason) {
  if (status != Status::candidate) throw Error(ErrorCode::PreconditionFailed, "keypoint " + kp_id + " is not a candidate");
  status = Status::dropped;
  drop_reason = reason;
}

std::string keypoint_id(const std::string& doc_id, const std::string& source_id, std::string_view statement) {
  return "kp-" + text::short_hash(doc_id + "\x1f" + source_id + "\x1f" + text::normalize(statement));
}

bool fails_self_contained_lint(std::string_view statement) { return text::starts_with_pronoun(statement); }

std::vector<Keypoint> extract_text_keypoints(const corpus::TextChunk& chunk, providers::ProviderClient& provider,
                                             const ExtractOptions& options) {
  if (text::collapse_whitespace(chunk.text).empty()) {
    throw Error(ErrorCode::PreconditionFailed, "chunk " + chunk.chunk_id + " is empty");
  }
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::text_gen;
  req.template_id = "extract_text_keypoints";
  req.slots["chunk"] = chunk.text;
  json payload = provider.call_structured(req, is_statement_list);
  return build(statements_of(payload), Modality::text, chunk.doc_id, chunk.chunk_id, options);
}

std::vector<Keypoint> extract_chart_keypoints(const corpus::Chart& chart, const std::string& image_path,
                                              providers::ProviderClient& provider, const ExtractOptions& options) {
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::vision_gen;
  req.template_id = "extract_chart_keypoints";
  req.slots["image"] = providers::SlotValue::image(image_path);
  req.slots["chart_values"] = chart.values.serialize();
  req.slots["raw_ocr_text"] = chart.values.raw_ocr_text;
  req.slots["caption"] = chart.caption.value_or("");
  json payload = provider.call_structured(req, is_statement_list);
  return build(statements_of(payload), Modality::chart, chart.doc_id, chart.chart_id, options);
}

Pool classify_modality(const Keypoint& keypoint, const corpus::TextChunk* chunk, const corpus::Chart* chart,
                       const std::string& image_path, providers::ProviderClient& provider) {
  if (keypoint.status != Status::candidate) {
    throw Error(ErrorCode::PreconditionFailed, "keypoint " + keypoint.kp_id + " is not a candidate");
  }
  const std::string needle = text::normalize(keypoint.statement);
  if (chunk && chart && text::normalize(chunk->text).find(needle) != std::string::npos &&
      text::normalize(chart->values.raw_ocr_text).find(needle) != std::string::npos) {
    return Pool::both;
  }
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::text_gen;
  req.template_id = "classify_keypoint";
  req.slots["keypoint"] = keypoint.statement;
  req.slots["chunk"] = chunk ? chunk->text : std::string();
  req.slots["chart_values"] = chart ? chart->values.serialize() : std::string();
  if (chart && !image_path.empty()) req.slots["image"] = providers::SlotValue::image(image_path);
  json payload = provider.call_structured(req, [](const json& j) {
    return j.is_object() && j.contains("modality") && j.at("modality").is_string() &&
           (j.at("modality") == "text" || j.at("modality") == "chart" || j.at("modality") == "both");
  });
  return pool_from_string(payload.at("modality").get<std::string>());
}

Pool assign_pool(const Keypoint& keypoint, Pool classified) {
  if (classified == Pool::both) return Pool::both;
  const Pool native = keypoint.claimed_modality == Modality::text ? Pool::text : Pool::chart;
  return classified == native ? native : Pool::both;
}

void sort_keypoints(std::vector<Keypoint>& kps) {
  std::sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) {
    return std::tie(a.source.doc_id, a.source.source_id, a.kp_id) <
           std::tie(b.source.doc_id, b.source.source_id, b.kp_id);
  });
}

void to_json(json& j, const Keypoint& k) {
  j = {{"kp_id", k.kp_id},
       {"statement", k.statement},
       {"claimed_modality", to_string(k.claimed_modality)},
       {"doc_id", k.source.doc_id},
       {"source_id", k.source.source_id},
       {"status", to_string(k.status)}};
  j["drop_reason"] = k.drop_reason ? json(to_string(*k.drop_reason)) : json(nullptr);
  j["pool"] = k.pool ? json(to_string(*k.pool)) : json(nullptr);
}

void from_json(const json& j, Keypoint& k) {
  k.kp_id = j.at("kp_id").get<std::string>();
  k.statement = j.at("statement").get<std::string>();
  k.claimed_modality = modality_from_string(j.at("claimed_modality").get<std::string>());
  k.source.doc_id = j.at("doc_id").get<std::string>();
  k.source.source_id = j.at("source_id").get<std::string>();
  k.status = status_from_string(j.at("status").get<std::string>());
  k.drop_reason.reset();
  k.pool.reset();
  if (j.contains("drop_reason") && j.at("drop_reason").is_string()) {
    k.drop_reason = drop_reason_from_string(j.at("drop_reason").get<std::string>());
  }
  if (j.contains("pool") && j.at("pool").is_string()) k.pool = pool_from_string(j.at("pool").get<std::string>());
}

}  // namespace charge::keypoints
