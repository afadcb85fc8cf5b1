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

#include "charge/verification.hpp"

#include "charge/error.hpp"
#include "charge/providers.hpp"

#include <limits>

namespace charge::verification {

using keypoints::DropReason;
using keypoints::Keypoint;
using keypoints::Modality;
using nlohmann::json;

std::string_view to_string(Decision d) { return d == Decision::Retain ? "Retain" : "Drop"; }

ProbeQuestion generate_probe(const Keypoint& keypoint, providers::ProviderClient& provider) {
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::text_gen;
  req.template_id = "generate_probe";
  req.slots["keypoint"] = keypoint.statement;
  std::string question = provider.call_text(req);
  if (question.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::BackendUnavailable, "empty probe question for " + keypoint.kp_id);
  }
  return {keypoint.kp_id, question};
}

std::string answer_from_text(const ProbeQuestion& probe, const corpus::TextChunk& chunk,
                             providers::ProviderClient& provider) {
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::text_gen;
  req.template_id = "answer_from_text";
  req.slots["question"] = probe.question;
  req.slots["chunk"] = chunk.text;
  return provider.call_text(req);
}

std::string answer_from_chart(const ProbeQuestion& probe, const corpus::Chart& chart, const std::string& image_path,
                              providers::ProviderClient& provider) {
  if (image_path.empty()) throw Error(ErrorCode::PreconditionFailed, "chart " + chart.chart_id + " has no image");
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::vision_gen;
  req.template_id = "answer_from_chart";
  req.slots["question"] = probe.question;
  req.slots["image"] = providers::SlotValue::image(image_path);
  req.slots["chart_values"] = chart.values.serialize();
  return provider.call_text(req);
}

VerificationRecord verify(Keypoint& keypoint, const VerifyInputs& inputs, const VerifyProviders& providers,
                          bool strict) {
  if (keypoint.status != keypoints::Status::candidate) {
    throw Error(ErrorCode::PreconditionFailed, "keypoint " + keypoint.kp_id + " is not a candidate");
  }
  if (!providers.text_gen || !providers.vision_gen) {
    throw Error(ErrorCode::BackendUnavailable, "verification needs text and vision providers");
  }
  const bool claims_text = keypoint.claimed_modality == Modality::text;
  if ((claims_text && !inputs.chunk) || (!claims_text && !inputs.chart)) {
    throw Error(ErrorCode::PreconditionFailed, "source material missing for " + keypoint.kp_id);
  }

  VerificationRecord rec;
  rec.kp_id = keypoint.kp_id;
  rec.claimed_modality = keypoint.claimed_modality;
  try {
    rec.probe = generate_probe(keypoint, *providers.text_gen);
    if (inputs.chunk) rec.answer_from_text = answer_from_text(rec.probe, *inputs.chunk, *providers.text_gen);
    if (inputs.chart) {
      rec.answer_from_chart =
          answer_from_chart(rec.probe, *inputs.chart, inputs.chart_image_path, *providers.vision_gen);
    }
    const std::string& source_answer = claims_text ? rec.answer_from_text : rec.answer_from_chart;
    const std::string& other_answer = claims_text ? rec.answer_from_chart : rec.answer_from_text;
    const bool has_other = claims_text ? inputs.chart != nullptr : inputs.chunk != nullptr;
    rec.match_source = providers::judge_equivalent(source_answer, keypoint.statement, providers.judge);
    // Nothing to leak from when the document lacks the other modality.
    rec.match_other = has_other && providers::judge_equivalent(other_answer, keypoint.statement, providers.judge);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BackendUnavailable || strict) throw;
    rec.match_source = false;
    rec.match_other = false;
    rec.decision = Decision::Drop;
    rec.drop_reason = DropReason::judge_unavailable;
    keypoint.drop(DropReason::judge_unavailable);
    return rec;
  }

  rec.decision = decide(rec.match_source, rec.match_other);
  if (rec.decision == Decision::Retain) {
    keypoint.retain();
  } else {
    rec.drop_reason = !rec.match_source ? DropReason::not_retrievable_from_source : DropReason::retrievable_crossmodally;
    keypoint.drop(*rec.drop_reason);
  }
  return rec;
}

std::size_t nearest_by_position(std::size_t position, const std::vector<std::size_t>& candidate_positions) {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::size_t best_distance = std::numeric_limits<std::size_t>::max();
  std::size_t best_position = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < candidate_positions.size(); ++i) {
    std::size_t p = candidate_positions[i];
    std::size_t d = p > position ? p - position : position - p;
    if (d < best_distance || (d == best_distance && p < best_position)) {
      best = i;
      best_distance = d;
      best_position = p;
    }
  }
  return best;
}

VerifyInputs pair_sources(const Keypoint& keypoint, const corpus::Corpus& corpus) {
  VerifyInputs in;
  const corpus::Document* doc = corpus.find_document(keypoint.source.doc_id);
  if (!doc) throw Error(ErrorCode::PreconditionFailed, "unknown document " + keypoint.source.doc_id);
  if (keypoint.claimed_modality == Modality::text) {
    in.chunk = corpus.find_chunk(keypoint.source.source_id);
    if (!in.chunk) throw Error(ErrorCode::PreconditionFailed, "unknown chunk " + keypoint.source.source_id);
    std::vector<std::size_t> positions;
    for (const auto& id : doc->chart_ids) positions.push_back(corpus.find_chart(id)->position);
    std::size_t pick = nearest_by_position(in.chunk->position, positions);
    if (pick < positions.size()) in.chart = corpus.find_chart(doc->chart_ids[pick]);
  } else {
    in.chart = corpus.find_chart(keypoint.source.source_id);
    if (!in.chart) throw Error(ErrorCode::PreconditionFailed, "unknown chart " + keypoint.source.source_id);
    std::vector<std::size_t> positions;
    for (const auto& id : doc->chunk_ids) positions.push_back(corpus.find_chunk(id)->position);
    std::size_t pick = nearest_by_position(in.chart->position, positions);
    if (pick < positions.size()) in.chunk = corpus.find_chunk(doc->chunk_ids[pick]);
  }
  if (in.chart) in.chart_image_path = corpus.image_path(*in.chart);
  return in;
}

void to_json(json& j, const VerificationRecord& r) {
  j = {{"kp_id", r.kp_id},
       {"claimed_modality", keypoints::to_string(r.claimed_modality)},
       {"probe", {{"kp_id", r.probe.kp_id}, {"question", r.probe.question}}},
       {"answer_from_text", r.answer_from_text},
       {"answer_from_chart", r.answer_from_chart},
       {"match_source", r.match_source},
       {"match_other", r.match_other},
       {"decision", to_string(r.decision)}};
  j["drop_reason"] = r.drop_reason ? json(keypoints::to_string(*r.drop_reason)) : json(nullptr);
}

void from_json(const json& j, VerificationRecord& r) {
  r.kp_id = j.at("kp_id").get<std::string>();
  r.claimed_modality = keypoints::modality_from_string(j.at("claimed_modality").get<std::string>());
  r.probe.kp_id = j.at("probe").at("kp_id").get<std::string>();
  r.probe.question = j.at("probe").at("question").get<std::string>();
  r.answer_from_text = j.at("answer_from_text").get<std::string>();
  r.answer_from_chart = j.at("answer_from_chart").get<std::string>();
  r.match_source = j.at("match_source").get<bool>();
  r.match_other = j.at("match_other").get<bool>();
  r.decision = j.at("decision").get<std::string>() == "Retain" ? Decision::Retain : Decision::Drop;
  r.drop_reason.reset();
  if (j.contains("drop_reason") && j.at("drop_reason").is_string()) {
    auto s = j.at("drop_reason").get<std::string>();
    for (auto d : {DropReason::retrievable_crossmodally, DropReason::not_retrievable_from_source,
                   DropReason::judge_unavailable}) {
      if (keypoints::to_string(d) == s) r.drop_reason = d;
    }
  }
}

}  // namespace charge::verification
