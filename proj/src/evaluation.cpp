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

#include "charge/evaluation.hpp"

#include "charge/error.hpp"
#include "charge/jsonl.hpp"
#include "charge/providers.hpp"
#include "charge/text.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

namespace charge::evaluation {

namespace fs = std::filesystem;
using keypoints::Modality;
using nlohmann::json;

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::no_rag: return "no_rag";
    case Mode::rag_k: return "rag_k";
    case Mode::gt_retrieval: return "gt_retrieval";
  }
  return "no_rag";
}

Mode mode_from_string(std::string_view s) {
  if (s == "no_rag" || s == "none") return Mode::no_rag;
  if (s == "rag_k" || s == "rag") return Mode::rag_k;
  if (s == "gt_retrieval" || s == "gt") return Mode::gt_retrieval;
  throw Error(ErrorCode::ConfigInvalid, "unknown evaluation mode '" + std::string(s) + "'");
}

void EvalCondition::validate() const {
  if (mode != Mode::rag_k) return;
  if (!k || *k == 0) throw Error(ErrorCode::ConfigInvalid, "rag_k needs k >= 1");
  if (!architecture) throw Error(ErrorCode::ConfigInvalid, "rag_k needs an architecture");
}

std::string EvalCondition::label() const {
  if (mode == Mode::rag_k) return "rag_k=" + std::to_string(k.value_or(0));
  return std::string(to_string(mode));
}

// ---------------------------------------------------------------------------
// Context and answering

namespace {

ContextItem item_for(const std::string& ref_id, Modality modality, const std::string& fallback_text,
                     const corpus::Corpus& corpus) {
  ContextItem item;
  item.ref_id = ref_id;
  item.modality = modality;
  if (modality == Modality::text) {
    const auto* chunk = corpus.find_chunk(ref_id);
    if (!chunk) throw Error(ErrorCode::UnknownRef, ref_id);
    item.text = chunk->text;
  } else {
    const auto* chart = corpus.find_chart(ref_id);
    if (!chart) throw Error(ErrorCode::UnknownRef, ref_id);
    item.text = fallback_text.empty() ? chart->caption.value_or("") : fallback_text;
    item.image_path = corpus.image_path(*chart);
    item.chart_values = chart->values.serialize();
  }
  return item;
}

}  // namespace

std::vector<ContextItem> context_from_retrieved(const retrieval::RetrievedSet& retrieved, const corpus::Corpus& corpus) {
  std::vector<ContextItem> out;
  for (const auto& ref : retrieved.refs) out.push_back(item_for(ref.ref_id, ref.modality, ref.text, corpus));
  return out;
}

std::vector<ContextItem> context_from_gt(const qagen::QAPair& pair, const corpus::Corpus& corpus) {
  std::vector<ContextItem> out;
  for (const auto& src : pair.gt_sources) out.push_back(item_for(src.source_id, src.modality, "", corpus));
  return out;
}

std::string answer(const std::string& question, const EvalCondition& condition,
                   const std::vector<ContextItem>& context, providers::ProviderClient& responder) {
  condition.validate();
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::text_gen;
  req.slots["question"] = question;
  if (condition.mode == Mode::no_rag) {
    req.template_id = "respond_no_context";
    return responder.call_text(req);
  }
  req.template_id = "respond_with_context";
  std::string blocks;
  std::size_t images = 0;
  for (std::size_t i = 0; i < context.size(); ++i) {
    const ContextItem& c = context[i];
    blocks += "[" + std::to_string(i + 1) + "] ";
    if (c.modality == Modality::text) {
      blocks += "Text: " + c.text + "\n";
    } else {
      ++images;
      req.kind = providers::RequestKind::vision_gen;
      req.slots["image_" + std::to_string(images)] = providers::SlotValue::image(c.image_path);
      blocks += "Chart (attached image " + std::to_string(images) + ")";
      if (!c.text.empty()) blocks += ": " + c.text;
      blocks += "\nValues:\n" + c.chart_values;
    }
  }
  req.slots["context"] = blocks;
  return responder.call_text(req);
}

std::vector<std::string> extract_response_keypoints(const std::string& response, const std::string& question,
                                                    providers::ProviderClient& extractor) {
  if (text::collapse_whitespace(response).empty()) return {};
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::text_gen;
  req.template_id = "extract_response_keypoints";
  req.slots["response"] = response;
  req.slots["question"] = question;
  json j = extractor.call_structured(req, [](const json& v) {
    const json& list = v.is_object() && v.contains("keypoints") ? v.at("keypoints") : v;
    return list.is_array() && std::all_of(list.begin(), list.end(), [](const json& e) { return e.is_string(); });
  });
  const json& list = j.is_object() ? j.at("keypoints") : j;
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : list) {
    auto s = text::collapse_whitespace(e.get<std::string>());
    if (s.empty()) continue;
    if (seen.insert(text::normalize(s)).second) out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matching and metrics

MatchResult match_keypoints(std::size_t extracted_count, std::size_t gt_count, const Equivalence& equivalent) {
  std::vector<std::vector<signed char>> memo(extracted_count, std::vector<signed char>(gt_count, -1));
  auto eq = [&](std::size_t i, std::size_t j) {
    if (memo[i][j] < 0) memo[i][j] = equivalent(i, j) ? 1 : 0;
    return memo[i][j] == 1;
  };
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(gt_count, kNone);
  std::vector<bool> visited;
  std::function<bool(std::size_t)> augment = [&](std::size_t i) {
    for (std::size_t j = 0; j < gt_count; ++j) {
      if (visited[j] || !eq(i, j)) continue;
      visited[j] = true;
      if (owner[j] == kNone || augment(owner[j])) {
        owner[j] = i;
        return true;
      }
    }
    return false;
  };
  for (std::size_t i = 0; i < extracted_count; ++i) {
    visited.assign(gt_count, false);
    augment(i);
  }
  MatchResult m;
  m.extracted_count = extracted_count;
  m.gt_count = gt_count;
  for (std::size_t j = 0; j < gt_count; ++j) {
    if (owner[j] != kNone) {
      m.matched_gt.push_back(j);
      m.pairs.emplace_back(owner[j], j);
    }
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  m.perfect = extracted_count == gt_count && m.matched_gt.size() == gt_count;
  return m;
}

MatchResult match_keypoints(const std::vector<std::string>& extracted, const std::vector<std::string>& gt_statements,
                            providers::ProviderClient* judge) {
  return match_keypoints(extracted.size(), gt_statements.size(), [&](std::size_t i, std::size_t j) {
    return providers::judge_equivalent(extracted[i], gt_statements[j], judge);
  });
}

int correctness(const MatchResult& m) { return m.perfect ? 1 : 0; }

double coverage(const MatchResult& m) {
  if (m.gt_count == 0) throw Error(ErrorCode::PreconditionFailed, "coverage needs at least one ground-truth keypoint");
  return static_cast<double>(m.matched_gt.size()) / static_cast<double>(m.gt_count);
}

// ---------------------------------------------------------------------------
// Reports

namespace {

double percent(double sum, std::size_t n) {
  if (n == 0) return 0.0;
  return std::round(10000.0 * sum / static_cast<double>(n)) / 100.0;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* kOverall = "overall";

}  // namespace

Report summarize(const std::vector<EvalRecord>& records, const std::vector<std::string>& condition_order) {
  struct Acc {
    std::size_t n = 0;
    double corr = 0;
    double cov = 0;
    std::size_t n_recall = 0;
    double recall = 0;
  };
  std::map<std::string, std::map<std::string, Acc>> acc;
  Report report;
  report.condition_order = condition_order;
  for (const auto& r : records) {
    if (std::find(report.condition_order.begin(), report.condition_order.end(), r.condition) ==
        report.condition_order.end()) {
      report.condition_order.push_back(r.condition);
    }
    for (const std::string& key : {r.category.label(), std::string(kOverall)}) {
      Acc& a = acc[r.condition][key];
      ++a.n;
      a.corr += r.correctness;
      a.cov += r.coverage;
      if (r.recall) {
        ++a.n_recall;
        a.recall += *r.recall;
      }
    }
    if (r.failed) ++report.failures[r.condition];
  }
  for (const auto& cond : report.condition_order) {
    report.failures.try_emplace(cond, 0);
    for (const auto& [key, a] : acc[cond]) {
      Cell c;
      c.n = a.n;
      c.correctness = percent(a.corr, a.n);
      c.coverage = percent(a.cov, a.n);
      if (a.n_recall) c.recall = percent(a.recall, a.n_recall);
      report.cells[cond][key] = c;
    }
  }
  return report;
}

namespace {

std::vector<std::string> row_order(const std::map<std::string, Cell>& cells) {
  std::vector<std::string> out;
  for (const auto& c : qagen::QACategory::all()) {
    if (cells.count(c.label())) out.push_back(c.label());
  }
  if (cells.count(kOverall)) out.push_back(kOverall);
  return out;
}

}  // namespace

json Report::to_json() const {
  json j;
  j["conditions"] = condition_order;
  j["equivalence"] = "normalized exact match, then judge provider";
  json cj = json::object();
  for (const auto& cond : condition_order) {
    auto it = cells.find(cond);
    if (it == cells.end()) continue;
    json rows = json::object();
    for (const auto& key : row_order(it->second)) {
      const Cell& c = it->second.at(key);
      json cell = {{"n", c.n}, {"correctness", c.correctness}, {"coverage", c.coverage}};
      if (c.recall) cell["recall"] = *c.recall;
      rows[key] = cell;
    }
    cj[cond] = rows;
  }
  j["cells"] = cj;
  j["failures"] = failures;
  return j;
}

std::string Report::to_table() const {
  std::vector<std::array<std::string, 6>> rows;
  rows.push_back({"condition", "category", "n", "corr", "cov", "recall"});
  for (const auto& cond : condition_order) {
    auto it = cells.find(cond);
    if (it == cells.end()) continue;
    for (const auto& key : row_order(it->second)) {
      const Cell& c = it->second.at(key);
      rows.push_back({cond, key, std::to_string(c.n), fixed2(c.correctness), fixed2(c.coverage),
                      c.recall ? fixed2(*c.recall) : "-"});
    }
  }
  std::array<std::size_t, 6> width{};
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::string pad(width[i] - r[i].size(), ' ');
      line += i < 2 ? r[i] + pad : pad + r[i];
      if (i + 1 < r.size()) line += "  ";
    }
    out += line + "\n";
  }
  for (const auto& cond : condition_order) {
    auto f = failures.find(cond);
    out += "failures[" + cond + "] = " + std::to_string(f == failures.end() ? 0 : f->second) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Suite

namespace {

bool is_item_failure(ErrorCode code) {
  return code == ErrorCode::BackendUnavailable || code == ErrorCode::RateLimited ||
         code == ErrorCode::StructuredParseError;
}

}  // namespace

SuiteResult run_suite(const std::vector<qagen::QAPair>& dataset, const std::vector<keypoints::Keypoint>& keypoints,
                      const std::vector<EvalCondition>& conditions, const corpus::Corpus& corpus,
                      const SuiteProviders& providers, const RetrievalContext& retrieval) {
  if (dataset.empty()) throw Error(ErrorCode::PreconditionFailed, "evaluation dataset is empty");
  if (!providers.responder || !providers.extractor) {
    throw Error(ErrorCode::BackendUnavailable, "responder and extractor providers are required");
  }
  std::map<std::string, std::string> statements;
  for (const auto& kp : keypoints) statements[kp.kp_id] = kp.statement;
  std::vector<std::string> order;
  for (const auto& c : conditions) {
    c.validate();
    if (c.mode == Mode::rag_k) {
      if (!retrieval.indexes) throw Error(ErrorCode::ConfigInvalid, "rag_k condition without an index");
      if (retrieval.indexes->architecture != *c.architecture) {
        throw Error(ErrorCode::ConfigInvalid, "index architecture differs from condition " + c.label());
      }
    }
    order.push_back(c.label());
  }
  for (const auto& p : dataset) {
    for (const auto& id : p.gt_keypoints) {
      if (!statements.count(id)) throw Error(ErrorCode::UnknownKeypoint, id + " (in " + p.qa_id + ")");
    }
  }

  const std::size_t total = conditions.size() * dataset.size();
  std::vector<EvalRecord> records(total);
  auto evaluate = [&](std::size_t slot) {
    const EvalCondition& cond = conditions[slot / dataset.size()];
    const qagen::QAPair& pair = dataset[slot % dataset.size()];
    EvalRecord& rec = records[slot];
    rec.qa_id = pair.qa_id;
    rec.category = pair.category;
    rec.condition = cond.label();
    rec.gt_count = pair.gt_keypoints.size();
    try {
      std::vector<ContextItem> context;
      if (cond.mode == Mode::rag_k) {
        auto found = retrieval::search(*retrieval.indexes, pair.question, *cond.k,
                                       cond.ratio.value_or(retrieval::FusionPolicy::three_to_two()),
                                       retrieval.embedders, pair.qa_id);
        rec.recall = retrieval::recall_at_k(found, retrieval::GroundTruthRefs::from_pair(pair, corpus));
        context = context_from_retrieved(found, corpus);
      } else if (cond.mode == Mode::gt_retrieval) {
        context = context_from_gt(pair, corpus);
      }
      rec.response = answer(pair.question, cond, context, *providers.responder);
      rec.extracted = extract_response_keypoints(rec.response, pair.question, *providers.extractor);
      std::vector<std::string> gt;
      for (const auto& id : pair.gt_keypoints) gt.push_back(statements.at(id));
      MatchResult m = match_keypoints(rec.extracted, gt, providers.judge);
      for (std::size_t j : m.matched_gt) rec.matched_gt.push_back(pair.gt_keypoints[j]);
      rec.correctness = correctness(m);
      rec.coverage = coverage(m);
    } catch (const Error& e) {
      if (!is_item_failure(e.code())) throw;
      rec.failed = true;
      rec.error = e.what();
      rec.extracted.clear();
      rec.matched_gt.clear();
      rec.correctness = 0;
      rec.coverage = 0.0;
    }
  };

  const std::size_t workers = std::min<std::size_t>(4, total);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t slot; (slot = next.fetch_add(1)) < total;) {
        try {
          evaluate(slot);
        } catch (...) {
          std::lock_guard lock(fatal_mu);
          if (!fatal) fatal = std::current_exception();
          next = total;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (fatal) std::rethrow_exception(fatal);

  SuiteResult result;
  result.report = summarize(records, order);
  result.records = std::move(records);
  return result;
}

void write_suite(const SuiteResult& result, const std::string& dir) {
  fs::create_directories(dir);
  jsonl::write_all((fs::path(dir) / "records.jsonl").string(), result.records);
  text::write_file((fs::path(dir) / "report.json").string(), result.report.to_json().dump(2) + "\n");
  text::write_file((fs::path(dir) / "report.txt").string(), result.report.to_table());
}

// ---------------------------------------------------------------------------
// Modality preference

std::string_view to_string(Preference p) {
  switch (p) {
    case Preference::text_phrasing: return "text_phrasing";
    case Preference::chart_phrasing: return "chart_phrasing";
    case Preference::both_acknowledged: return "both_acknowledged";
    case Preference::neither: return "neither";
  }
  return "neither";
}

Preference modality_preference(const std::string& response, const BiasProbe& probe, providers::ProviderClient* judge) {
  const std::string r = text::normalize(response);
  const std::string t = text::normalize(probe.text_phrasing);
  const std::string c = text::normalize(probe.chart_phrasing);
  if (t.empty() || c.empty() || t == c) {
    throw Error(ErrorCode::PreconditionFailed, "bias probe needs two distinct phrasings");
  }
  const bool has_t = r.find(t) != std::string::npos;
  const bool has_c = r.find(c) != std::string::npos;
  if (has_t && has_c) return Preference::both_acknowledged;
  if (has_t) return Preference::text_phrasing;
  if (has_c) return Preference::chart_phrasing;
  if (!judge) return Preference::neither;
  providers::ProviderRequest req;
  req.kind = providers::RequestKind::judge;
  req.template_id = "modality_preference";
  req.slots["response"] = response;
  req.slots["text_phrasing"] = probe.text_phrasing;
  req.slots["chart_phrasing"] = probe.chart_phrasing;
  json j = judge->call_structured(req, [](const json& v) {
    const json& p = v.is_object() && v.contains("preference") ? v.at("preference") : v;
    return p.is_string();
  });
  const std::string label = (j.is_object() ? j.at("preference") : j).get<std::string>();
  for (auto p : {Preference::text_phrasing, Preference::chart_phrasing, Preference::both_acknowledged,
                 Preference::neither}) {
    if (to_string(p) == label) return p;
  }
  throw Error(ErrorCode::StructuredParseError, "judge returned unknown preference '" + label + "'");
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const EvalRecord& r) {
  j = {{"qa_id", r.qa_id},
       {"category", r.category},
       {"condition", r.condition},
       {"response", r.response},
       {"extracted", r.extracted},
       {"matched_gt", r.matched_gt},
       {"gt_count", r.gt_count},
       {"correctness", r.correctness},
       {"coverage", r.coverage},
       {"failed", r.failed},
       {"error", r.error}};
  j["recall"] = r.recall ? json(*r.recall) : json(nullptr);
}

void from_json(const json& j, EvalRecord& r) {
  r.qa_id = j.at("qa_id").get<std::string>();
  r.category = j.at("category").get<qagen::QACategory>();
  r.condition = j.at("condition").get<std::string>();
  r.response = j.value("response", "");
  r.extracted = j.value("extracted", std::vector<std::string>{});
  r.matched_gt = j.value("matched_gt", std::vector<std::string>{});
  r.gt_count = j.at("gt_count").get<std::size_t>();
  r.correctness = j.at("correctness").get<int>();
  r.coverage = j.at("coverage").get<double>();
  r.recall.reset();
  if (j.contains("recall") && j.at("recall").is_number()) r.recall = j.at("recall").get<double>();
  r.failed = j.value("failed", false);
  r.error = j.value("error", "");
}

}  // namespace charge::evaluation
