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

#include "charge/pipeline.hpp"

#include "charge/error.hpp"
#include "charge/jsonl.hpp"
#include "charge/keypoints.hpp"
#include "charge/review.hpp"
#include "charge/text.hpp"
#include "charge/verification.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#ifndef CHARGE_SOURCE_DIR
#define CHARGE_SOURCE_DIR "."
#endif

namespace charge::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& required_templates() {
  static const std::vector<std::string> kIds = {
      "chart_ocr",          "extract_text_keypoints", "extract_chart_keypoints", "classify_keypoint",
      "generate_probe",     "answer_from_text",       "answer_from_chart",       "judge_equivalent",
      "generate_single_point", "generate_multihop",   "respond_no_context",      "respond_with_context",
      "extract_response_keypoints", "caption_chart",  "modality_preference"};
  return kIds;
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string unquote(std::string v) {
  v = text::collapse_whitespace(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long n = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigInvalid, key + " expects a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigInvalid, key + " expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::ConfigInvalid, key + " expects true or false, got '" + v + "'");
}

using Setter = std::function<void(Config&, const std::string& key, const std::string& value)>;

/// Known keys as "section.key" → setter.
const std::vector<std::pair<std::string, Setter>>& schema() {
  static const std::vector<std::pair<std::string, Setter>> kSchema = [] {
    std::vector<std::pair<std::string, Setter>> s = {
        {"run.workdir", [](Config& c, auto&, auto& v) { c.workdir = v; }},
        {"run.inputs", [](Config& c, auto&, auto& v) { c.inputs = v; }},
        {"run.templates", [](Config& c, auto&, auto& v) { c.templates = v; }},
        {"run.seed", [](Config& c, auto& k, auto& v) { c.seed = parse_uint(k, v); }},
        {"run.chunk_target_words", [](Config& c, auto& k, auto& v) { c.chunk_target_words = parse_uint(k, v); }},
        {"providers.fixture", [](Config& c, auto&, auto& v) { c.fixture = v; }},
        {"providers.fallback", [](Config& c, auto&, auto& v) { c.fallback = v; }},
        {"providers.embed_dimension", [](Config& c, auto& k, auto& v) { c.embed_dimension = parse_uint(k, v); }},
        {"providers.embed_seed", [](Config& c, auto& k, auto& v) { c.embed_seed = parse_uint(k, v); }},
        {"providers.max_in_flight", [](Config& c, auto& k, auto& v) { c.max_in_flight = parse_uint(k, v); }},
        {"retrieval.k", [](Config& c, auto& k, auto& v) { c.retrieval_k = parse_uint(k, v); }},
        {"retrieval.ratio", [](Config& c, auto&, auto& v) { c.ratio = v; }},
        {"retrieval.architecture", [](Config& c, auto&, auto& v) { c.architecture = v; }},
        {"retrieval.sparse", [](Config& c, auto& k, auto& v) { c.sparse = parse_bool(k, v); }},
        {"qagen.retrieval_k", [](Config& c, auto& k, auto& v) { c.qagen.retrieval_k = parse_uint(k, v); }},
        {"qagen.dedup_threshold", [](Config& c, auto& k, auto& v) { c.qagen.dedup_threshold = parse_double(k, v); }},
        {"qagen.retry_budget", [](Config& c, auto& k, auto& v) { c.qagen.retry_budget = parse_uint(k, v); }},
        {"verify.strict", [](Config& c, auto& k, auto& v) { c.strict = parse_bool(k, v); }},
        {"evaluate.conditions", [](Config& c, auto&, auto& v) { c.conditions = v; }},
        {"evaluate.run_id", [](Config& c, auto&, auto& v) { c.run_id = v; }},
        {"review.data", [](Config& c, auto&, auto& v) { c.review_data = v; }},
        {"review.auth", [](Config& c, auto&, auto& v) { c.review_auth = v; }},
        {"review.static", [](Config& c, auto&, auto& v) { c.review_static = v; }},
    };
    for (auto slot : kSlotNames) {
      const std::string name(slot);
      s.emplace_back("providers." + name, [name](Config& c, auto&, auto& v) { c.slots[name].backend = v; });
      s.emplace_back("provider." + name + ".endpoint",
                     [name](Config& c, auto&, auto& v) { c.slots[name].endpoint = v; });
      s.emplace_back("provider." + name + ".model", [name](Config& c, auto&, auto& v) { c.slots[name].model = v; });
      s.emplace_back("provider." + name + ".api_key_env",
                     [name](Config& c, auto&, auto& v) { c.slots[name].api_key_env = v; });
      s.emplace_back("provider." + name + ".timeout", [name](Config& c, auto& k, auto& v) {
        c.slots[name].timeout_seconds = static_cast<int>(parse_uint(k, v));
      });
    }
    for (const auto& cat : qagen::QACategory::all()) {
      s.emplace_back("quotas." + cat.label(),
                     [cat](Config& c, auto& k, auto& v) { c.quotas[cat] = parse_uint(k, v); });
    }
    return s;
  }();
  return kSchema;
}

const Setter* find_setter(const std::string& key) {
  for (const auto& [name, setter] : schema()) {
    if (name == key) return &setter;
  }
  return nullptr;
}

std::string env_name(const std::string& key) {
  std::string out = "CHARGE_";
  for (char ch : key) {
    out += std::isalnum(static_cast<unsigned char>(ch)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(ch)))
                                                        : '_';
  }
  return out;
}

void default_slots(Config& c) {
  for (auto slot : kSlotNames) {
    const std::string name(slot);
    if (!c.slots.count(name)) {
      c.slots[name].backend = (name == "embed_text" || name == "embed_image") ? "hash" : "scripted";
    }
  }
}

}  // namespace

Config Config::parse(const std::string& content, const std::string& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(content);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.message() + " at line " + std::to_string(e.line()));
  }
  Config c;
  c.base_dir = base_dir.empty() ? "." : base_dir;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error(ErrorCode::ConfigInvalid, "key '" + section + "' outside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const Setter* setter = find_setter(full);
      if (!setter) throw Error(ErrorCode::ConfigInvalid, "unknown config key '" + full + "'");
      (*setter)(c, full, unquote(value.data()));
    }
  }
  default_slots(c);
  return c;
}

Config Config::load(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingStageInput, path);
  auto base = fs::absolute(path).parent_path().string();
  return parse(text::read_file(path), base);
}

void Config::apply_env(const std::function<const char*(const char*)>& getenv_fn) {
  for (const auto& [key, setter] : schema()) {
    if (const char* v = getenv_fn(env_name(key).c_str())) setter(*this, key, unquote(v));
  }
}

std::string Config::resolve(const std::string& path) const {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string Config::work_path(const std::string& relative) const {
  return (fs::path(resolve(workdir)) / relative).lexically_normal().string();
}

void Config::validate() const {
  if (!seed) throw Error(ErrorCode::ConfigInvalid, "run.seed is required");
  if (chunk_target_words < 5) throw Error(ErrorCode::ConfigInvalid, "run.chunk_target_words must be at least 5");
  if (fallback != "error" && fallback != "echo") {
    throw Error(ErrorCode::ConfigInvalid, "providers.fallback must be error or echo");
  }
  if (embed_dimension == 0) throw Error(ErrorCode::ConfigInvalid, "providers.embed_dimension must be positive");
  if (retrieval_k == 0) throw Error(ErrorCode::ConfigInvalid, "retrieval.k must be at least 1");
  retrieval::FusionPolicy::parse(ratio);
  retrieval::architecture_from_string(architecture);
  if (qagen.dedup_threshold <= 0 || qagen.dedup_threshold > 1) {
    throw Error(ErrorCode::ConfigInvalid, "qagen.dedup_threshold must be in (0, 1]");
  }
  bool needs_fixture = false;
  for (const auto& [slot, spec] : slots) {
    if (spec.backend == "scripted") {
      needs_fixture = true;
    } else if (spec.backend == "http") {
      if (spec.endpoint.empty()) throw Error(ErrorCode::ConfigInvalid, "provider." + slot + ".endpoint is required");
    } else if (spec.backend != "hash") {
      throw Error(ErrorCode::ConfigInvalid, "providers." + slot + " must be scripted, hash or http");
    }
    if (spec.backend == "hash" && slot != "embed_text" && slot != "embed_image") {
      throw Error(ErrorCode::ConfigInvalid, "the hash backend only serves embedding slots, not " + slot);
    }
  }
  if (needs_fixture) {
    if (fixture.empty()) throw Error(ErrorCode::ConfigInvalid, "providers.fixture is required for scripted slots");
    if (!fs::exists(resolve(fixture))) throw Error(ErrorCode::ConfigInvalid, "fixture not found: " + resolve(fixture));
  }
  const std::string dir = resolve(templates);
  for (const auto& id : required_templates()) {
    if (!fs::exists(fs::path(dir) / (id + ".txt"))) {
      throw Error(ErrorCode::ConfigInvalid, "template missing: " + (fs::path(dir) / (id + ".txt")).string());
    }
  }
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(Config config) : config_(std::move(config)) {
  default_slots(config_);
  config_.validate();
  auto templates =
      std::make_shared<const providers::TemplateLibrary>(providers::TemplateLibrary::load_dir(config_.resolve(config_.templates)));
  auto cache = std::make_shared<providers::ResponseCache>(config_.work_path("cache/responses.jsonl"));
  std::shared_ptr<providers::Backend> scripted;
  std::shared_ptr<providers::Backend> hash;
  auto backend_for = [&](const std::string& slot) -> std::shared_ptr<providers::Backend> {
    const SlotSpec& spec = config_.slots.at(slot);
    if (spec.backend == "scripted") {
      if (!scripted) {
        scripted = providers::ScriptedBackend::from_file(
            config_.resolve(config_.fixture), "scripted",
            config_.fallback == "echo" ? providers::Fallback::echo : providers::Fallback::error);
      }
      return scripted;
    }
    if (spec.backend == "hash") {
      if (!hash) hash = std::make_shared<providers::HashEmbedder>(config_.embed_dimension, config_.embed_seed);
      return hash;
    }
    ++network_backends_;
    providers::HttpBackendConfig http;
    http.endpoint = spec.endpoint;
    http.model = spec.model;
    if (!spec.api_key_env.empty()) {
      if (const char* key = std::getenv(spec.api_key_env.c_str())) http.api_key = key;
    }
    http.timeout_seconds = spec.timeout_seconds;
    return std::make_shared<providers::HttpBackend>(http);
  };
  auto client = [&](const std::string& slot) {
    return std::make_shared<providers::ProviderClient>(backend_for(slot), cache, templates, providers::RetryPolicy{},
                                                       config_.max_in_flight);
  };
  providers_.text_gen = client("text_gen");
  providers_.vision_gen = client("vision_gen");
  providers_.embed_text = client("embed_text");
  providers_.embed_image = client("embed_image");
  providers_.ocr = client("ocr");
  providers_.judge = client("judge");
  providers_.captioner = client("captioner");
  providers_.responder = client("responder");
}

std::string Pipeline::require(const std::string& relative) const {
  const std::string path = config_.work_path(relative);
  if (!fs::exists(path)) throw Error(ErrorCode::MissingStageInput, path);
  return path;
}

retrieval::Embedders Pipeline::embedders() { return {providers_.embed_text.get(), providers_.embed_image.get()}; }

void Pipeline::log_stage(const StageSummary& summary, const std::string& status, const std::string& message) {
  json row = {{"stage", summary.stage},
              {"status", status},
              {"message", message},
              {"outputs", summary.outputs},
              {"details", summary.details}};
  const std::string path = config_.work_path("stage.log.jsonl");
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::app);
  out << jsonl::dump(row) << '\n';
}

StageSummary Pipeline::ingest() {
  StageSummary s;
  s.stage = "ingest";
  const std::string dir = config_.resolve(config_.inputs);
  std::vector<fs::path> bundles;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") bundles.push_back(entry.path());
    }
  }
  if (bundles.empty()) throw Error(ErrorCode::MissingStageInput, dir + " (no *.json document bundles)");
  std::sort(bundles.begin(), bundles.end());
  corpus::Corpus corpus(config_.work_path("corpus"));
  for (const auto& path : bundles) {
    json j;
    try {
      j = json::parse(text::read_file(path.string()));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Io, path.string() + ": " + e.what());
    }
    auto bundle = corpus::DocumentBundle::from_json(j, path.parent_path().string());
    corpus::ingest_document(corpus, bundle, *providers_.ocr, config_.chunk_target_words);
  }
  corpus.save();
  s.details = corpus::corpus_stats(corpus);
  s.outputs = {config_.work_path("corpus")};
  return s;
}

StageSummary Pipeline::extract() {
  StageSummary s;
  s.stage = "extract";
  auto corpus = corpus::Corpus::load(require("corpus"));
  std::vector<keypoints::Keypoint> all;
  std::set<std::string> seen;
  auto keep = [&](std::vector<keypoints::Keypoint> kps) {
    for (auto& kp : kps) {
      if (seen.insert(kp.kp_id).second) all.push_back(std::move(kp));
    }
  };
  for (const auto& chunk : corpus.chunks()) keep(keypoints::extract_text_keypoints(chunk, *providers_.text_gen));
  for (const auto& chart : corpus.charts()) {
    keep(keypoints::extract_chart_keypoints(chart, corpus.image_path(chart), *providers_.vision_gen));
  }
  json pools = {{"text", 0}, {"chart", 0}, {"both", 0}};
  for (auto& kp : all) {
    auto inputs = verification::pair_sources(kp, corpus);
    auto classified =
        keypoints::classify_modality(kp, inputs.chunk, inputs.chart, inputs.chart_image_path, *providers_.text_gen);
    kp.pool = keypoints::assign_pool(kp, classified);
    const std::string key(keypoints::to_string(*kp.pool));
    pools[key] = pools[key].get<int>() + 1;
  }
  keypoints::sort_keypoints(all);
  const std::string out = config_.work_path("keypoints.jsonl");
  jsonl::write_all(out, all);
  s.details = {{"keypoints", all.size()}, {"pools", pools}};
  s.outputs = {out};
  return s;
}

StageSummary Pipeline::verify(std::optional<bool> strict) {
  StageSummary s;
  s.stage = "verify";
  const std::string kp_path = require("keypoints.jsonl");
  auto corpus = corpus::Corpus::load(require("corpus"));
  auto kps = jsonl::read_as<keypoints::Keypoint>(kp_path);
  verification::VerifyProviders vp{providers_.text_gen.get(), providers_.vision_gen.get(), providers_.judge.get()};
  const bool is_strict = strict.value_or(config_.strict);
  std::vector<verification::VerificationRecord> records;
  json drops = json::object();
  std::size_t retained = 0;
  std::size_t skipped = 0;
  for (auto& kp : kps) {
    if (kp.status != keypoints::Status::candidate) continue;
    if (kp.pool && *kp.pool == keypoints::Pool::both) {
      ++skipped;
      continue;
    }
    auto rec = verification::verify(kp, verification::pair_sources(kp, corpus), vp, is_strict);
    if (kp.status == keypoints::Status::retained) {
      ++retained;
    } else if (kp.drop_reason) {
      const std::string key(keypoints::to_string(*kp.drop_reason));
      drops[key] = drops.value(key, 0) + 1;
    }
    records.push_back(std::move(rec));
  }
  const std::string rec_path = config_.work_path("verification.jsonl");
  const std::string out_path = config_.work_path("keypoints_verified.jsonl");
  jsonl::write_all(rec_path, records);
  jsonl::write_all(out_path, kps);
  s.details = {{"verified", records.size()}, {"retained", retained}, {"dropped", drops}, {"both_pool", skipped}};
  s.outputs = {rec_path, out_path};
  return s;
}

StageSummary Pipeline::generate() {
  StageSummary s;
  s.stage = "generate";
  const std::string kp_path = require("keypoints_verified.jsonl");
  auto corpus = corpus::Corpus::load(require("corpus"));
  std::vector<keypoints::Keypoint> retained;
  for (auto& kp : jsonl::read_as<keypoints::Keypoint>(kp_path)) {
    if (kp.status == keypoints::Status::retained) retained.push_back(std::move(kp));
  }
  if (config_.quotas.empty()) throw Error(ErrorCode::ConfigInvalid, "no [quotas] configured");
  qagen::BuildOptions options = config_.qagen;
  options.seed = *config_.seed;
  auto result = qagen::build_dataset(corpus, retained, config_.quotas, options,
                                     {providers_.text_gen.get(), providers_.vision_gen.get()}, *providers_.embed_text);
  const std::string dataset_path = config_.work_path("dataset.jsonl");
  const std::string manifest_path = config_.work_path("manifest.json");
  jsonl::write_all(dataset_path, result.pairs);
  text::write_file(manifest_path, result.manifest.dump(2) + "\n");
  s.details = result.manifest;
  s.outputs = {dataset_path, manifest_path};
  return s;
}

StageSummary Pipeline::index(std::optional<std::string> architecture) {
  StageSummary s;
  s.stage = "index";
  auto arch = retrieval::architecture_from_string(architecture.value_or(config_.architecture));
  auto corpus = corpus::Corpus::load(require("corpus"));
  retrieval::IndexSet set;
  switch (arch) {
    case retrieval::Architecture::unified_single: set = retrieval::index_unified(corpus, embedders()); break;
    case retrieval::Architecture::caption_combined:
      set = retrieval::index_caption_combined(corpus, *providers_.captioner, embedders());
      break;
    case retrieval::Architecture::separate_fused:
      set = retrieval::index_separate(corpus, embedders(),
                                      config_.sparse ? std::optional<retrieval::SparseParams>(retrieval::SparseParams{})
                                                     : std::nullopt);
      break;
  }
  const std::string dir = config_.work_path("index/" + std::string(retrieval::to_string(arch)));
  set.save(dir);
  s.details = {{"architecture", retrieval::to_string(arch)},
               {"unified", set.unified ? set.unified->size() : 0},
               {"text", set.text ? set.text->size() : 0},
               {"chart", set.chart ? set.chart->size() : 0},
               {"sparse", set.sparse ? set.sparse->size() : 0}};
  s.outputs = {dir};
  return s;
}

StageSummary Pipeline::retrieve(std::optional<std::size_t> k, std::optional<std::string> ratio,
                                std::optional<std::string> architecture) {
  StageSummary s;
  s.stage = "retrieve";
  auto arch = retrieval::architecture_from_string(architecture.value_or(config_.architecture));
  auto policy = retrieval::FusionPolicy::parse(ratio.value_or(config_.ratio));
  const std::size_t depth = k.value_or(config_.retrieval_k);
  if (depth == 0) throw Error(ErrorCode::ConfigInvalid, "k must be at least 1");
  auto dataset = jsonl::read_as<qagen::QAPair>(require("dataset.jsonl"));
  auto corpus = corpus::Corpus::load(require("corpus"));
  const std::string dir = "index/" + std::string(retrieval::to_string(arch));
  require(dir + "/index.json");
  auto set = retrieval::IndexSet::load(config_.work_path(dir));
  std::vector<json> rows;
  double recall_sum = 0;
  for (const auto& pair : dataset) {
    auto found = retrieval::search(set, pair.question, depth, policy, embedders(), pair.qa_id);
    recall_sum += retrieval::recall_at_k(found, retrieval::GroundTruthRefs::from_pair(pair, corpus));
    rows.push_back(found);
  }
  const std::string out = config_.work_path("retrieved.jsonl");
  jsonl::write(out, rows);
  s.details = {{"queries", rows.size()},
               {"k", depth},
               {"ratio", policy.name()},
               {"architecture", retrieval::to_string(arch)},
               {"mean_recall", rows.empty() ? 0.0 : recall_sum / static_cast<double>(rows.size())}};
  s.outputs = {out};
  return s;
}

std::vector<evaluation::EvalCondition> Pipeline::conditions(const std::string& spec,
                                                            std::optional<std::size_t> k) const {
  std::vector<evaluation::EvalCondition> out;
  std::stringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = text::collapse_whitespace(item);
    if (item.empty()) continue;
    switch (evaluation::mode_from_string(item)) {
      case evaluation::Mode::no_rag: out.push_back(evaluation::EvalCondition::no_rag()); break;
      case evaluation::Mode::gt_retrieval: out.push_back(evaluation::EvalCondition::gt()); break;
      case evaluation::Mode::rag_k:
        out.push_back(evaluation::EvalCondition::rag(k.value_or(config_.retrieval_k),
                                                     retrieval::architecture_from_string(config_.architecture),
                                                     retrieval::FusionPolicy::parse(config_.ratio)));
        break;
    }
  }
  if (out.empty()) throw Error(ErrorCode::ConfigInvalid, "no evaluation conditions in '" + spec + "'");
  return out;
}

StageSummary Pipeline::answer(const std::vector<evaluation::EvalCondition>& conditions) {
  StageSummary s;
  s.stage = "answer";
  auto dataset = jsonl::read_as<qagen::QAPair>(require("dataset.jsonl"));
  auto corpus = corpus::Corpus::load(require("corpus"));
  std::optional<retrieval::IndexSet> set;
  for (const auto& c : conditions) {
    if (c.mode != evaluation::Mode::rag_k) continue;
    const std::string d = "index/" + std::string(retrieval::to_string(*c.architecture));
    require(d + "/index.json");
    set = retrieval::IndexSet::load(config_.work_path(d));
  }
  fs::create_directories(config_.work_path("answers"));
  for (const auto& cond : conditions) {
    cond.validate();
    std::vector<json> rows;
    for (const auto& pair : dataset) {
      std::vector<evaluation::ContextItem> context;
      if (cond.mode == evaluation::Mode::rag_k) {
        auto found = retrieval::search(*set, pair.question, *cond.k, cond.ratio.value_or(retrieval::FusionPolicy{}),
                                       embedders(), pair.qa_id);
        context = evaluation::context_from_retrieved(found, corpus);
      } else if (cond.mode == evaluation::Mode::gt_retrieval) {
        context = evaluation::context_from_gt(pair, corpus);
      }
      rows.push_back({{"qa_id", pair.qa_id},
                      {"condition", cond.label()},
                      {"response", evaluation::answer(pair.question, cond, context, *providers_.responder)}});
    }
    const std::string out = config_.work_path("answers/" + cond.label() + ".jsonl");
    jsonl::write(out, rows);
    s.outputs.push_back(out);
    s.details[cond.label()] = rows.size();
  }
  return s;
}

StageSummary Pipeline::evaluate(const std::vector<evaluation::EvalCondition>& conditions,
                                std::optional<std::string> run_id) {
  StageSummary s;
  s.stage = "evaluate";
  auto dataset = jsonl::read_as<qagen::QAPair>(require("dataset.jsonl"));
  auto kps = jsonl::read_as<keypoints::Keypoint>(require("keypoints_verified.jsonl"));
  auto corpus = corpus::Corpus::load(require("corpus"));
  std::optional<retrieval::IndexSet> set;
  for (const auto& c : conditions) {
    if (c.mode != evaluation::Mode::rag_k) continue;
    const std::string d = "index/" + std::string(retrieval::to_string(*c.architecture));
    require(d + "/index.json");
    set = retrieval::IndexSet::load(config_.work_path(d));
  }
  evaluation::RetrievalContext rc;
  if (set) rc.indexes = &*set;
  rc.embedders = embedders();
  auto result = evaluation::run_suite(
      dataset, kps, conditions, corpus,
      {providers_.responder.get(), providers_.judge.get(), providers_.judge.get()}, rc);
  const std::string dir = config_.work_path("eval/" + run_id.value_or(config_.run_id));
  evaluation::write_suite(result, dir);
  s.details = result.report.to_json();
  s.outputs = {dir + "/records.jsonl", dir + "/report.json", dir + "/report.txt"};
  return s;
}

StageSummary Pipeline::export_archive(const std::string& archive_path) {
  StageSummary s;
  s.stage = "export";
  std::vector<std::pair<std::string, std::string>> files = {
      {"charge-export/dataset.jsonl", require("dataset.jsonl")},
      {"charge-export/manifest.json", require("manifest.json")},
  };
  const std::string review_dir = config_.resolve(config_.review_data);
  if (fs::exists(fs::path(review_dir) / "candidates.jsonl")) {
    review::ReviewStore store(review_dir);
    const std::string staged = config_.work_path("export");
    fs::create_directories(staged);
    const std::string reviewed = staged + "/dataset_reviewed.jsonl";
    const std::string decisions = staged + "/review_decisions.jsonl";
    jsonl::write_all(reviewed, store.candidates());
    jsonl::write_all(decisions, store.decisions());
    text::write_file(staged + "/review_stats.json", store.stats().dump(2) + "\n");
    files.emplace_back("charge-export/dataset_reviewed.jsonl", reviewed);
    files.emplace_back("charge-export/review_decisions.jsonl", decisions);
    files.emplace_back("charge-export/review_stats.json", staged + "/review_stats.json");
  }
  write_tar_gz(archive_path, files);
  for (const auto& f : files) s.outputs.push_back(f.first);
  s.details = {{"archive", archive_path}, {"members", files.size()}};
  return s;
}

// ---------------------------------------------------------------------------
// Archive

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  std::string digits;
  do {
    digits.insert(digits.begin(), static_cast<char>('0' + (value & 7)));
    value >>= 3;
  } while (value);
  if (digits.size() > width - 1) throw Error(ErrorCode::Io, "tar field overflow");
  digits.insert(digits.begin(), width - 1 - digits.size(), '0');
  std::memcpy(field, digits.data(), width - 1);
  field[width - 1] = '\0';
}

std::array<char, kBlock> ustar_header(const std::string& name, std::uint64_t size) {
  std::array<char, kBlock> h{};
  std::string prefix;
  std::string base = name;
  if (base.size() > 100) {
    auto slash = name.rfind('/', 155);
    if (slash == std::string::npos || name.size() - slash - 1 > 100) {
      throw Error(ErrorCode::Io, "archive member name too long: " + name);
    }
    prefix = name.substr(0, slash);
    base = name.substr(slash + 1);
  }
  std::memcpy(h.data(), base.data(), base.size());
  put_octal(h.data() + 100, 8, 0644);
  put_octal(h.data() + 108, 8, 0);
  put_octal(h.data() + 116, 8, 0);
  put_octal(h.data() + 124, 12, size);
  put_octal(h.data() + 136, 12, 0);
  h[156] = '0';
  std::memcpy(h.data() + 257, "ustar", 6);
  std::memcpy(h.data() + 263, "00", 2);
  std::memcpy(h.data() + 345, prefix.data(), prefix.size());
  std::memset(h.data() + 148, ' ', 8);
  unsigned sum = 0;
  for (char c : h) sum += static_cast<unsigned char>(c);
  put_octal(h.data() + 148, 7, sum);
  h[155] = ' ';
  return h;
}

}  // namespace

void write_tar_gz(const std::string& archive_path, const std::vector<std::pair<std::string, std::string>>& files) {
  fs::path out(archive_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  gzFile gz = gzopen(archive_path.c_str(), "wb9");
  if (!gz) throw Error(ErrorCode::Io, "cannot create " + archive_path);
  auto put = [&](const char* data, std::size_t n) {
    if (n && gzwrite(gz, data, static_cast<unsigned>(n)) != static_cast<int>(n)) {
      gzclose(gz);
      throw Error(ErrorCode::Io, "write failed on " + archive_path);
    }
  };
  const std::array<char, kBlock> zero{};
  for (const auto& [name, path] : files) {
    const std::string body = text::read_file(path);
    auto header = ustar_header(name, body.size());
    put(header.data(), header.size());
    put(body.data(), body.size());
    if (body.size() % kBlock) put(zero.data(), kBlock - body.size() % kBlock);
  }
  put(zero.data(), kBlock);
  put(zero.data(), kBlock);
  if (gzclose(gz) != Z_OK) throw Error(ErrorCode::Io, "close failed on " + archive_path);
}

std::vector<std::string> list_tar_gz(const std::string& archive_path) {
  gzFile gz = gzopen(archive_path.c_str(), "rb");
  if (!gz) throw Error(ErrorCode::MissingStageInput, archive_path);
  std::vector<std::string> names;
  std::array<char, kBlock> block{};
  while (gzread(gz, block.data(), kBlock) == static_cast<int>(kBlock)) {
    if (block[0] == '\0') break;
    std::string name(block.data(), strnlen(block.data(), 100));
    std::string prefix(block.data() + 345, strnlen(block.data() + 345, 155));
    names.push_back(prefix.empty() ? name : prefix + "/" + name);
    std::uint64_t size = std::strtoull(std::string(block.data() + 124, 12).c_str(), nullptr, 8);
    std::uint64_t skip = (size + kBlock - 1) / kBlock * kBlock;
    std::vector<char> sink(kBlock);
    for (; skip > 0; skip -= kBlock) gzread(gz, sink.data(), kBlock);
  }
  gzclose(gz);
  return names;
}

// ---------------------------------------------------------------------------
// Demo

std::string default_demo_dir() { return (fs::path(CHARGE_SOURCE_DIR) / "fixtures" / "demo").string(); }

DemoResult run_demo(const std::string& fixture_dir, const std::string& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  Config config = Config::load((fs::path(fixture_dir) / "charge.toml").string());
  config.workdir = fs::absolute(out_dir).string();
  Pipeline p(config);
  auto run = [&](StageSummary s) {
    p.log_stage(s, "ok");
    return s;
  };
  run(p.ingest());
  run(p.extract());
  run(p.verify());
  auto generated = run(p.generate());
  run(p.index());
  run(p.retrieve());
  auto conds = p.conditions(config.conditions);
  run(p.answer(conds));
  auto evaluated = run(p.evaluate(conds));

  DemoResult r;
  r.workdir = config.workdir;
  r.report = evaluated.details;
  r.table = text::read_file(config.work_path("eval/" + config.run_id + "/report.txt"));
  r.pairs = generated.details.value("total", std::size_t{0});
  r.network_backends = p.network_backends();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace charge::pipeline
