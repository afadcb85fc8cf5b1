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
#include "charge/evaluation.hpp"
#include "charge/providers.hpp"
#include "charge/qagen.hpp"
#include "charge/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace charge::pipeline {

inline constexpr std::array<std::string_view, 8> kSlotNames = {
    "text_gen", "vision_gen", "embed_text", "embed_image", "ocr", "judge", "captioner", "responder"};

inline constexpr std::array<std::string_view, 10> kCommands = {
    "ingest", "extract", "verify", "generate", "index", "retrieve", "answer", "evaluate", "serve", "export"};

/// Template ids the pipeline renders; each must exist as templates/<id>.txt.
const std::vector<std::string>& required_templates();

struct SlotSpec {
  std::string backend = "scripted";  // scripted | hash | http
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  int timeout_seconds = 60;
};

struct Config {
  std::string base_dir = ".";
  std::string workdir = "work";
  std::string inputs = "bundles";
  std::string templates = "templates";
  std::optional<std::uint64_t> seed;
  std::size_t chunk_target_words = corpus::kDefaultTargetWords;

  std::string fixture;
  std::string fallback = "error";
  std::size_t embed_dimension = 256;
  std::uint64_t embed_seed = 0;
  std::size_t max_in_flight = 4;
  std::map<std::string, SlotSpec> slots;

  std::size_t retrieval_k = 10;
  std::string ratio = "three_to_two";
  std::string architecture = "separate_fused";
  bool sparse = true;

  qagen::BuildOptions qagen;
  std::map<qagen::QACategory, std::size_t> quotas;

  std::string conditions = "no_rag,rag,gt";
  std::string run_id = "default";
  bool strict = false;

  std::string review_data = "review";
  std::string review_auth;
  std::string review_static;

  /// Parses a `[section]` / `key = value` file; relative paths resolve
  /// against the file's directory.
  static Config load(const std::string& path);
  static Config parse(const std::string& content, const std::string& base_dir);

  /// `CHARGE_<SECTION>_<KEY>` overrides, e.g. CHARGE_RUN_SEED=3.
  void apply_env(const std::function<const char*(const char*)>& getenv_fn);

  /// Throws ConfigInvalid: missing seed, unknown enum values, absent
  /// templates, scripted slots without a fixture.
  void validate() const;

  std::string resolve(const std::string& path) const;
  std::string work_path(const std::string& relative) const;
};

struct StageSummary {
  std::string stage;
  nlohmann::json details = nlohmann::json::object();
  std::vector<std::string> outputs;
};

class Pipeline {
 public:
  explicit Pipeline(Config config);

  StageSummary ingest();
  StageSummary extract();
  StageSummary verify(std::optional<bool> strict = std::nullopt);
  StageSummary generate();
  StageSummary index(std::optional<std::string> architecture = std::nullopt);
  StageSummary retrieve(std::optional<std::size_t> k = std::nullopt, std::optional<std::string> ratio = std::nullopt,
                        std::optional<std::string> architecture = std::nullopt);
  StageSummary answer(const std::vector<evaluation::EvalCondition>& conditions);
  StageSummary evaluate(const std::vector<evaluation::EvalCondition>& conditions, std::optional<std::string> run_id = {});
  StageSummary export_archive(const std::string& archive_path);

  /// Parses "no_rag,rag,gt" (also none/rag_k/gt_retrieval) against the
  /// configured retrieval defaults.
  std::vector<evaluation::EvalCondition> conditions(const std::string& spec,
                                                    std::optional<std::size_t> k = std::nullopt) const;

  const Config& config() const { return config_; }
  providers::ProviderSet& providers() { return providers_; }
  /// Number of slots wired to a network backend.
  std::size_t network_backends() const { return network_backends_; }

  /// Appends one line to stage.log.jsonl.
  void log_stage(const StageSummary& summary, const std::string& status, const std::string& message = {});

 private:
  std::string require(const std::string& relative) const;
  retrieval::Embedders embedders();

  Config config_;
  providers::ProviderSet providers_;
  std::size_t network_backends_ = 0;
};

/// Writes a gzip-compressed ustar archive of `files` (archive name → path).
void write_tar_gz(const std::string& archive_path, const std::vector<std::pair<std::string, std::string>>& files);

/// Lists archive member names of a gzip-compressed ustar archive.
std::vector<std::string> list_tar_gz(const std::string& archive_path);

struct DemoResult {
  std::string workdir;
  nlohmann::json report;
  std::string table;
  std::size_t pairs = 0;
  std::size_t network_backends = 0;
  double seconds = 0.0;
};

/// Runs ingest → extract → verify → generate → index → retrieve → answer →
/// evaluate on the bundled scripted fixture.
DemoResult run_demo(const std::string& fixture_dir, const std::string& out_dir);

/// Directory of the bundled demo fixture.
std::string default_demo_dir();

}  // namespace charge::pipeline
