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

#include <CLI11.hpp>

#include "charge/error.hpp"
#include "charge/jsonl.hpp"
#include "charge/pipeline.hpp"
#include "charge/review.hpp"
#include "charge/text.hpp"

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace {

namespace fs = std::filesystem;
using charge::pipeline::Config;
using charge::pipeline::Pipeline;
using charge::pipeline::StageSummary;

charge::review::ReviewServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

Config load_config(const std::string& path) {
  Config c = Config::load(path);
  c.apply_env([](const char* name) { return std::getenv(name); });
  return c;
}

void report(Pipeline& p, const StageSummary& s) {
  p.log_stage(s, "ok");
  std::cout << charge::jsonl::dump({{"stage", s.stage}, {"outputs", s.outputs}, {"details", s.details}}) << "\n";
}

int serve(const Config& config, const std::string& host, int port, std::string data_dir, std::string auth_path) {
  if (data_dir.empty()) data_dir = config.resolve(config.review_data);
  if (auth_path.empty()) auth_path = config.resolve(config.review_auth);
  if (auth_path.empty()) throw charge::Error(charge::ErrorCode::ConfigInvalid, "review.auth is required to serve");
  auto auth = charge::review::load_auth(auth_path);

  charge::review::ReviewStore store(data_dir);
  if (store.candidates().empty()) {
    const std::string dataset = config.work_path("dataset.jsonl");
    if (!fs::exists(dataset)) throw charge::Error(charge::ErrorCode::MissingStageInput, dataset);
    store.import_candidates(charge::jsonl::read_as<charge::qagen::QAPair>(dataset));
  }
  if (store.assignments().empty()) {
    std::vector<std::string> roster;
    for (const auto& [token, id] : auth.reviewer_tokens) roster.push_back(id);
    std::sort(roster.begin(), roster.end());
    store.assign(roster, *config.seed);
  }

  std::optional<charge::corpus::Corpus> corpus;
  if (fs::exists(config.work_path("corpus/corpus.jsonl"))) corpus = charge::corpus::Corpus::load(config.work_path("corpus"));
  std::optional<std::string> static_dir;
  if (!config.review_static.empty()) static_dir = config.resolve(config.review_static);
  charge::review::ReviewServer server(store, corpus ? &*corpus : nullptr, auth, static_dir);
  const std::string kp_path = config.work_path("keypoints_verified.jsonl");
  if (fs::exists(kp_path)) server.set_keypoints(charge::jsonl::read_as<charge::keypoints::Keypoint>(kp_path));
  if (!server.bind(host, port)) {
    throw charge::Error(charge::ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "charge: review service on http://" << host << ":" << port << " (data " << data_dir << ")\n";
  server.listen_after_bind();
  g_server = nullptr;
  store.snapshot();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"charge: chart-grounded multimodal RAG dataset builder and evaluator"};
  app.require_subcommand(1);
  std::string config_path = "charge.toml";
  app.add_option("-c,--config", config_path, "Pipeline config file")->envname("CHARGE_CONFIG");

  auto* ingest = app.add_subcommand("ingest", "Chunk documents, OCR charts, write corpus/");
  auto* extract = app.add_subcommand("extract", "Extract and classify keypoints into keypoints.jsonl");

  auto* verify = app.add_subcommand("verify", "Crossmodal verification of candidate keypoints");
  bool strict = false;
  verify->add_flag("--strict", strict, "Halt on an unavailable judge instead of dropping");

  auto* generate = app.add_subcommand("generate", "Generate the eight QA categories into dataset.jsonl");

  auto* index = app.add_subcommand("index", "Build retrieval indexes under index/<architecture>/");
  std::string arch;
  index->add_option("--arch", arch, "unified | caption | separate");

  auto* retrieve = app.add_subcommand("retrieve", "Retrieve top-k references per question into retrieved.jsonl");
  std::size_t k = 0;
  std::string ratio;
  std::string retrieve_arch;
  retrieve->add_option("--k", k, "Number of references")->check(CLI::PositiveNumber);
  retrieve->add_option("--ratio", ratio, "three_to_two | balanced | weighted:<t>:<c>");
  retrieve->add_option("--arch", retrieve_arch, "unified | caption | separate");

  auto* answer = app.add_subcommand("answer", "Generate responses under the configured conditions");
  std::string answer_mode;
  std::size_t answer_k = 0;
  answer->add_option("--mode", answer_mode, "none | rag | gt (comma separated)");
  answer->add_option("--k", answer_k, "k for rag")->check(CLI::PositiveNumber);

  auto* evaluate = app.add_subcommand("evaluate", "Score responses with correctness, coverage and recall");
  std::string eval_mode;
  std::size_t eval_k = 0;
  std::string run_id;
  evaluate->add_option("--mode", eval_mode, "none | rag | gt (comma separated)");
  evaluate->add_option("--k", eval_k, "k for rag")->check(CLI::PositiveNumber);
  evaluate->add_option("--run-id", run_id, "Output folder under eval/");

  auto* serve_cmd = app.add_subcommand("serve", "Run the review service");
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string data_dir;
  std::string auth_path;
  serve_cmd->add_option("--port", port, "Listen port");
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--data", data_dir, "Review data directory");
  serve_cmd->add_option("--auth", auth_path, "Token file");

  auto* export_cmd = app.add_subcommand("export", "Bundle dataset, manifest and review outcomes as .tar.gz");
  std::string archive = "charge-export.tar.gz";
  export_cmd->add_option("--out", archive, "Archive path");

  auto* demo = app.add_subcommand("demo", "Run the bundled offline fixture end to end");
  std::string demo_out = "charge-demo";
  std::string demo_fixture = charge::pipeline::default_demo_dir();
  demo->add_option("--out", demo_out, "Working directory for the demo");
  demo->add_option("--fixture", demo_fixture, "Fixture directory containing charge.toml");

  CLI11_PARSE(app, argc, argv);

  std::optional<Pipeline> pipeline;
  std::string stage;
  try {
    if (demo->parsed()) {
      auto r = charge::pipeline::run_demo(demo_fixture, demo_out);
      std::cout << r.table;
      std::cout << "pairs=" << r.pairs << " network_backends=" << r.network_backends << " seconds=" << r.seconds
                << " workdir=" << r.workdir << "\n";
      return 0;
    }
    Config config = load_config(config_path);
    if (serve_cmd->parsed()) return serve(config, host, port, data_dir, auth_path);
    pipeline.emplace(config);
    Pipeline& p = *pipeline;
    auto opt_k = [](std::size_t v) { return v ? std::optional<std::size_t>(v) : std::nullopt; };
    auto opt_s = [](const std::string& v) { return v.empty() ? std::nullopt : std::optional<std::string>(v); };
    if (ingest->parsed()) {
      stage = "ingest";
      report(p, p.ingest());
    } else if (extract->parsed()) {
      stage = "extract";
      report(p, p.extract());
    } else if (verify->parsed()) {
      stage = "verify";
      report(p, p.verify(strict ? std::optional<bool>(true) : std::nullopt));
    } else if (generate->parsed()) {
      stage = "generate";
      report(p, p.generate());
    } else if (index->parsed()) {
      stage = "index";
      report(p, p.index(opt_s(arch)));
    } else if (retrieve->parsed()) {
      stage = "retrieve";
      report(p, p.retrieve(opt_k(k), opt_s(ratio), opt_s(retrieve_arch)));
    } else if (answer->parsed()) {
      stage = "answer";
      report(p, p.answer(p.conditions(answer_mode.empty() ? config.conditions : answer_mode, opt_k(answer_k))));
    } else if (evaluate->parsed()) {
      stage = "evaluate";
      auto s = p.evaluate(p.conditions(eval_mode.empty() ? config.conditions : eval_mode, opt_k(eval_k)),
                          opt_s(run_id));
      p.log_stage(s, "ok");
      std::cout << s.details.dump(2) << "\n";
    } else if (export_cmd->parsed()) {
      stage = "export";
      report(p, p.export_archive(archive));
    }
  } catch (const charge::Error& e) {
    std::cerr << "charge: " << e.what() << "\n";
    if (pipeline && !stage.empty()) {
      StageSummary s;
      s.stage = stage;
      pipeline->log_stage(s, "error", e.what());
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "charge: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
