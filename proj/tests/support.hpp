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

#include "charge/providers.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#ifndef CHARGE_SOURCE_DIR
#define CHARGE_SOURCE_DIR "."
#endif

namespace charge::testing {

inline std::string source_dir() { return CHARGE_SOURCE_DIR; }
inline std::string templates_dir() { return source_dir() + "/templates"; }
inline std::string demo_dir() { return source_dir() + "/fixtures/demo"; }

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("charge-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string path() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    auto p = path_ / name;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << content;
    return p.string();
  }

 private:
  std::filesystem::path path_;
};

inline std::shared_ptr<const providers::TemplateLibrary> repo_templates() {
  static auto lib =
      std::make_shared<const providers::TemplateLibrary>(providers::TemplateLibrary::load_dir(templates_dir()));
  return lib;
}

inline providers::RetryPolicy no_sleep() {
  providers::RetryPolicy p;
  p.sleep = [](std::chrono::milliseconds) {};
  return p;
}

/// Scripted backend plus a client over the repository templates.
struct Scripted {
  std::shared_ptr<providers::ScriptedBackend> backend;
  std::shared_ptr<providers::ProviderClient> client;

  explicit Scripted(const std::vector<nlohmann::json>& entries = {}, std::string id = "scripted")
      : backend(std::make_shared<providers::ScriptedBackend>(std::move(id))),
        client(std::make_shared<providers::ProviderClient>(backend, nullptr, repo_templates(), no_sleep())) {
    for (const auto& e : entries) backend->add_entry(e);
  }

  void add(const nlohmann::json& entry) { backend->add_entry(entry); }
  providers::ProviderClient* operator->() const { return client.get(); }
  providers::ProviderClient& operator*() const { return *client; }
};

inline nlohmann::json rule(const std::string& template_id, const nlohmann::json& contains,
                           const nlohmann::json& response) {
  nlohmann::json r = {{"template", template_id}, {"response", response}};
  if (!contains.is_null()) r["contains"] = contains;
  return r;
}

inline std::shared_ptr<providers::ProviderClient> hash_client(std::size_t dim = 64, std::uint64_t seed = 0) {
  return std::make_shared<providers::ProviderClient>(std::make_shared<providers::HashEmbedder>(dim, seed), nullptr,
                                                     repo_templates(), no_sleep());
}

/// Minimal SVG bar chart whose text labels drive the hash image embedding.
inline std::string svg_chart(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"200\" height=\"100\"><text x=\"5\" y=\"20\">" + title +
         "</text></svg>\n";
}

}  // namespace charge::testing
