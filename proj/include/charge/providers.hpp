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

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace charge::providers {

enum class RequestKind { text_gen, vision_gen, embed_text, embed_image, ocr, judge };

std::string_view to_string(RequestKind kind);
RequestKind request_kind_from_string(std::string_view s);

/// A template slot. Image slots carry a file path; backends that accept
/// images attach the file, text-only rendering shows the handle.
struct SlotValue {
  std::string value;
  bool is_image = false;

  SlotValue() = default;
  SlotValue(std::string v) : value(std::move(v)) {}  // NOLINT(google-explicit-constructor)
  SlotValue(const char* v) : value(v) {}             // NOLINT(google-explicit-constructor)
  static SlotValue image(std::string path) {
    SlotValue s(std::move(path));
    s.is_image = true;
    return s;
  }
};

using Slots = std::map<std::string, SlotValue>;

struct ProviderRequest {
  RequestKind kind = RequestKind::text_gen;
  std::string template_id;
  Slots slots;
  std::map<std::string, std::string> params;

  /// sha256 over (kind, template id, whitespace/NFC-normalized slots, params).
  std::string fingerprint() const;
  std::vector<std::string> images() const;
};

struct ProviderResponse {
  std::optional<std::string> text;
  std::optional<std::vector<double>> vector;
  std::optional<nlohmann::json> structured;
  std::string provider_id;
  bool cached = false;
};

void to_json(nlohmann::json& j, const ProviderResponse& r);
void from_json(const nlohmann::json& j, ProviderResponse& r);

// ---------------------------------------------------------------------------
// Templates

/// Substitutes `{name}` placeholders. Only identifiers of the form
/// [A-Za-z_][A-Za-z0-9_]* are placeholders; `{{` and `}}` produce literal
/// braces and any other brace is copied through.
std::string render_template(std::string_view tmpl, const Slots& slots, std::string_view template_id = "");

/// Distinct placeholder names in order of first appearance.
std::vector<std::string> template_placeholders(std::string_view tmpl);

class TemplateLibrary {
 public:
  static TemplateLibrary load_dir(const std::string& dir);

  void add(std::string id, std::string body);
  bool contains(const std::string& id) const { return templates_.count(id) != 0; }
  const std::string& get(const std::string& id) const;
  std::string render(const std::string& id, const Slots& slots) const;

 private:
  std::map<std::string, std::string> templates_;
};

// ---------------------------------------------------------------------------
// Backends

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  /// `prompt` is the rendered template, empty when the request has none.
  /// Throws Error{BackendUnavailable} on failure, Error{RateLimited} for a
  /// transient refusal the client may retry.
  virtual ProviderResponse complete(const ProviderRequest& request, const std::string& prompt) = 0;
};

enum class Fallback { error, echo };

/// Fixture-backed backend. Exact fingerprint entries take precedence, then
/// rules in insertion order; a rule matches when its kind/template agree and
/// every `contains` slot holds the given substring (normalized).
class ScriptedBackend : public Backend {
 public:
  struct Rule {
    std::optional<RequestKind> kind;
    std::string template_id;
    std::map<std::string, std::string> contains;
    ProviderResponse response;
  };

  explicit ScriptedBackend(std::string id = "scripted", Fallback fallback = Fallback::error)
      : id_(std::move(id)), fallback_(fallback) {}

  /// Fixture file: JSON array or JSONL of entries, each with a `response` and
  /// either a `fingerprint`, a full request (`kind`, `template`, `slots`,
  /// `params`) or a rule (`kind`/`template` plus optional `contains`).
  static std::shared_ptr<ScriptedBackend> from_file(const std::string& path, std::string id = "scripted",
                                                    Fallback fallback = Fallback::error);

  void add_entry(const nlohmann::json& entry);
  void add(const std::string& fingerprint, ProviderResponse response);
  void add(const ProviderRequest& request, ProviderResponse response) { add(request.fingerprint(), std::move(response)); }
  void add_rule(Rule rule);

  std::string id() const override { return id_; }
  ProviderResponse complete(const ProviderRequest& request, const std::string& prompt) override;

  std::size_t call_count() const { return calls_.load(); }

 private:
  std::string id_;
  Fallback fallback_;
  mutable std::mutex mu_;
  std::map<std::string, ProviderResponse> exact_;
  std::vector<Rule> rules_;
  std::atomic<std::size_t> calls_{0};
};

/// Feature-hashing embedder: every token lands in bucket h(token) mod
/// dimension with a sign taken from a second hash, then the vector is
/// L2-normalized. Image requests embed the bytes of the image file read as
/// text, so SVG charts embed by their labels.
class HashEmbedder : public Backend {
 public:
  explicit HashEmbedder(std::size_t dimension = 256, std::uint64_t seed = 0);

  std::vector<double> embed(std::string_view text) const;

  std::size_t dimension() const { return dimension_; }
  std::string id() const override;
  ProviderResponse complete(const ProviderRequest& request, const std::string& prompt) override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

struct HttpBackendConfig {
  std::string endpoint;  // scheme://host[:port][/prefix]
  std::string model;
  std::string api_key;
  int timeout_seconds = 60;
};

/// OpenAI-compatible chat/embeddings client.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  std::string id() const override;
  ProviderResponse complete(const ProviderRequest& request, const std::string& prompt) override;

 private:
  HttpBackendConfig config_;
};

// ---------------------------------------------------------------------------
// Cache and client

/// Append-only JSONL ledger of responses keyed by (backend id, request
/// fingerprint), so slots backed by different models can share one file.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::string ledger_path);

  std::optional<ProviderResponse> get(const std::string& provider, const std::string& fingerprint) const;
  void put(const std::string& provider, const std::string& fingerprint, const ProviderRequest& request,
           const ProviderResponse& response);
  std::size_t size() const;

 private:
  std::optional<std::string> path_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, ProviderResponse> entries_;
};

struct RetryPolicy {
  std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(2),
                                                 std::chrono::seconds(4)};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to std::this_thread::sleep_for
};

class ProviderClient {
 public:
  ProviderClient(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache,
                 std::shared_ptr<const TemplateLibrary> templates, RetryPolicy retry = {},
                 std::size_t max_in_flight = 4);

  /// Cache hit → stored response with cached=true. Miss → render, dispatch
  /// with retries, store. Concurrent identical requests share one backend call.
  ProviderResponse call(const ProviderRequest& request);

  std::string call_text(const ProviderRequest& request);

  /// Parses the response as JSON (fences stripped). On a parse or validation
  /// failure the request is reissued once with a strict-JSON reminder, then
  /// StructuredParseError is thrown.
  nlohmann::json call_structured(const ProviderRequest& request,
                                 const std::function<bool(const nlohmann::json&)>& valid = {});

  std::vector<double> embed_text(const std::string& text);
  std::vector<double> embed_image(const std::string& image_path);

  std::string backend_id() const { return backend_->id(); }
  const TemplateLibrary& templates() const { return *templates_; }

 private:
  ProviderResponse dispatch(const ProviderRequest& request, const std::string& prompt);

  std::shared_ptr<Backend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  std::shared_ptr<const TemplateLibrary> templates_;
  RetryPolicy retry_;

  std::mutex mu_;
  std::condition_variable slots_cv_;
  std::size_t max_in_flight_;
  std::size_t in_flight_ = 0;
  std::map<std::string, std::shared_future<ProviderResponse>> pending_;
};

/// Parses model output as JSON, tolerating markdown code fences and leading
/// prose. Returns nullopt on failure.
std::optional<nlohmann::json> parse_json_payload(std::string_view text);

/// Two-tier equivalence: normalized exact match, then the judge provider.
/// A null judge makes tier 2 unavailable (BackendUnavailable).
bool judge_equivalent(std::string_view a, std::string_view b, ProviderClient* judge);

/// The provider slots the pipeline wires up.
struct ProviderSet {
  std::shared_ptr<ProviderClient> text_gen;
  std::shared_ptr<ProviderClient> vision_gen;
  std::shared_ptr<ProviderClient> embed_text;
  std::shared_ptr<ProviderClient> embed_image;
  std::shared_ptr<ProviderClient> ocr;
  std::shared_ptr<ProviderClient> judge;
  std::shared_ptr<ProviderClient> captioner;
  std::shared_ptr<ProviderClient> responder;
};

}  // namespace charge::providers
