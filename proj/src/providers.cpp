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

#include "charge/providers.hpp"

#include "charge/error.hpp"
#include "charge/jsonl.hpp"
#include "charge/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace charge::providers {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(RequestKind kind) {
  switch (kind) {
    case RequestKind::text_gen: return "text_gen";
    case RequestKind::vision_gen: return "vision_gen";
    case RequestKind::embed_text: return "embed_text";
    case RequestKind::embed_image: return "embed_image";
    case RequestKind::ocr: return "ocr";
    case RequestKind::judge: return "judge";
  }
  return "text_gen";
}

RequestKind request_kind_from_string(std::string_view s) {
  for (auto k : {RequestKind::text_gen, RequestKind::vision_gen, RequestKind::embed_text, RequestKind::embed_image,
                 RequestKind::ocr, RequestKind::judge}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown request kind '" + std::string(s) + "'");
}

std::string ProviderRequest::fingerprint() const {
  json slot_json = json::object();
  for (const auto& [name, slot] : slots) {
    slot_json[name] = {{"v", text::collapse_whitespace(slot.value)}, {"img", slot.is_image}};
  }
  json body = {{"kind", to_string(kind)}, {"template", template_id}, {"slots", slot_json}, {"params", params}};
  return text::sha256_hex(jsonl::dump(body));
}

std::vector<std::string> ProviderRequest::images() const {
  std::vector<std::string> out;
  for (const auto& [name, slot] : slots) {
    if (slot.is_image) out.push_back(slot.value);
  }
  return out;
}

void to_json(json& j, const ProviderResponse& r) {
  j = json::object();
  if (r.text) j["text"] = *r.text;
  if (r.vector) j["vector"] = *r.vector;
  if (r.structured) j["structured"] = *r.structured;
  j["provider_id"] = r.provider_id;
}

void from_json(const json& j, ProviderResponse& r) {
  r = ProviderResponse{};
  if (j.contains("text")) r.text = j.at("text").get<std::string>();
  if (j.contains("vector")) r.vector = j.at("vector").get<std::vector<double>>();
  if (j.contains("structured")) r.structured = j.at("structured");
  r.provider_id = j.value("provider_id", "");
}

// ---------------------------------------------------------------------------
// Templates

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

/// Calls `on_text` for literal runs and `on_slot` for each placeholder.
template <typename OnText, typename OnSlot>
void scan_template(std::string_view tmpl, OnText on_text, OnSlot on_slot) {
  std::size_t i = 0;
  std::size_t literal_start = 0;
  while (i < tmpl.size()) {
    if ((tmpl[i] == '{' || tmpl[i] == '}') && i + 1 < tmpl.size() && tmpl[i + 1] == tmpl[i]) {
      on_text(tmpl.substr(literal_start, i + 1 - literal_start));
      i += 2;
      literal_start = i;
      continue;
    }
    if (tmpl[i] == '{' && i + 1 < tmpl.size() && ident_start(tmpl[i + 1])) {
      std::size_t j = i + 1;
      while (j < tmpl.size() && ident_char(tmpl[j])) ++j;
      if (j < tmpl.size() && tmpl[j] == '}') {
        on_text(tmpl.substr(literal_start, i - literal_start));
        on_slot(tmpl.substr(i + 1, j - i - 1));
        i = j + 1;
        literal_start = i;
        continue;
      }
    }
    ++i;
  }
  on_text(tmpl.substr(literal_start));
}

}  // namespace

std::vector<std::string> template_placeholders(std::string_view tmpl) {
  std::vector<std::string> out;
  scan_template(tmpl, [](std::string_view) {}, [&](std::string_view name) {
    if (std::find(out.begin(), out.end(), name) == out.end()) out.emplace_back(name);
  });
  return out;
}

std::string render_template(std::string_view tmpl, const Slots& slots, std::string_view template_id) {
  std::string out;
  out.reserve(tmpl.size());
  scan_template(
      tmpl, [&](std::string_view lit) { out.append(lit); },
      [&](std::string_view name) {
        auto it = slots.find(std::string(name));
        if (it == slots.end()) {
          throw Error(ErrorCode::TemplateSlotMissing,
                      "slot '" + std::string(name) + "' not provided for template '" + std::string(template_id) + "'");
        }
        if (it->second.is_image) {
          out += "<image:" + it->second.value + ">";
        } else {
          out += it->second.value;
        }
      });
  return out;
}

TemplateLibrary TemplateLibrary::load_dir(const std::string& dir) {
  TemplateLibrary lib;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::ConfigInvalid, "template directory not found: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    lib.add(entry.path().stem().string(), text::read_file(entry.path().string()));
  }
  return lib;
}

void TemplateLibrary::add(std::string id, std::string body) { templates_[std::move(id)] = std::move(body); }

const std::string& TemplateLibrary::get(const std::string& id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw Error(ErrorCode::UnknownTemplate, "no template '" + id + "'");
  return it->second;
}

std::string TemplateLibrary::render(const std::string& id, const Slots& slots) const {
  return render_template(get(id), slots, id);
}

// ---------------------------------------------------------------------------
// ScriptedBackend

namespace {

ProviderResponse response_from_fixture(const json& j) {
  ProviderResponse r;
  if (j.is_string()) {
    r.text = j.get<std::string>();
    return r;
  }
  if (j.contains("text")) r.text = j.at("text").get<std::string>();
  if (j.contains("vector")) r.vector = j.at("vector").get<std::vector<double>>();
  if (j.contains("structured")) r.structured = j.at("structured");
  return r;
}

// Scripted failures ride along in the response under a reserved key.
constexpr std::string_view kRaiseKey = "__raise";

}  // namespace

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path, std::string id,
                                                            Fallback fallback) {
  auto backend = std::make_shared<ScriptedBackend>(std::move(id), fallback);
  std::string content = text::read_file(path);
  auto first = content.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && content[first] == '[') {
    for (const auto& entry : json::parse(content)) backend->add_entry(entry);
  } else {
    for (const auto& entry : jsonl::read(path)) backend->add_entry(entry);
  }
  return backend;
}

void ScriptedBackend::add_entry(const json& entry) {
  ProviderResponse response = response_from_fixture(entry.at("response"));
  if (entry.at("response").is_object() && entry.at("response").contains("raise")) {
    response.structured = json{{std::string(kRaiseKey), entry.at("response").at("raise")}};
  }
  if (entry.contains("fingerprint")) {
    add(entry.at("fingerprint").get<std::string>(), std::move(response));
    return;
  }
  if (entry.contains("slots") && !entry.contains("contains")) {
    ProviderRequest req;
    req.kind = request_kind_from_string(entry.at("kind").get<std::string>());
    req.template_id = entry.value("template", "");
    for (const auto& [name, value] : entry.at("slots").items()) {
      if (value.is_object()) {
        SlotValue sv(value.at("value").get<std::string>());
        sv.is_image = value.value("image", false);
        req.slots[name] = sv;
      } else {
        req.slots[name] = SlotValue(value.get<std::string>());
      }
    }
    if (entry.contains("params")) req.params = entry.at("params").get<std::map<std::string, std::string>>();
    add(req, std::move(response));
    return;
  }
  Rule rule;
  if (entry.contains("kind")) rule.kind = request_kind_from_string(entry.at("kind").get<std::string>());
  rule.template_id = entry.value("template", "");
  if (entry.contains("contains")) rule.contains = entry.at("contains").get<std::map<std::string, std::string>>();
  rule.response = std::move(response);
  add_rule(std::move(rule));
}

void ScriptedBackend::add(const std::string& fingerprint, ProviderResponse response) {
  std::lock_guard lock(mu_);
  exact_[fingerprint] = std::move(response);
}

void ScriptedBackend::add_rule(Rule rule) {
  for (auto& [slot, needle] : rule.contains) needle = text::normalize(needle);
  std::lock_guard lock(mu_);
  rules_.push_back(std::move(rule));
}

ProviderResponse ScriptedBackend::complete(const ProviderRequest& request, const std::string& prompt) {
  ++calls_;
  std::optional<ProviderResponse> found;
  {
    std::lock_guard lock(mu_);
    if (auto it = exact_.find(request.fingerprint()); it != exact_.end()) {
      found = it->second;
    } else {
      for (const auto& rule : rules_) {
        if (rule.kind && *rule.kind != request.kind) continue;
        if (!rule.template_id.empty() && rule.template_id != request.template_id) continue;
        bool ok = true;
        for (const auto& [slot, needle] : rule.contains) {
          std::string haystack;
          if (slot == "$prompt") {
            haystack = prompt;
          } else if (auto s = request.slots.find(slot); s != request.slots.end()) {
            haystack = s->second.value;
          } else {
            ok = false;
            break;
          }
          if (text::normalize(haystack).find(needle) == std::string::npos) {
            ok = false;
            break;
          }
        }
        if (ok) {
          found = rule.response;
          break;
        }
      }
    }
  }
  if (found) {
    if (found->structured && found->structured->is_object() && found->structured->contains(kRaiseKey)) {
      auto what = found->structured->at(std::string(kRaiseKey)).get<std::string>();
      if (what == "rate_limited") throw Error(ErrorCode::RateLimited, "scripted rate limit");
      throw Error(ErrorCode::BackendUnavailable, "scripted failure: " + what);
    }
    found->provider_id = id_;
    return *found;
  }
  if (fallback_ == Fallback::echo &&
      (request.kind != RequestKind::embed_text && request.kind != RequestKind::embed_image)) {
    ProviderResponse r;
    r.text = prompt;
    r.provider_id = id_;
    return r;
  }
  throw Error(ErrorCode::BackendUnavailable, "no scripted response for " + std::string(to_string(request.kind)) + " '" +
                                                 request.template_id + "' (" + request.fingerprint().substr(0, 12) + ")");
}

// ---------------------------------------------------------------------------
// HashEmbedder

HashEmbedder::HashEmbedder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
  if (dimension_ == 0) throw Error(ErrorCode::ConfigInvalid, "embedding dimension must be positive");
}

std::string HashEmbedder::id() const {
  return "hash-embedder-d" + std::to_string(dimension_) + "-s" + std::to_string(seed_);
}

std::vector<double> HashEmbedder::embed(std::string_view input) const {
  auto accumulate = [&](const std::vector<std::string>& tokens) {
    std::vector<double> v(dimension_, 0.0);
    for (const auto& token : tokens) {
      std::uint64_t base = text::fnv1a64(token);
      std::size_t bucket = text::splitmix64(base ^ seed_) % dimension_;
      double sign = (text::splitmix64(base ^ ~seed_) >> 63) ? -1.0 : 1.0;
      v[bucket] += sign;
    }
    return v;
  };
  auto v = accumulate(text::tokenize(input));
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v = accumulate({std::string("\x01")});
    norm = 1.0;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

ProviderResponse HashEmbedder::complete(const ProviderRequest& request, const std::string& /*prompt*/) {
  ProviderResponse r;
  r.provider_id = id();
  if (request.kind == RequestKind::embed_text) {
    auto it = request.slots.find("text");
    if (it == request.slots.end()) throw Error(ErrorCode::TemplateSlotMissing, "embed_text needs slot 'text'");
    r.vector = embed(it->second.value);
    return r;
  }
  if (request.kind == RequestKind::embed_image) {
    auto it = request.slots.find("image");
    if (it == request.slots.end()) throw Error(ErrorCode::TemplateSlotMissing, "embed_image needs slot 'image'");
    std::ifstream in(it->second.value, std::ios::binary);
    if (!in) throw Error(ErrorCode::UnreadableImage, it->second.value);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.vector = embed(ss.str());
    return r;
  }
  throw Error(ErrorCode::BackendUnavailable, "hash embedder cannot serve " + std::string(to_string(request.kind)));
}

// ---------------------------------------------------------------------------
// ResponseCache

ResponseCache::ResponseCache(std::string ledger_path) : path_(std::move(ledger_path)) {
  if (fs::exists(*path_)) {
    for (const auto& row : jsonl::read(*path_)) {
      entries_[{row.value("provider", ""), row.at("fingerprint").get<std::string>()}] =
          row.at("response").get<ProviderResponse>();
    }
  }
}

std::optional<ProviderResponse> ResponseCache::get(const std::string& provider, const std::string& fingerprint) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find({provider, fingerprint});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& provider, const std::string& fingerprint, const ProviderRequest& request,
                        const ProviderResponse& response) {
  std::lock_guard lock(mu_);
  if (!entries_.emplace(std::make_pair(provider, fingerprint), response).second) return;
  if (!path_) return;
  fs::path p(*path_);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::app);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + *path_);
  json row = {{"provider", provider},
              {"fingerprint", fingerprint},
              {"kind", to_string(request.kind)},
              {"template", request.template_id},
              {"response", response}};
  out << jsonl::dump(row) << '\n';
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// ProviderClient

ProviderClient::ProviderClient(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache,
                               std::shared_ptr<const TemplateLibrary> templates, RetryPolicy retry,
                               std::size_t max_in_flight)
    : backend_(std::move(backend)),
      cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()),
      templates_(templates ? std::move(templates) : std::make_shared<TemplateLibrary>()),
      retry_(std::move(retry)),
      max_in_flight_(max_in_flight == 0 ? 1 : max_in_flight) {
  if (!retry_.sleep) retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ProviderResponse ProviderClient::dispatch(const ProviderRequest& request, const std::string& prompt) {
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      ProviderResponse r = backend_->complete(request, prompt);
      if (r.provider_id.empty()) r.provider_id = backend_->id();
      r.cached = false;
      return r;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RateLimited) throw;
      if (attempt >= retry_.backoff.size()) {
        throw Error(ErrorCode::RateLimited,
                    "gave up after " + std::to_string(attempt + 1) + " attempts: " + std::string(e.what()));
      }
      retry_.sleep(retry_.backoff[attempt]);
    }
  }
}

ProviderResponse ProviderClient::call(const ProviderRequest& request) {
  std::string prompt;
  if (!request.template_id.empty()) {
    if (templates_->contains(request.template_id)) {
      prompt = templates_->render(request.template_id, request.slots);
    } else if (request.kind != RequestKind::embed_text && request.kind != RequestKind::embed_image &&
               request.kind != RequestKind::ocr) {
      throw Error(ErrorCode::UnknownTemplate, "no template '" + request.template_id + "'");
    }
  }
  const std::string fp = request.fingerprint();

  std::promise<ProviderResponse> promise;
  {
    std::unique_lock lock(mu_);
    if (auto hit = cache_->get(backend_->id(), fp)) {
      hit->cached = true;
      return *hit;
    }
    if (auto it = pending_.find(fp); it != pending_.end()) {
      auto fut = it->second;
      lock.unlock();
      ProviderResponse r = fut.get();
      r.cached = true;
      return r;
    }
    pending_.emplace(fp, promise.get_future().share());
    slots_cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
    ++in_flight_;
  }

  auto finish = [&] {
    std::lock_guard lock(mu_);
    --in_flight_;
    pending_.erase(fp);
    slots_cv_.notify_one();
  };

  try {
    ProviderResponse r = dispatch(request, prompt);
    cache_->put(backend_->id(), fp, request, r);
    promise.set_value(r);
    finish();
    return r;
  } catch (...) {
    promise.set_exception(std::current_exception());
    finish();
    throw;
  }
}

std::string ProviderClient::call_text(const ProviderRequest& request) {
  ProviderResponse r = call(request);
  if (r.text) return *r.text;
  if (r.structured) return r.structured->is_string() ? r.structured->get<std::string>() : jsonl::dump(*r.structured);
  throw Error(ErrorCode::BackendUnavailable, "provider returned no text for '" + request.template_id + "'");
}

std::optional<json> parse_json_payload(std::string_view raw) {
  std::string s(raw);
  auto trim = [](std::string& x) {
    auto b = x.find_first_not_of(" \t\r\n");
    auto e = x.find_last_not_of(" \t\r\n");
    x = b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
  };
  trim(s);
  if (s.rfind("```", 0) == 0) {
    auto nl = s.find('\n');
    s = nl == std::string::npos ? std::string() : s.substr(nl + 1);
    auto fence = s.rfind("```");
    if (fence != std::string::npos) s = s.substr(0, fence);
    trim(s);
  }
  auto attempt = [](const std::string& x) -> std::optional<json> {
    auto j = json::parse(x, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
  };
  if (auto j = attempt(s)) return j;
  auto ob = s.find_first_of("{[");
  if (ob == std::string::npos) return std::nullopt;
  char close = s[ob] == '{' ? '}' : ']';
  auto cb = s.rfind(close);
  if (cb == std::string::npos || cb < ob) return std::nullopt;
  return attempt(s.substr(ob, cb - ob + 1));
}

json ProviderClient::call_structured(const ProviderRequest& request, const std::function<bool(const json&)>& valid) {
  auto try_once = [&](const ProviderRequest& req) -> std::optional<json> {
    ProviderResponse r = call(req);
    std::optional<json> payload;
    if (r.structured) {
      payload = *r.structured;
    } else if (r.text) {
      payload = parse_json_payload(*r.text);
    }
    if (payload && (!valid || valid(*payload))) return payload;
    return std::nullopt;
  };
  if (auto j = try_once(request)) return *j;
  ProviderRequest retry = request;
  retry.params["reprompt"] = "strict_json";
  if (auto j = try_once(retry)) return *j;
  throw Error(ErrorCode::StructuredParseError, "unparseable structured output for '" + request.template_id + "'");
}

std::vector<double> ProviderClient::embed_text(const std::string& t) {
  ProviderRequest req;
  req.kind = RequestKind::embed_text;
  req.slots["text"] = t;
  auto r = call(req);
  if (!r.vector) throw Error(ErrorCode::BackendUnavailable, "embedding provider returned no vector");
  return *r.vector;
}

std::vector<double> ProviderClient::embed_image(const std::string& image_path) {
  ProviderRequest req;
  req.kind = RequestKind::embed_image;
  req.slots["image"] = SlotValue::image(image_path);
  auto r = call(req);
  if (!r.vector) throw Error(ErrorCode::BackendUnavailable, "embedding provider returned no vector");
  return *r.vector;
}

// ---------------------------------------------------------------------------
// Judge

bool judge_equivalent(std::string_view a, std::string_view b, ProviderClient* judge) {
  if (text::normalize(a) == text::normalize(b)) return true;
  if (judge == nullptr) throw Error(ErrorCode::BackendUnavailable, "no judge configured");
  ProviderRequest req;
  req.kind = RequestKind::judge;
  req.template_id = "judge_equivalent";
  req.slots["a"] = std::string(a);
  req.slots["b"] = std::string(b);
  ProviderResponse r = judge->call(req);
  std::optional<json> payload = r.structured;
  if (!payload && r.text) payload = parse_json_payload(*r.text);
  if (payload) {
    if (payload->is_boolean()) return payload->get<bool>();
    if (payload->is_object() && payload->contains("equivalent") && payload->at("equivalent").is_boolean()) {
      return payload->at("equivalent").get<bool>();
    }
  }
  if (r.text) {
    std::string t = text::normalize(*r.text);
    if (t.rfind("yes", 0) == 0 || t.rfind("true", 0) == 0) return true;
    if (t.rfind("no", 0) == 0 || t.rfind("false", 0) == 0) return false;
  }
  throw Error(ErrorCode::StructuredParseError, "judge verdict not understood");
}

}  // namespace charge::providers
