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

#include <httplib.h>

#include "charge/error.hpp"
#include "charge/providers.hpp"
#include "charge/text.hpp"

#include <openssl/evp.h>

namespace charge::providers {

using nlohmann::json;

namespace {

std::string base64(std::string_view data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(data.data()), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string mime_for(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "png") return "image/png";
  if (ext == "jpg" || ext == "jpeg") return "image/jpeg";
  if (ext == "svg") return "image/svg+xml";
  if (ext == "webp") return "image/webp";
  return "application/octet-stream";
}

std::string data_url(const std::string& path) {
  std::string bytes;
  try {
    bytes = text::read_file(path);
  } catch (const Error&) {
    throw Error(ErrorCode::UnreadableImage, path);
  }
  return "data:" + mime_for(path) + ";base64," + base64(bytes);
}

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  Endpoint e;
  e.origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  e.prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw Error(ErrorCode::ConfigInvalid, "http backend needs an endpoint");
}

std::string HttpBackend::id() const { return "http:" + config_.model; }

ProviderResponse HttpBackend::complete(const ProviderRequest& request, const std::string& prompt) {
  Endpoint ep = split_endpoint(config_.endpoint);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(config_.timeout_seconds);
  client.set_read_timeout(config_.timeout_seconds);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string path;
  json body;
  const bool embedding = request.kind == RequestKind::embed_text || request.kind == RequestKind::embed_image;
  if (embedding) {
    path = ep.prefix + "/v1/embeddings";
    std::string input = request.kind == RequestKind::embed_text ? request.slots.at("text").value
                                                                : data_url(request.slots.at("image").value);
    body = {{"model", config_.model}, {"input", input}};
  } else {
    path = ep.prefix + "/v1/chat/completions";
    std::string instruction = prompt;
    if (request.params.count("reprompt")) {
      instruction += "\n\nRespond with strict JSON only, matching the schema above. No prose, no code fences.";
    }
    json content = json::array({{{"type", "text"}, {"text", instruction}}});
    for (const auto& image : request.images()) {
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(image)}}}});
    }
    body = {{"model", config_.model}, {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
    if (auto it = request.params.find("temperature"); it != request.params.end()) {
      body["temperature"] = std::stod(it->second);
    } else {
      body["temperature"] = 0.0;
    }
    if (auto it = request.params.find("max_tokens"); it != request.params.end()) {
      body["max_tokens"] = std::stoi(it->second);
    }
  }

  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::BackendUnavailable, config_.endpoint + ": " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status == 503) {
    throw Error(ErrorCode::RateLimited, config_.endpoint + " returned " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::BackendUnavailable, config_.endpoint + " returned " + std::to_string(res->status));
  }
  auto reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw Error(ErrorCode::BackendUnavailable, "non-JSON reply from " + config_.endpoint);

  ProviderResponse out;
  out.provider_id = id();
  try {
    if (embedding) {
      out.vector = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } else {
      out.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
      if (request.kind == RequestKind::ocr) {
        if (auto parsed = parse_json_payload(*out.text)) {
          out.structured = *parsed;
          out.text.reset();
        }
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("unexpected reply shape: ") + e.what());
  }
  return out;
}

}  // namespace charge::providers
