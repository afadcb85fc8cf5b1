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
#include "charge/review.hpp"
#include "charge/text.hpp"

#include <filesystem>
#include <mutex>

namespace charge::review {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::NoSuchAssignment:
    case ErrorCode::UnknownRef: return 404;
    case ErrorCode::AlreadySubmitted:
    case ErrorCode::IncompleteReviews: return 409;
    case ErrorCode::MissingRejectReason:
    case ErrorCode::PreconditionFailed: return 422;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

}  // namespace

struct ReviewServer::Impl {
  ReviewStore& store;
  const corpus::Corpus* corpus;
  ServerAuth auth;
  httplib::Server server;
  std::map<std::string, std::string> statements;
  std::mutex statements_mu;

  Impl(ReviewStore& s, const corpus::Corpus* c, ServerAuth a) : store(s), corpus(c), auth(std::move(a)) {}

  struct Caller {
    std::string reviewer_id;
    bool admin = false;
  };

  std::optional<Caller> authenticate(const httplib::Request& req, httplib::Response& res) {
    const std::string header = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (header.rfind(prefix, 0) == 0) {
      const std::string token = header.substr(prefix.size());
      if (!auth.admin_token.empty() && token == auth.admin_token) return Caller{"", true};
      auto it = auth.reviewer_tokens.find(token);
      if (it != auth.reviewer_tokens.end()) return Caller{it->second, false};
    }
    send_error(res, 401, "Unauthorized", "missing or unknown bearer token");
    return std::nullopt;
  }

  json source_panel(const qagen::GtSource& src) const {
    json panel = {{"ref_id", src.source_id}, {"doc_id", src.doc_id}, {"modality", keypoints::to_string(src.modality)}};
    if (!corpus) return panel;
    if (src.modality == keypoints::Modality::text) {
      if (const auto* chunk = corpus->find_chunk(src.source_id)) panel["text"] = chunk->text;
    } else if (const auto* chart = corpus->find_chart(src.source_id)) {
      panel["caption"] = chart->caption ? json(*chart->caption) : json(nullptr);
      panel["chart_values"] = chart->values;
      panel["image_url"] = "/images/" + fs::path(chart->image_ref).filename().string();
    }
    return panel;
  }

  json card(const qagen::QAPair& pair) {
    json kps = json::array();
    {
      std::lock_guard lock(statements_mu);
      for (const auto& id : pair.gt_keypoints) {
        auto it = statements.find(id);
        kps.push_back({{"kp_id", id}, {"statement", it == statements.end() ? json(nullptr) : json(it->second)}});
      }
    }
    json sources = json::array();
    for (const auto& src : pair.gt_sources) sources.push_back(source_panel(src));
    return {{"qa_id", pair.qa_id},
            {"category", pair.category.label()},
            {"pair", pair},
            {"keypoints", kps},
            {"sources", sources}};
  }

  void routes(const std::optional<std::string>& static_dir) {
    server.Get("/api/assignments", [this](const httplib::Request& req, httplib::Response& res) {
      auto caller = authenticate(req, res);
      if (!caller) return;
      std::string reviewer = req.has_param("reviewer") ? req.get_param_value("reviewer") : caller->reviewer_id;
      if (reviewer.empty()) return send_error(res, 400, "BadRequest", "reviewer parameter required");
      if (!caller->admin && reviewer != caller->reviewer_id) {
        return send_error(res, 403, "Forbidden", "token does not belong to " + reviewer);
      }
      const bool all = req.has_param("all") && req.get_param_value("all") != "0";
      auto mine = store.assignments_for(reviewer, false);
      std::size_t submitted = 0;
      json items = json::array();
      for (const auto& a : mine) {
        if (a.state == AssignmentState::submitted) ++submitted;
        if (!all && a.state != AssignmentState::open) continue;
        auto pair = store.candidate(a.qa_id);
        if (!pair) continue;
        json c = card(*pair);
        c["state"] = to_string(a.state);
        items.push_back(std::move(c));
      }
      send_json(res, 200,
                {{"reviewer", reviewer},
                 {"assignments", items},
                 {"progress", {{"assigned", mine.size()}, {"submitted", submitted}}}});
    });

    server.Get(R"(/api/candidates/([A-Za-z0-9_\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authenticate(req, res)) return;
      auto pair = store.candidate(req.matches[1]);
      if (!pair) return send_error(res, 404, "UnknownRef", "no candidate " + std::string(req.matches[1]));
      send_json(res, 200, card(*pair));
    });

    server.Post("/api/reviews", [this](const httplib::Request& req, httplib::Response& res) {
      auto caller = authenticate(req, res);
      if (!caller) return;
      ReviewDecision d;
      try {
        d = json::parse(req.body).get<ReviewDecision>();
      } catch (const std::exception& e) {
        return send_error(res, 400, "BadRequest", e.what());
      }
      if (!caller->admin) {
        if (!d.reviewer_id.empty() && d.reviewer_id != caller->reviewer_id) {
          return send_error(res, 403, "Forbidden", "cannot submit for another reviewer");
        }
        d.reviewer_id = caller->reviewer_id;
      } else if (d.reviewer_id.empty()) {
        return send_error(res, 400, "BadRequest", "reviewer_id required for admin submissions");
      }
      d.timestamp.clear();
      try {
        Acknowledgement ack = store.submit(d);
        send_json(res, 200,
                  {{"qa_id", ack.qa_id},
                   {"reviewer_id", ack.reviewer_id},
                   {"sequence", ack.sequence},
                   {"replayed", ack.replayed}});
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), to_string(e.code()), e.what());
      }
    });

    server.Get("/api/stats", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authenticate(req, res)) return;
      send_json(res, 200, store.stats());
    });

    server.Post("/api/finalize", [this](const httplib::Request& req, httplib::Response& res) {
      auto caller = authenticate(req, res);
      if (!caller) return;
      if (!caller->admin) return send_error(res, 403, "Forbidden", "finalize needs the admin token");
      bool partial = req.has_param("partial") && req.get_param_value("partial") != "0";
      if (!req.body.empty()) {
        try {
          partial = json::parse(req.body).value("partial", partial);
        } catch (const std::exception& e) {
          return send_error(res, 400, "BadRequest", e.what());
        }
      }
      try {
        auto pairs = store.finalize(partial);
        json counts = {{"pending", 0}, {"accepted", 0}, {"rejected", 0}};
        for (const auto& p : pairs) {
          const std::string key(qagen::to_string(p.review_state));
          counts[key] = counts[key].get<std::size_t>() + 1;
        }
        send_json(res, 200, {{"counts", counts}, {"pairs", pairs}});
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), to_string(e.code()), e.what());
      }
    });

    if (corpus && !corpus->root().empty()) {
      server.set_mount_point("/images", (fs::path(corpus->root()) / "images").string());
    }
    if (static_dir) server.set_mount_point("/", *static_dir);

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), to_string(e.code()), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
      }
    });
  }
};

ReviewServer::ReviewServer(ReviewStore& store, const corpus::Corpus* corpus, ServerAuth auth,
                           std::optional<std::string> static_dir)
    : impl_(std::make_unique<Impl>(store, corpus, std::move(auth))) {
  impl_->routes(static_dir);
}

ReviewServer::~ReviewServer() { stop(); }

void ReviewServer::set_keypoints(const std::vector<keypoints::Keypoint>& kps) {
  std::lock_guard lock(impl_->statements_mu);
  for (const auto& kp : kps) impl_->statements[kp.kp_id] = kp.statement;
}

int ReviewServer::bind_any(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool ReviewServer::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }

void ReviewServer::listen_after_bind() { impl_->server.listen_after_bind(); }

void ReviewServer::stop() {
  if (impl_) impl_->server.stop();
}

ServerAuth load_auth(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingStageInput, path);
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path + ": " + e.what());
  }
  ServerAuth auth;
  auth.admin_token = j.value("admin_token", "");
  for (const auto& r : j.value("reviewers", json::array())) {
    auth.reviewer_tokens[r.at("token").get<std::string>()] = r.at("id").get<std::string>();
  }
  if (auth.reviewer_tokens.empty() && auth.admin_token.empty()) {
    throw Error(ErrorCode::ConfigInvalid, path + " defines no usable tokens");
  }
  return auth;
}

}  // namespace charge::review
