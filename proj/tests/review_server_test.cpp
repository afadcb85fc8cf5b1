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

#include "charge/review.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <thread>

namespace charge::review {
namespace {

using nlohmann::json;
using testing::TempDir;

class ReviewServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus.emplace(dir.file("corpus"));
    corpus::Document doc;
    doc.doc_id = "doc";
    corpus::TextChunk chunk;
    chunk.chunk_id = "chunk";
    chunk.doc_id = "doc";
    chunk.text = "33% of U.S. adults say they use TikTok.";
    corpus::Chart chart;
    chart.chart_id = "chart";
    chart.doc_id = "doc";
    chart.image_ref = "images/chart.svg";
    chart.values.entries.push_back({"Ages 18-29", std::nullopt, 62, std::string("%")});
    chart.position = 1;
    doc.chunk_ids = {"chunk"};
    doc.chart_ids = {"chart"};
    corpus->add(doc, {chunk}, {chart});
    dir.write("corpus/images/chart.svg", testing::svg_chart("use by age"));

    std::vector<qagen::QAPair> pairs;
    for (int i = 0; i < 2; ++i) {
      qagen::QAPair p;
      p.qa_id = "qa-" + std::to_string(i);
      p.question = "What share of U.S. adults use TikTok?";
      p.answer = "33%";
      p.category = qagen::QACategory::parse(i == 0 ? "single_point/text_only" : "single_point/chart_only");
      p.gt_keypoints = {"kp-" + std::to_string(i)};
      p.gt_sources = {i == 0 ? qagen::GtSource{"doc", "chunk", keypoints::Modality::text}
                             : qagen::GtSource{"doc", "chart", keypoints::Modality::chart}};
      pairs.push_back(p);
    }
    store.emplace(dir.file("review"));
    store->import_candidates(pairs);
    store->assign({"alice", "bashir", "chen"}, 1);

    ServerAuth auth;
    auth.admin_token = "admin";
    for (const char* r : {"alice", "bashir", "chen"}) auth.reviewer_tokens[std::string("t-") + r] = r;
    server.emplace(*store, &*corpus, auth);
    keypoints::Keypoint kp;
    kp.kp_id = "kp-0";
    kp.statement = "33% of U.S. adults say they use TikTok.";
    server->set_keypoints({kp});
    port = server->bind_any();
    ASSERT_GT(port, 0);
    thread = std::thread([this] { server->listen_after_bind(); });
  }

  void TearDown() override {
    server->stop();
    thread.join();
  }

  httplib::Client client(const std::string& token = "") {
    httplib::Client c("127.0.0.1", port);
    if (!token.empty()) c.set_bearer_token_auth(token);
    c.set_connection_timeout(5);
    return c;
  }

  httplib::Result post_review(const std::string& token, json body) {
    return client(token).Post("/api/reviews", body.dump(), "application/json");
  }

  TempDir dir;
  std::optional<corpus::Corpus> corpus;
  std::optional<ReviewStore> store;
  std::optional<ReviewServer> server;
  std::thread thread;
  int port = 0;
};

TEST_F(ReviewServerTest, RequiresAToken) {
  auto res = client().Get("/api/assignments");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);
  EXPECT_EQ(json::parse(res->body).at("error"), "Unauthorized");
  EXPECT_EQ(client("nope").Get("/api/stats")->status, 401);
}

TEST_F(ReviewServerTest, AssignmentCardsCarrySources) {
  auto res = client("t-alice").Get("/api/assignments");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  json body = json::parse(res->body);
  EXPECT_EQ(body.at("reviewer"), "alice");
  ASSERT_EQ(body.at("assignments").size(), 2u);
  const json& text_card = body.at("assignments").at(0);
  EXPECT_EQ(text_card.at("qa_id"), "qa-0");
  EXPECT_EQ(text_card.at("keypoints").at(0).at("statement"), "33% of U.S. adults say they use TikTok.");
  EXPECT_EQ(text_card.at("sources").at(0).at("text"), "33% of U.S. adults say they use TikTok.");
  const json& chart_card = body.at("assignments").at(1);
  EXPECT_EQ(chart_card.at("sources").at(0).at("image_url"), "/images/chart.svg");
  EXPECT_TRUE(chart_card.at("keypoints").at(0).at("statement").is_null());

  auto img = client().Get("/images/chart.svg");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_NE(img->body.find("use by age"), std::string::npos);
}

TEST_F(ReviewServerTest, ReviewersSeeOnlyTheirOwnQueue) {
  EXPECT_EQ(client("t-alice").Get("/api/assignments?reviewer=bashir")->status, 403);
  auto res = client("admin").Get("/api/assignments?reviewer=bashir");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("reviewer"), "bashir");
  EXPECT_EQ(client("admin").Get("/api/assignments")->status, 400);
}

TEST_F(ReviewServerTest, SubmitStatusCodes) {
  auto ok = post_review("t-alice", {{"qa_id", "qa-0"}, {"verdict", "accept"}, {"idempotency_key", "k1"}});
  ASSERT_TRUE(ok);
  ASSERT_EQ(ok->status, 200);
  json ack = json::parse(ok->body);
  EXPECT_EQ(ack.at("reviewer_id"), "alice");
  EXPECT_FALSE(ack.at("replayed").get<bool>());

  auto replay = post_review("t-alice", {{"qa_id", "qa-0"}, {"verdict", "accept"}, {"idempotency_key", "k1"}});
  ASSERT_EQ(replay->status, 200);
  EXPECT_TRUE(json::parse(replay->body).at("replayed").get<bool>());
  EXPECT_EQ(json::parse(replay->body).at("sequence"), ack.at("sequence"));

  auto dup = post_review("t-alice", {{"qa_id", "qa-0"}, {"verdict", "reject"}, {"reason", "other"}});
  EXPECT_EQ(dup->status, 409);
  EXPECT_EQ(json::parse(dup->body).at("error"), "AlreadySubmitted");

  EXPECT_EQ(post_review("t-alice", {{"qa_id", "qa-1"}, {"verdict", "reject"}})->status, 422);
  EXPECT_EQ(post_review("t-alice", {{"qa_id", "qa-9"}, {"verdict", "accept"}})->status, 404);
  EXPECT_EQ(post_review("t-alice", {{"qa_id", "qa-1"}, {"verdict", "accept"}, {"reviewer_id", "chen"}})->status, 403);
  EXPECT_EQ(client("t-alice").Post("/api/reviews", "{not json", "application/json")->status, 400);

  auto listing = json::parse(client("t-alice").Get("/api/assignments")->body);
  EXPECT_EQ(listing.at("assignments").size(), 1u);
  EXPECT_EQ(listing.at("progress").at("submitted"), 1);
}

TEST_F(ReviewServerTest, CandidateLookup) {
  auto res = client("t-chen").Get("/api/candidates/qa-1");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("category"), "single_point/chart_only");
  EXPECT_EQ(client("t-chen").Get("/api/candidates/qa-7")->status, 404);
}

TEST_F(ReviewServerTest, FinalizeFlow) {
  EXPECT_EQ(client("t-alice").Post("/api/finalize", "", "application/json")->status, 403);
  auto early = client("admin").Post("/api/finalize", "", "application/json");
  EXPECT_EQ(early->status, 409);
  EXPECT_EQ(json::parse(early->body).at("error"), "IncompleteReviews");

  for (const char* r : {"alice", "bashir", "chen"}) {
    const std::string token = std::string("t-") + r;
    ASSERT_EQ(post_review(token, {{"qa_id", "qa-0"}, {"verdict", "accept"}})->status, 200);
    ASSERT_EQ(post_review(token, {{"qa_id", "qa-1"}, {"verdict", "reject"}, {"reason", "ocr_error"}})->status, 200);
  }
  auto done = client("admin").Post("/api/finalize", "{}", "application/json");
  ASSERT_EQ(done->status, 200);
  json body = json::parse(done->body);
  EXPECT_EQ(body.at("counts").at("accepted"), 1);
  EXPECT_EQ(body.at("counts").at("rejected"), 1);
  EXPECT_EQ(body.at("pairs").at(1).at("rejection_reason"), "ocr_error");

  auto stats = json::parse(client("t-alice").Get("/api/stats")->body);
  EXPECT_EQ(stats.at("submitted"), 6);
  EXPECT_EQ(stats.at("rejection_reasons").at("ocr_error"), 3);
  EXPECT_TRUE(stats.at("agreement").at("degenerate").is_boolean());
  EXPECT_NEAR(stats.at("agreement").at("kappa").get<double>(), 1.0, 1e-12);
}

}  // namespace
}  // namespace charge::review
