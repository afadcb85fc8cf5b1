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

#include "charge/error.hpp"
#include "charge/evaluation.hpp"
#include "charge/jsonl.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

namespace charge::evaluation {
namespace {

using keypoints::Keypoint;
using keypoints::Modality;
using nlohmann::json;
using testing::rule;
using testing::Scripted;

// ---------------------------------------------------------------------------
// Matching

/// Largest matching by trying every assignment of extracted items to distinct
/// ground-truth items (or to nothing).
std::size_t brute_force_max(const std::vector<std::vector<bool>>& eq, std::size_t i, std::vector<bool>& used) {
  if (i == eq.size()) return 0;
  std::size_t best = brute_force_max(eq, i + 1, used);
  for (std::size_t j = 0; j < used.size(); ++j) {
    if (used[j] || !eq[i][j]) continue;
    used[j] = true;
    best = std::max(best, 1 + brute_force_max(eq, i + 1, used));
    used[j] = false;
  }
  return best;
}

TEST(MatchKeypoints, AgreesWithExhaustiveSearch) {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = gen() % 6;
    const std::size_t m = gen() % 6;
    std::vector<std::vector<bool>> eq(n, std::vector<bool>(m));
    for (auto& row : eq) {
      for (std::size_t j = 0; j < m; ++j) row[j] = gen() % 3 == 0;
    }
    std::map<std::pair<std::size_t, std::size_t>, int> calls;
    MatchResult r = match_keypoints(n, m, [&](std::size_t i, std::size_t j) {
      ++calls[{i, j}];
      return static_cast<bool>(eq[i][j]);
    });
    std::vector<bool> used(m, false);
    EXPECT_EQ(r.matched_gt.size(), brute_force_max(eq, 0, used)) << trial;
    std::set<std::size_t> left;
    std::set<std::size_t> right;
    for (const auto& [i, j] : r.pairs) {
      EXPECT_TRUE(eq[i][j]);
      EXPECT_TRUE(left.insert(i).second);
      EXPECT_TRUE(right.insert(j).second);
    }
    for (const auto& [pair, count] : calls) EXPECT_EQ(count, 1);
  }
}

TEST(MatchKeypoints, AugmentingPathRepairsGreedyChoice) {
  // Extracted 0 fits both; extracted 1 only fits gt 0.
  std::vector<std::vector<bool>> eq = {{true, true}, {true, false}};
  MatchResult r = match_keypoints(2, 2, [&](std::size_t i, std::size_t j) { return static_cast<bool>(eq[i][j]); });
  EXPECT_EQ(r.matched_gt.size(), 2u);
  EXPECT_TRUE(r.perfect);
}

TEST(Metrics, CoverageAndCorrectness) {
  auto all = [](std::size_t, std::size_t) { return true; };
  auto diagonal = [](std::size_t i, std::size_t j) { return i == j; };
  auto none = [](std::size_t, std::size_t) { return false; };

  MatchResult three_of_four = match_keypoints(3, 4, diagonal);
  EXPECT_DOUBLE_EQ(coverage(three_of_four), 0.75);
  EXPECT_EQ(correctness(three_of_four), 0);

  EXPECT_DOUBLE_EQ(coverage(match_keypoints(2, 4, none)), 0.0);
  MatchResult exact = match_keypoints(4, 4, diagonal);
  EXPECT_DOUBLE_EQ(coverage(exact), 1.0);
  EXPECT_EQ(correctness(exact), 1);

  // An extra unsupported claim costs correctness but not coverage.
  MatchResult extra = match_keypoints(5, 4, diagonal);
  EXPECT_DOUBLE_EQ(coverage(extra), 1.0);
  EXPECT_EQ(correctness(extra), 0);
  // Two claims that each match the single fact: one is left over.
  EXPECT_EQ(correctness(match_keypoints(2, 1, all)), 0);

  EXPECT_EQ(correctness(match_keypoints(0, 1, all)), 0);
  EXPECT_THROW(coverage(match_keypoints(1, 0, all)), Error);
}

TEST(MatchKeypoints, StringOverloadUsesEqualityThenJudge) {
  Scripted judge(std::vector<json>{rule("judge_equivalent", {{"a", "one third"}, {"b", "33%"}}, {{"structured", {{"equivalent", true}}}}),
                                   rule("judge_equivalent", nullptr, {{"structured", {{"equivalent", false}}}})});
  MatchResult r = match_keypoints({"About one third of adults use TikTok.", "33%  of adults use TikTok"},
                                  {"33% of adults use TikTok", "Use rose from 21%."}, judge.client.get());
  EXPECT_EQ(r.matched_gt.size(), 1u);
  EXPECT_EQ(correctness(r), 0);
  EXPECT_DOUBLE_EQ(coverage(r), 0.5);
}

// ---------------------------------------------------------------------------
// Response keypoints

TEST(ExtractResponseKeypoints, EmptyResponseSkipsTheExtractor) {
  Scripted s;
  EXPECT_TRUE(extract_response_keypoints("   ", "q", *s).empty());
  EXPECT_EQ(s.backend->call_count(), 0u);
}

TEST(ExtractResponseKeypoints, DuplicatesCollapse) {
  Scripted s(std::vector<json>{rule("extract_response_keypoints", nullptr,
                                    {{"structured", {{"keypoints", {"A is 1.", "a  is 1.", "", "B is 2."}}}}})});
  EXPECT_EQ(extract_response_keypoints("A is 1. B is 2.", "q", *s), (std::vector<std::string>{"A is 1.", "B is 2."}));
}

// ---------------------------------------------------------------------------
// Conditions and summaries

TEST(EvalCondition, LabelsAndValidation) {
  EXPECT_EQ(EvalCondition::no_rag().label(), "no_rag");
  EXPECT_EQ(EvalCondition::gt().label(), "gt_retrieval");
  EXPECT_EQ(EvalCondition::rag(5, retrieval::Architecture::separate_fused).label(), "rag_k=5");
  EvalCondition broken;
  broken.mode = Mode::rag_k;
  EXPECT_THROW(broken.validate(), Error);
}

EvalRecord record(const std::string& cat, const std::string& cond, int corr, double cov,
                  std::optional<double> recall = std::nullopt) {
  EvalRecord r;
  r.category = qagen::QACategory::parse(cat);
  r.condition = cond;
  r.correctness = corr;
  r.coverage = cov;
  r.recall = recall;
  return r;
}

TEST(Summarize, PercentagesRoundedToTwoDecimals) {
  std::vector<EvalRecord> recs = {record("single_point/text_only", "rag_k=5", 1, 1.0, 1.0),
                                  record("single_point/text_only", "rag_k=5", 0, 0.5, 0.5),
                                  record("single_point/text_only", "rag_k=5", 0, 0.0, 0.0),
                                  record("inter_document/chart_only", "no_rag", 1, 1.0)};
  Report rep = summarize(recs, {"no_rag", "rag_k=5"});
  const Cell& c = rep.cells.at("rag_k=5").at("single_point/text_only");
  EXPECT_EQ(c.n, 3u);
  EXPECT_DOUBLE_EQ(c.correctness, 33.33);
  EXPECT_DOUBLE_EQ(c.coverage, 50.0);
  ASSERT_TRUE(c.recall.has_value());
  EXPECT_DOUBLE_EQ(*c.recall, 50.0);
  EXPECT_FALSE(rep.cells.at("no_rag").at("overall").recall.has_value());
  EXPECT_EQ(rep.condition_order, (std::vector<std::string>{"no_rag", "rag_k=5"}));
  json j = rep.to_json();
  EXPECT_TRUE(j.dump().find("33.33") != std::string::npos);
  EXPECT_NE(rep.to_table().find("33.33"), std::string::npos);
}

/// Two single-point questions over a one-document corpus.
class SuiteTest : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus::Document d;
    d.doc_id = "doc";
    corpus::TextChunk c;
    c.chunk_id = "chunk";
    c.doc_id = "doc";
    c.text = "Alpha is 1. Beta is 2. Gamma is 3. Delta is 4.";
    c.sentences = {"Alpha is 1.", "Beta is 2.", "Gamma is 3.", "Delta is 4."};
    d.chunk_ids = {"chunk"};
    corpus.add(d, {c}, {});
    for (const auto& s : c.sentences) {
      Keypoint k;
      k.kp_id = "kp-" + s.substr(0, s.find(' '));
      k.statement = s;
      k.source = {"doc", "chunk"};
      kps.push_back(k);
    }
    dataset.push_back(pair("qa-1", "Which values do Alpha and Beta take?", {"kp-Alpha", "kp-Beta"}));
    dataset.push_back(pair("qa-2", "Which values do Gamma and Delta take?", {"kp-Gamma", "kp-Delta"}));

    responder.add(rule("respond_no_context", {{"question", "alpha and beta"}}, "Alpha is 1 and Beta is 2."));
    responder.add(rule("respond_no_context", {{"question", "gamma and delta"}}, "Gamma is 3."));
    responder.add(rule("respond_with_context", {{"context", "[1] Text: Alpha is 1."}}, "From context."));
    extractor.add(rule("extract_response_keypoints", {{"response", "alpha is 1 and beta"}},
                       {{"structured", {{"keypoints", {"Alpha is 1.", "Beta is 2."}}}}}));
    extractor.add(rule("extract_response_keypoints", {{"response", "gamma is 3"}},
                       {{"structured", {{"keypoints", {"Gamma is 3."}}}}}));
    extractor.add(rule("extract_response_keypoints", {{"response", "from context"}},
                       {{"structured", {{"keypoints", {"Alpha is 1.", "Beta is 2.", "Gamma is 3.", "Delta is 4."}}}}}));
    judge.add(rule("judge_equivalent", nullptr, {{"structured", {{"equivalent", false}}}}));
  }

  qagen::QAPair pair(const std::string& id, const std::string& q, std::vector<std::string> gt) {
    qagen::QAPair p;
    p.qa_id = id;
    p.question = q;
    p.answer = "a";
    p.category = qagen::QACategory::parse("intra_document/text_only");
    p.hops = 2;
    p.gt_keypoints = std::move(gt);
    p.gt_sources = {{"doc", "chunk", Modality::text}};
    return p;
  }

  SuiteProviders providers() { return {responder.client.get(), extractor.client.get(), judge.client.get()}; }

  corpus::Corpus corpus;
  std::vector<Keypoint> kps;
  std::vector<qagen::QAPair> dataset;
  Scripted responder;
  Scripted extractor;
  Scripted judge;
};

TEST_F(SuiteTest, MeansOverItems) {
  SuiteResult r = run_suite(dataset, kps, {EvalCondition::no_rag()}, corpus, providers(), {});
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].correctness, 1);
  EXPECT_DOUBLE_EQ(r.records[1].coverage, 0.5);
  const Cell& overall = r.report.cells.at("no_rag").at("overall");
  EXPECT_EQ(overall.n, 2u);
  EXPECT_DOUBLE_EQ(overall.correctness, 50.00);
  EXPECT_DOUBLE_EQ(overall.coverage, 75.00);
  EXPECT_EQ(r.records[1].matched_gt, (std::vector<std::string>{"kp-Gamma"}));
}

TEST_F(SuiteTest, GroundTruthContextReachesTheResponder) {
  SuiteResult r = run_suite(dataset, kps, {EvalCondition::gt()}, corpus, providers(), {});
  // Both questions get the full chunk; four claims against two facts each.
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.response, "From context.");
    EXPECT_DOUBLE_EQ(rec.coverage, 1.0);
    EXPECT_EQ(rec.correctness, 0);
  }
}

TEST_F(SuiteTest, ProviderFailureIsScoredZeroAndCounted) {
  dataset.push_back(pair("qa-3", "Which values are unknown here?", {"kp-Alpha"}));
  responder.add(rule("respond_no_context", {{"question", "unknown here"}}, {{"raise", "unavailable"}}));
  SuiteResult r = run_suite(dataset, kps, {EvalCondition::no_rag()}, corpus, providers(), {});
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_TRUE(r.records[2].failed);
  EXPECT_EQ(r.report.failures.at("no_rag"), 1u);
  const Cell& overall = r.report.cells.at("no_rag").at("overall");
  EXPECT_EQ(overall.n, 3u);
  EXPECT_DOUBLE_EQ(overall.correctness, 33.33);
  EXPECT_DOUBLE_EQ(overall.coverage, 50.00);
}

TEST_F(SuiteTest, UnknownGroundTruthKeypointIsFatal) {
  dataset[0].gt_keypoints[0] = "kp-missing";
  EXPECT_THROW(run_suite(dataset, kps, {EvalCondition::no_rag()}, corpus, providers(), {}), Error);
}

TEST_F(SuiteTest, WriteSuiteFiles) {
  testing::TempDir dir;
  SuiteResult r = run_suite(dataset, kps, {EvalCondition::no_rag()}, corpus, providers(), {});
  write_suite(r, dir.file("eval"));
  for (const char* f : {"records.jsonl", "report.json", "report.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.file(std::string("eval/") + f))) << f;
  }
  auto back = jsonl::read_as<EvalRecord>(dir.file("eval/records.jsonl"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(json(back[1]), json(r.records[1]));
}

// ---------------------------------------------------------------------------
// Modality preference

TEST(ModalityPreference, ContainmentDecides) {
  BiasProbe probe{"qa", "one third", "35.2%"};
  EXPECT_EQ(modality_preference("About One  Third of adults use it.", probe, nullptr), Preference::text_phrasing);
  EXPECT_EQ(modality_preference("The chart shows 35.2% of adults.", probe, nullptr), Preference::chart_phrasing);
  EXPECT_EQ(modality_preference("One third (35.2%) of adults.", probe, nullptr), Preference::both_acknowledged);
  EXPECT_EQ(modality_preference("Many adults.", probe, nullptr), Preference::neither);
}

TEST(ModalityPreference, JudgeFallback) {
  Scripted judge(std::vector<json>{rule("modality_preference", nullptr, "{\"preference\": \"chart_phrasing\"}")});
  BiasProbe probe{"qa", "one third", "35.2%"};
  EXPECT_EQ(modality_preference("Roughly 35 percent.", probe, judge.client.get()), Preference::chart_phrasing);
  EXPECT_THROW(modality_preference("x", BiasProbe{"qa", "same", "same"}, nullptr), Error);
}

}  // namespace
}  // namespace charge::evaluation
