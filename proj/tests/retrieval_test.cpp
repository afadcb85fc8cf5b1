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
#include "charge/retrieval.hpp"
#include "charge/text.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace charge::retrieval {
namespace {

using nlohmann::json;
using testing::rule;
using testing::Scripted;
using testing::TempDir;

// ---------------------------------------------------------------------------
// BM25

TEST(Bm25, HandComputedThreeDocuments) {
  SparseIndex idx;
  idx.add("d1", Modality::text, "apple banana apple");
  idx.add("d2", Modality::text, "banana cherry");
  idx.add("d3", Modality::text, "cherry date fig egg");
  // N = 3, avgdl = 3, k1 = 1.2, b = 0.75.
  EXPECT_DOUBLE_EQ(idx.avgdl(), 3.0);
  const double idf_apple = std::log(1.0 + (3 - 1 + 0.5) / (1 + 0.5));
  const double idf_banana = std::log(1.0 + (3 - 2 + 0.5) / (2 + 0.5));
  EXPECT_NEAR(idx.idf("apple"), idf_apple, 1e-12);
  EXPECT_NEAR(idx.idf("banana"), idf_banana, 1e-12);

  const std::vector<std::string> q = {"apple banana"};
  // d1: apple tf 2, banana tf 1, |d| = avgdl.
  const double d1 = idf_apple * 2 * 2.2 / (2 + 1.2) + idf_banana * 1 * 2.2 / (1 + 1.2);
  // d2: banana tf 1, |d| = 2.
  const double d2 = idf_banana * 1 * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 2.0 / 3.0));
  EXPECT_NEAR(bm25_score(idx, q, "d1"), d1, 1e-9);
  EXPECT_NEAR(bm25_score(idx, q, "d2"), d2, 1e-9);
  EXPECT_NEAR(bm25_score(idx, q, "d3"), 0.0, 1e-12);

  auto hits = idx.search("apple banana", 10);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].ref_id, "d1");
  EXPECT_NEAR(hits[0].score, d1, 1e-9);
  EXPECT_NEAR(hits[1].score, d2, 1e-9);
  EXPECT_THROW(bm25_score(idx, q, "nope"), Error);
}

TEST(Bm25, IdfNeverNegative) {
  SparseIndex idx;
  for (int i = 0; i < 5; ++i) idx.add("d" + std::to_string(i), Modality::text, "common words everywhere");
  EXPECT_GT(idx.idf("common"), 0.0);
  EXPECT_NEAR(idx.idf("common"), std::log(1.0 + 0.5 / 5.5), 1e-12);
}

TEST(Bm25, SaveLoadKeepsScores) {
  TempDir dir;
  SparseIndex idx(1.5, 0.5);
  idx.add("d1", Modality::text, "apple banana apple");
  idx.add("c1", Modality::chart, "banana chart caption");
  idx.save(dir.path());
  SparseIndex back = SparseIndex::load(dir.path());
  EXPECT_EQ(back.k1(), 1.5);
  for (const auto& id : {"d1", "c1"}) EXPECT_DOUBLE_EQ(back.score({"banana apple"}, id), idx.score({"banana apple"}, id));
}

// ---------------------------------------------------------------------------
// Fusion and slots

ScoredRef ref(const std::string& id) { return {id, 0.0, Modality::text, ""}; }

TEST(ReciprocalRankFusion, HandComputed) {
  auto fused = reciprocal_rank_fusion({{ref("a"), ref("b"), ref("c")}, {ref("c"), ref("a")}}, 10);
  ASSERT_EQ(fused.size(), 3u);
  EXPECT_EQ(fused[0].ref_id, "a");
  EXPECT_NEAR(fused[0].score, 1.0 / 61 + 1.0 / 62, 1e-15);
  EXPECT_EQ(fused[1].ref_id, "c");
  EXPECT_NEAR(fused[1].score, 1.0 / 63 + 1.0 / 61, 1e-15);
  EXPECT_EQ(fused[2].ref_id, "b");
  // Equal fused scores order by id.
  auto tie = reciprocal_rank_fusion({{ref("z")}, {ref("y")}}, 1);
  ASSERT_EQ(tie.size(), 1u);
  EXPECT_EQ(tie[0].ref_id, "y");
}

TEST(AllocateSlots, Splits) {
  auto s = allocate_slots(5, FusionPolicy::three_to_two(), 100, 100);
  EXPECT_EQ(s.text, 3u);
  EXPECT_EQ(s.chart, 2u);
  s = allocate_slots(5, FusionPolicy::balanced(), 100, 100);
  EXPECT_EQ(s.text, 3u);
  EXPECT_EQ(s.chart, 2u);
  s = allocate_slots(10, FusionPolicy::balanced(), 100, 100);
  EXPECT_EQ(s.text, 5u);
  EXPECT_EQ(s.chart, 5u);
  s = allocate_slots(10, FusionPolicy::three_to_two(), 100, 100);
  EXPECT_EQ(s.text, 6u);
  s = allocate_slots(8, FusionPolicy::weighted(1, 3), 100, 100);
  EXPECT_EQ(s.text, 2u);
  EXPECT_EQ(s.chart, 6u);
}

TEST(AllocateSlots, BackfillFromTheOtherStream) {
  auto s = allocate_slots(5, FusionPolicy::three_to_two(), 1, 100);
  EXPECT_EQ(s.text, 1u);
  EXPECT_EQ(s.chart, 4u);
  s = allocate_slots(5, FusionPolicy::three_to_two(), 100, 0);
  EXPECT_EQ(s.text, 5u);
  EXPECT_EQ(s.chart, 0u);
  s = allocate_slots(10, FusionPolicy::three_to_two(), 2, 3);
  EXPECT_EQ(s.text, 2u);
  EXPECT_EQ(s.chart, 3u);
}

TEST(FusionPolicy, ParseNames) {
  EXPECT_EQ(FusionPolicy::parse("three_to_two").kind, FusionPolicy::Kind::three_to_two);
  EXPECT_EQ(FusionPolicy::parse("balanced").kind, FusionPolicy::Kind::balanced);
  auto w = FusionPolicy::parse("weighted:1:4");
  EXPECT_EQ(w.kind, FusionPolicy::Kind::weighted);
  EXPECT_EQ(w.text_slots(10), 2u);
  EXPECT_THROW(FusionPolicy::parse("nonsense"), Error);
}

// ---------------------------------------------------------------------------
// Dense store

TEST(DenseStore, DimensionMismatchAndTies) {
  DenseStore store(StoreModality::text, "e");
  store.add("b", Modality::text, {0, 2});
  store.add("a", Modality::text, {0, 1});
  store.add("c", Modality::text, {1, 0});
  auto hits = store.search({0, 1}, 2);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].ref_id, "a");
  EXPECT_EQ(hits[1].ref_id, "b");
  EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
  try {
    store.add("d", Modality::text, {1, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

/// A small ingested corpus: four documents, each two paragraphs and a chart.
class CorpusFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    ocr.add({{"kind", "ocr"}, {"template", "chart_ocr"}, {"response", {{"structured", {{"entries", json::array()}}}}}});
    const std::vector<std::string> topics = {"tiktok adoption", "news habits", "podcast listening", "video gaming"};
    corpus.emplace(dir.file("corpus"));
    for (std::size_t d = 0; d < topics.size(); ++d) {
      corpus::DocumentBundle b;
      b.title = topics[d];
      const std::string t = topics[d];
      b.blocks.push_back({"Survey data on " + t + " among adults. Younger adults report more " + t + " overall.",
                          std::nullopt, std::nullopt});
      b.blocks.push_back({std::nullopt, dir.write("in/c" + std::to_string(d) + ".svg", testing::svg_chart(t + " chart")),
                          "Chart of " + t});
      b.blocks.push_back({"Shares of " + t + " differ by income. Researchers note " + t + " trends in 2023.",
                          std::nullopt, std::nullopt});
      corpus::ingest_document(*corpus, b, *ocr);
    }
  }

  std::vector<std::pair<double, std::string>> exhaustive(const std::vector<double>& q,
                                                         const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
    std::vector<std::pair<double, std::string>> all;
    for (const auto& [id, v] : rows) {
      double dot = 0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += q[i] * v[i];
      all.emplace_back(-dot, id);
    }
    std::sort(all.begin(), all.end());
    return all;
  }

  TempDir dir;
  Scripted ocr;
  std::optional<corpus::Corpus> corpus;
  std::shared_ptr<providers::ProviderClient> text_embedder = testing::hash_client(128, 1);
  std::shared_ptr<providers::ProviderClient> image_embedder = testing::hash_client(128, 2);
  Embedders embedders() { return {text_embedder.get(), image_embedder.get()}; }
};

TEST_F(CorpusFixture, UnifiedMatchesExhaustiveScan) {
  IndexSet set = index_unified(*corpus, embedders());
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (const auto& c : corpus->chunks()) rows.emplace_back(c.chunk_id, text_embedder->embed_text(c.text));
  for (const auto& c : corpus->charts()) rows.emplace_back(c.chart_id, image_embedder->embed_image(corpus->image_path(c)));
  for (const std::string query : {"tiktok adoption among younger adults", "podcast chart", "income 2023"}) {
    auto expected = exhaustive(text_embedder->embed_text(query), rows);
    auto got = search(set, query, 5, FusionPolicy::three_to_two(), embedders());
    ASSERT_EQ(got.refs.size(), 5u);
    for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(got.refs[r].score, -expected[r].first, 1e-5) << query << r;
  }
}

TEST_F(CorpusFixture, SeparateFusedMatchesPerStreamScan) {
  IndexSet set = index_separate(*corpus, embedders(), std::nullopt);
  std::vector<std::pair<std::string, std::vector<double>>> text_rows;
  std::vector<std::pair<std::string, std::vector<double>>> chart_rows;
  for (const auto& c : corpus->chunks()) text_rows.emplace_back(c.chunk_id, text_embedder->embed_text(c.text));
  for (const auto& c : corpus->charts()) {
    chart_rows.emplace_back(c.chart_id, image_embedder->embed_image(corpus->image_path(c)));
  }
  const std::string query = "news habits by income";
  auto t = exhaustive(text_embedder->embed_text(query), text_rows);
  auto c = exhaustive(image_embedder->embed_text(query), chart_rows);
  auto got = search(set, query, 5, FusionPolicy::three_to_two(), embedders());
  ASSERT_EQ(got.refs.size(), 5u);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(got.refs[r].modality, Modality::text);
    EXPECT_NEAR(got.refs[r].score, -t[r].first, 1e-5);
  }
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(got.refs[3 + r].modality, Modality::chart);
    EXPECT_NEAR(got.refs[3 + r].score, -c[r].first, 1e-5);
  }
}

TEST_F(CorpusFixture, CaptionCombinedFusesDenseAndSparse) {
  auto captioner = std::make_shared<providers::ScriptedBackend>("captioner", providers::Fallback::echo);
  providers::ProviderClient cap(captioner, nullptr, testing::repo_templates(), testing::no_sleep());
  IndexSet set = index_caption_combined(*corpus, cap, embedders());
  ASSERT_TRUE(set.unified && set.sparse);
  EXPECT_EQ(set.unified->size(), corpus->chunks().size() + corpus->charts().size());

  const std::string query = "video gaming trends";
  const std::size_t n = set.unified->size();
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.emplace_back(set.unified->ids()[i], text_embedder->embed_text(set.unified->ref_text(i)));
  auto dense = exhaustive(text_embedder->embed_text(query), rows);
  std::map<std::string, double> rrf;
  for (std::size_t r = 0; r < dense.size(); ++r) rrf[dense[r].second] += 1.0 / (60.0 + r + 1);
  auto sparse = set.sparse->search(query, n);
  for (std::size_t r = 0; r < sparse.size(); ++r) rrf[sparse[r].ref_id] += 1.0 / (60.0 + r + 1);
  std::vector<std::pair<double, std::string>> expected;
  for (const auto& [id, s] : rrf) expected.emplace_back(-s, id);
  std::sort(expected.begin(), expected.end());

  auto got = search(set, query, 4, FusionPolicy::three_to_two(), embedders());
  ASSERT_EQ(got.refs.size(), 4u);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(got.refs[r].score, -expected[r].first, 1e-9);
}

TEST_F(CorpusFixture, RecallIsMonotoneInK) {
  IndexSet set = index_separate(*corpus, embedders());
  const auto& chunk = corpus->chunks()[2];
  const auto& chart = corpus->charts()[1];
  GroundTruthRefs gt;
  gt.refs.push_back({chunk.chunk_id, Modality::text, chunk.sentences});
  gt.refs.push_back({chart.chart_id, Modality::chart, {}});
  const std::size_t total = corpus->chunks().size() + corpus->charts().size();
  double previous = 0;
  for (std::size_t k = 1; k <= total; ++k) {
    double r = recall_at_k(search(set, "podcast listening", k, FusionPolicy::three_to_two(), embedders()), gt);
    EXPECT_GE(r, previous) << k;
    previous = r;
  }
  EXPECT_DOUBLE_EQ(previous, 1.0);
}

TEST_F(CorpusFixture, SaveLoadGivesIdenticalResults) {
  for (auto arch : {Architecture::unified_single, Architecture::separate_fused}) {
    IndexSet set = arch == Architecture::unified_single ? index_unified(*corpus, embedders())
                                                        : index_separate(*corpus, embedders());
    const std::string out = dir.file("index/" + std::string(to_string(arch)));
    set.save(out);
    IndexSet back = IndexSet::load(out);
    EXPECT_EQ(back.architecture, arch);
    auto a = search(set, "tiktok", 6, FusionPolicy::balanced(), embedders());
    auto b = search(back, "tiktok", 6, FusionPolicy::balanced(), embedders());
    EXPECT_EQ(json(a), json(b));
  }
}

TEST_F(CorpusFixture, GroundTruthFromPair) {
  qagen::QAPair p;
  p.qa_id = "qa";
  p.gt_sources = {{corpus->chunks()[0].doc_id, corpus->chunks()[0].chunk_id, Modality::text}};
  auto gt = GroundTruthRefs::from_pair(p, *corpus);
  ASSERT_EQ(gt.refs.size(), 1u);
  EXPECT_EQ(gt.refs[0].sentences, corpus->chunks()[0].sentences);
  p.gt_sources = {{"d", "missing", Modality::chart}};
  EXPECT_THROW(GroundTruthRefs::from_pair(p, *corpus), Error);
}

TEST(Search, EmptyIndexAndZeroK) {
  IndexSet set;
  set.architecture = Architecture::unified_single;
  auto e = testing::hash_client(8);
  try {
    search(set, "q", 3, FusionPolicy::balanced(), {e.get(), e.get()});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::EmptyIndex);
  }
  EXPECT_THROW(search(set, "q", 0, FusionPolicy::balanced(), {e.get(), e.get()}), Error);
}

// ---------------------------------------------------------------------------
// Recall

TEST(RecallAtK, LiteralSentenceMatching) {
  GroundTruthRefs gt;
  gt.refs.push_back({"chunk-a", Modality::text, {"33% of U.S. adults use TikTok.", "Use rose from 21%."}});
  gt.refs.push_back({"chart-a", Modality::chart, {}});

  RetrievedSet both;
  both.refs = {{"other-chunk", 0.9, Modality::text, "Intro. 33% of U.S.  adults use TikTok. Use rose from 21%. End."},
               {"chart-a", 0.5, Modality::chart, ""}};
  EXPECT_DOUBLE_EQ(recall_at_k(both, gt), 1.0);

  RetrievedSet partial;
  partial.refs = {{"chunk-a-prefix", 0.9, Modality::text, "33% of U.S. adults use TikTok."},
                  {"chart-b", 0.5, Modality::chart, ""}};
  EXPECT_DOUBLE_EQ(recall_at_k(partial, gt), 0.0);

  RetrievedSet split;
  split.refs = {{"x", 0.9, Modality::text, "33% of U.S. adults use TikTok."},
                {"y", 0.8, Modality::text, "Use rose from 21%."},
                {"chart-b", 0.5, Modality::chart, ""}};
  EXPECT_DOUBLE_EQ(recall_at_k(split, gt), 0.5);

  EXPECT_THROW(recall_at_k(both, GroundTruthRefs{}), Error);
}

}  // namespace
}  // namespace charge::retrieval
