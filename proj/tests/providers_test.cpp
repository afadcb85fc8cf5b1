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
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

namespace charge::providers {
namespace {

using nlohmann::json;
using testing::rule;
using testing::Scripted;
using testing::TempDir;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected charge::Error";
  return ErrorCode::Io;
}

ProviderRequest text_request(const std::string& tmpl, Slots slots) {
  ProviderRequest r;
  r.kind = RequestKind::text_gen;
  r.template_id = tmpl;
  r.slots = std::move(slots);
  return r;
}

// ---------------------------------------------------------------------------
// Templates

TEST(RenderTemplate, SubstitutesSlots) { EXPECT_EQ(render_template("hello {name}", {{"name", "x"}}), "hello x"); }

TEST(RenderTemplate, MissingSlot) {
  EXPECT_EQ(code_of([] { render_template("hello {name}", {}); }), ErrorCode::TemplateSlotMissing);
}

TEST(RenderTemplate, EscapesAndStrayBraces) {
  EXPECT_EQ(render_template("{{\"a\": {v}}} {not a slot} }", {{"v", "1"}}), "{\"a\": 1} {not a slot} }");
  EXPECT_EQ(render_template("Return JSON: {\"entries\": []}", {}), "Return JSON: {\"entries\": []}");
}

TEST(RenderTemplate, ImageSlotRendersAsHandle) {
  EXPECT_EQ(render_template("see {image}", {{"image", SlotValue::image("/x/c.png")}}), "see <image:/x/c.png>");
}

TEST(RenderTemplate, Placeholders) {
  auto names = template_placeholders("{a} {{b}} {c} {a} {1x}");
  EXPECT_EQ(names, (std::vector<std::string>{"a", "c"}));
}

TEST(TemplateLibrary, ExtractionPromptContainsChunkVerbatim) {
  const std::string chunk = "33% of U.S. adults say they use TikTok, up from 21% in 2021.";
  std::string prompt = testing::repo_templates()->render("extract_text_keypoints", {{"chunk", chunk}});
  EXPECT_NE(prompt.find(chunk), std::string::npos);
}

TEST(TemplateLibrary, EveryShippedTemplateRendersWithItsPlaceholders) {
  auto lib = testing::repo_templates();
  for (const auto& entry : std::filesystem::directory_iterator(testing::templates_dir())) {
    const std::string id = entry.path().stem().string();
    Slots slots;
    for (const auto& name : template_placeholders(lib->get(id))) slots[name] = "<" + name + ">";
    std::string out = lib->render(id, slots);
    for (const auto& [name, value] : slots) EXPECT_NE(out.find(value.value), std::string::npos) << id;
  }
}

TEST(TemplateLibrary, UnknownTemplateOnCall) {
  Scripted s;
  EXPECT_EQ(code_of([&] { s->call(text_request("no_such_template", {})); }), ErrorCode::UnknownTemplate);
}

// ---------------------------------------------------------------------------
// Fingerprints and the scripted backend

TEST(Fingerprint, WhitespaceInsensitiveKindSensitive) {
  auto a = text_request("t", {{"x", "a  b\n c"}});
  auto b = text_request("t", {{"x", " a b c "}});
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.kind = RequestKind::judge;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  auto c = text_request("t", {{"x", SlotValue::image("a b c")}});
  EXPECT_NE(a.fingerprint(), c.fingerprint());
  auto d = a;
  d.params["temperature"] = "0.7";
  EXPECT_NE(a.fingerprint(), d.fingerprint());
}

TEST(ScriptedBackend, UnknownRequestIsUnavailable) {
  Scripted s;
  EXPECT_EQ(code_of([&] { s->call(text_request("generate_probe", {{"keypoint", "k"}})); }),
            ErrorCode::BackendUnavailable);
}

TEST(ScriptedBackend, ExactEntryBeatsRules) {
  Scripted s(std::vector<json>{rule("generate_probe", nullptr, "from rule"),
              {{"kind", "text_gen"}, {"template", "generate_probe"}, {"slots", {{"keypoint", "k1"}}},
               {"response", "exact"}}});
  EXPECT_EQ(s->call_text(text_request("generate_probe", {{"keypoint", "k1"}})), "exact");
  EXPECT_EQ(s->call_text(text_request("generate_probe", {{"keypoint", "k2"}})), "from rule");
}

TEST(ScriptedBackend, ContainsMatchesNormalizedSubstrings) {
  Scripted s(std::vector<json>{rule("generate_probe", {{"keypoint", "USE   tiktok"}}, "tiktok"),
              rule("generate_probe", {{"$prompt", "keypoint: other"}}, "prompt"),
              rule("generate_probe", nullptr, "default")});
  EXPECT_EQ(s->call_text(text_request("generate_probe", {{"keypoint", "33% say they use TikTok"}})), "tiktok");
  EXPECT_EQ(s->call_text(text_request("generate_probe", {{"keypoint", "unrelated"}})), "default");
}

TEST(ScriptedBackend, EchoFallbackReturnsPrompt) {
  auto backend = std::make_shared<ScriptedBackend>("s", Fallback::echo);
  ProviderClient client(backend, nullptr, testing::repo_templates(), testing::no_sleep());
  std::string out = client.call_text(text_request("generate_probe", {{"keypoint", "KP-TEXT"}}));
  EXPECT_NE(out.find("KP-TEXT"), std::string::npos);
}

TEST(ScriptedBackend, LoadsJsonlAndArrayFixtures) {
  TempDir dir;
  dir.write("a.jsonl", rule("generate_probe", nullptr, "one").dump() + "\n");
  dir.write("b.json", json::array({rule("generate_probe", nullptr, "two")}).dump());
  auto a = ScriptedBackend::from_file(dir.file("a.jsonl"));
  auto b = ScriptedBackend::from_file(dir.file("b.json"));
  auto req = text_request("generate_probe", {{"keypoint", "k"}});
  EXPECT_EQ(a->complete(req, "").text.value_or(""), "one");
  EXPECT_EQ(b->complete(req, "").text.value_or(""), "two");
}

TEST(ScriptedBackend, ScriptedFailures) {
  Scripted s(std::vector<json>{rule("generate_probe", {{"keypoint", "down"}}, {{"raise", "unavailable"}}),
              rule("generate_probe", {{"keypoint", "busy"}}, {{"raise", "rate_limited"}})});
  EXPECT_EQ(code_of([&] { s->call(text_request("generate_probe", {{"keypoint", "down"}})); }),
            ErrorCode::BackendUnavailable);
  EXPECT_EQ(s.backend->call_count(), 1u);
  EXPECT_EQ(code_of([&] { s->call(text_request("generate_probe", {{"keypoint", "busy"}})); }),
            ErrorCode::RateLimited);
  // One attempt plus three retries.
  EXPECT_EQ(s.backend->call_count(), 5u);
}

// ---------------------------------------------------------------------------
// Cache and client

TEST(ProviderClient, SecondCallIsCachedAndIdentical) {
  Scripted s(std::vector<json>{rule("generate_probe", nullptr, "What share of U.S. adults say they use TikTok?")});
  auto req = text_request("generate_probe", {{"keypoint", "33% of U.S. adults say they use TikTok"}});
  ProviderResponse first = s->call(req);
  ProviderResponse second = s->call(req);
  EXPECT_FALSE(first.cached);
  EXPECT_TRUE(second.cached);
  EXPECT_EQ(first.text, second.text);
  EXPECT_EQ(s.backend->call_count(), 1u);
}

TEST(ResponseCache, PersistsAndKeysByProvider) {
  TempDir dir;
  const std::string ledger = dir.file("cache/responses.jsonl");
  auto req = text_request("generate_probe", {{"keypoint", "k"}});
  ProviderResponse r;
  r.text = "q";
  {
    ResponseCache cache(ledger);
    cache.put("backend-a", req.fingerprint(), req, r);
  }
  ResponseCache reloaded(ledger);
  EXPECT_EQ(reloaded.size(), 1u);
  ASSERT_TRUE(reloaded.get("backend-a", req.fingerprint()).has_value());
  EXPECT_EQ(reloaded.get("backend-a", req.fingerprint())->text.value_or(""), "q");
  EXPECT_FALSE(reloaded.get("backend-b", req.fingerprint()).has_value());
}

TEST(ResponseCache, SharedLedgerDoesNotLeakAcrossBackends) {
  auto cache = std::make_shared<ResponseCache>();
  auto a = std::make_shared<ScriptedBackend>("a");
  auto b = std::make_shared<ScriptedBackend>("b");
  a->add_entry(rule("generate_probe", nullptr, "from a"));
  b->add_entry(rule("generate_probe", nullptr, "from b"));
  ProviderClient ca(a, cache, testing::repo_templates());
  ProviderClient cb(b, cache, testing::repo_templates());
  auto req = text_request("generate_probe", {{"keypoint", "k"}});
  EXPECT_EQ(ca.call_text(req), "from a");
  EXPECT_EQ(cb.call_text(req), "from b");
}

/// Counts calls and tracks peak concurrency.
class SlowBackend : public Backend {
 public:
  std::string id() const override { return "slow"; }
  ProviderResponse complete(const ProviderRequest& request, const std::string&) override {
    ++calls;
    int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --active;
    ProviderResponse r;
    r.text = "reply:" + request.slots.at("keypoint").value;
    return r;
  }
  std::atomic<int> calls{0};
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
};

TEST(ProviderClient, ConcurrentIdenticalRequestsShareOneCall) {
  auto backend = std::make_shared<SlowBackend>();
  ProviderClient client(backend, nullptr, testing::repo_templates(), testing::no_sleep(), 4);
  std::vector<std::thread> threads;
  std::vector<std::string> out(8);
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] { out[i] = client.call_text(text_request("generate_probe", {{"keypoint", "same"}})); });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(backend->calls.load(), 1);
  for (const auto& o : out) EXPECT_EQ(o, "reply:same");
}

TEST(ProviderClient, HonorsInFlightLimit) {
  auto backend = std::make_shared<SlowBackend>();
  ProviderClient client(backend, nullptr, testing::repo_templates(), testing::no_sleep(), 2);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back(
        [&, i] { client.call_text(text_request("generate_probe", {{"keypoint", std::to_string(i)}})); });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(backend->calls.load(), 8);
  EXPECT_LE(backend->peak.load(), 2);
}

/// Fails with RateLimited `failures` times, then answers.
class FlakyBackend : public Backend {
 public:
  explicit FlakyBackend(int failures, ErrorCode code = ErrorCode::RateLimited) : failures_(failures), code_(code) {}
  std::string id() const override { return "flaky"; }
  ProviderResponse complete(const ProviderRequest&, const std::string&) override {
    if (calls++ < failures_) throw Error(code_, "try later");
    ProviderResponse r;
    r.text = "ok";
    return r;
  }
  int calls = 0;

 private:
  int failures_;
  ErrorCode code_;
};

TEST(ProviderClient, RetriesWithExponentialBackoff) {
  auto backend = std::make_shared<FlakyBackend>(2);
  std::vector<long> slept;
  RetryPolicy policy;
  policy.sleep = [&](std::chrono::milliseconds d) { slept.push_back(static_cast<long>(d.count())); };
  ProviderClient client(backend, nullptr, testing::repo_templates(), policy);
  EXPECT_EQ(client.call_text(text_request("generate_probe", {{"keypoint", "k"}})), "ok");
  EXPECT_EQ(backend->calls, 3);
  EXPECT_EQ(slept, (std::vector<long>{1000, 2000}));
}

TEST(ProviderClient, GivesUpAfterThreeRetries) {
  auto backend = std::make_shared<FlakyBackend>(10);
  std::vector<long> slept;
  RetryPolicy policy;
  policy.sleep = [&](std::chrono::milliseconds d) { slept.push_back(static_cast<long>(d.count())); };
  ProviderClient client(backend, nullptr, testing::repo_templates(), policy);
  EXPECT_EQ(code_of([&] { client.call(text_request("generate_probe", {{"keypoint", "k"}})); }), ErrorCode::RateLimited);
  EXPECT_EQ(backend->calls, 4);
  EXPECT_EQ(slept, (std::vector<long>{1000, 2000, 4000}));
}

TEST(ProviderClient, UnavailableIsNotRetried) {
  auto backend = std::make_shared<FlakyBackend>(1, ErrorCode::BackendUnavailable);
  ProviderClient client(backend, nullptr, testing::repo_templates(), testing::no_sleep());
  EXPECT_EQ(code_of([&] { client.call(text_request("generate_probe", {{"keypoint", "k"}})); }),
            ErrorCode::BackendUnavailable);
  EXPECT_EQ(backend->calls, 1);
}

/// Answers prose first and JSON only when re-prompted.
class StubbornBackend : public Backend {
 public:
  explicit StubbornBackend(bool comply) : comply_(comply) {}
  std::string id() const override { return "stubborn"; }
  ProviderResponse complete(const ProviderRequest& request, const std::string&) override {
    ++calls;
    ProviderResponse r;
    r.text = comply_ && request.params.count("reprompt") ? "```json\n{\"keypoints\": [\"a\"]}\n```" : "Sure! Here:";
    return r;
  }
  int calls = 0;

 private:
  bool comply_;
};

TEST(ProviderClient, StructuredOutputIsReissuedOnce) {
  auto backend = std::make_shared<StubbornBackend>(true);
  ProviderClient client(backend, nullptr, testing::repo_templates(), testing::no_sleep());
  json j = client.call_structured(text_request("extract_text_keypoints", {{"chunk", "c"}}));
  EXPECT_EQ(j.at("keypoints").at(0), "a");
  EXPECT_EQ(backend->calls, 2);
}

TEST(ProviderClient, StructuredParseErrorAfterReissue) {
  auto backend = std::make_shared<StubbornBackend>(false);
  ProviderClient client(backend, nullptr, testing::repo_templates(), testing::no_sleep());
  EXPECT_EQ(code_of([&] { client.call_structured(text_request("extract_text_keypoints", {{"chunk", "c"}})); }),
            ErrorCode::StructuredParseError);
  EXPECT_EQ(backend->calls, 2);
}

TEST(ParseJsonPayload, FencesAndProse) {
  EXPECT_EQ(parse_json_payload("```json\n[1, 2]\n```")->size(), 2u);
  EXPECT_EQ(parse_json_payload("Here you go: {\"a\": 1} hope it helps")->at("a"), 1);
  EXPECT_FALSE(parse_json_payload("no json here").has_value());
}

// ---------------------------------------------------------------------------
// Hash embedder, checked against an independent evaluation of its definition

std::uint64_t ref_fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t ref_splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

TEST(HashEmbedder, MatchesHashingFormula) {
  const std::size_t dim = 8;
  const std::uint64_t seed = 0;
  std::vector<double> expected(dim, 0.0);
  std::uint64_t base = ref_fnv1a("abc");
  expected[ref_splitmix(base ^ seed) % dim] = (ref_splitmix(base ^ ~seed) >> 63) ? -1.0 : 1.0;

  auto client = testing::hash_client(dim, seed);
  auto v = client->embed_text("abc");
  ASSERT_EQ(v.size(), dim);
  for (std::size_t i = 0; i < dim; ++i) EXPECT_DOUBLE_EQ(v[i], expected[i]) << i;
  EXPECT_EQ(testing::hash_client(dim, seed)->embed_text("abc"), v);
}

TEST(HashEmbedder, MultiTokenVectorIsUnitNorm) {
  HashEmbedder e(16, 7);
  auto v = e.embed("What share of U.S. adults say they use TikTok?");
  double norm = 0;
  for (double x : v) norm += x * x;
  EXPECT_NEAR(norm, 1.0, 1e-12);
  std::vector<double> expected(16, 0.0);
  for (const auto& token : text::tokenize("What share of U.S. adults say they use TikTok?")) {
    std::uint64_t base = ref_fnv1a(token);
    expected[ref_splitmix(base ^ 7) % 16] += (ref_splitmix(base ^ ~std::uint64_t{7}) >> 63) ? -1.0 : 1.0;
  }
  double n = 0;
  for (double x : expected) n += x * x;
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(v[i], expected[i] / std::sqrt(n), 1e-12);
}

TEST(HashEmbedder, EmbedsImageFilesByContent) {
  TempDir dir;
  std::string a = dir.write("a.svg", testing::svg_chart("TikTok use by age"));
  std::string b = dir.write("b.svg", testing::svg_chart("TikTok use by age"));
  auto client = testing::hash_client(32);
  EXPECT_EQ(client->embed_image(a), client->embed_image(b));
  EXPECT_EQ(code_of([&] { client->embed_image(dir.file("missing.png")); }), ErrorCode::UnreadableImage);
}

// ---------------------------------------------------------------------------
// Judge

TEST(JudgeEquivalent, EqualityTierNeedsNoJudge) {
  EXPECT_TRUE(judge_equivalent("33% of U.S. adults say they use TikTok", "33% of U.S. adults say they use TikTok",
                               nullptr));
  EXPECT_TRUE(judge_equivalent("Foo  Bar", "foo bar", nullptr));
}

TEST(JudgeEquivalent, ScriptedVerdicts) {
  Scripted judge(std::vector<json>{rule("judge_equivalent", {{"a", "one third"}}, {{"structured", {{"equivalent", true}}}}),
                  rule("judge_equivalent", nullptr, "No, they differ.")});
  EXPECT_FALSE(judge_equivalent("a", "b", judge.client.get()));
  EXPECT_TRUE(judge_equivalent("one third of adults", "33% of adults", judge.client.get()));
}

TEST(JudgeEquivalent, MissingJudgeIsUnavailable) {
  EXPECT_EQ(code_of([] { judge_equivalent("a", "b", nullptr); }), ErrorCode::BackendUnavailable);
}

// ---------------------------------------------------------------------------
// HTTP backend against a local OpenAI-compatible stub

class HttpBackendTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++chat_calls;
      last_auth = req.get_header_value("Authorization");
      last_body = json::parse(req.body);
      if (chat_calls <= throttle) {
        res.status = 429;
        return;
      }
      const std::string text = last_body["messages"][0]["content"][0]["text"];
      res.set_content(json{{"choices", {{{"message", {{"content", "echo: " + text}}}}}}}.dump(), "application/json");
    });
    server.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(json{{"data", {{{"embedding", {0.6, 0.8}}}}}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  void TearDown() override {
    server.stop();
    thread.join();
  }

  std::shared_ptr<HttpBackend> backend() {
    HttpBackendConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port);
    c.model = "stub-model";
    c.api_key = "secret";
    c.timeout_seconds = 5;
    return std::make_shared<HttpBackend>(c);
  }

  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> chat_calls{0};
  int throttle = 0;
  std::string last_auth;
  json last_body;
};

TEST_F(HttpBackendTest, ChatCompletionRoundTrip) {
  ProviderClient client(backend(), nullptr, testing::repo_templates(), testing::no_sleep());
  std::string out = client.call_text(text_request("generate_probe", {{"keypoint", "KP"}}));
  EXPECT_EQ(out.rfind("echo: ", 0), 0u);
  EXPECT_NE(out.find("KP"), std::string::npos);
  EXPECT_EQ(last_auth, "Bearer secret");
  EXPECT_EQ(last_body["model"], "stub-model");
  EXPECT_EQ(last_body["temperature"], 0.0);
}

TEST_F(HttpBackendTest, ImagesTravelAsDataUrls) {
  TempDir dir;
  std::string img = dir.write("c.svg", testing::svg_chart("x"));
  ProviderClient client(backend(), nullptr, testing::repo_templates(), testing::no_sleep());
  ProviderRequest req;
  req.kind = RequestKind::vision_gen;
  req.template_id = "answer_from_chart";
  req.slots = {{"question", "q"}, {"image", SlotValue::image(img)}, {"chart_values", "v"}};
  client.call_text(req);
  const auto& content = last_body["messages"][0]["content"];
  ASSERT_EQ(content.size(), 2u);
  EXPECT_EQ(content[1]["image_url"]["url"].get<std::string>().rfind("data:image/svg+xml;base64,", 0), 0u);
}

TEST_F(HttpBackendTest, RateLimitIsRetried) {
  throttle = 1;
  std::vector<long> slept;
  RetryPolicy policy;
  policy.sleep = [&](std::chrono::milliseconds d) { slept.push_back(static_cast<long>(d.count())); };
  ProviderClient client(backend(), nullptr, testing::repo_templates(), policy);
  client.call_text(text_request("generate_probe", {{"keypoint", "KP"}}));
  EXPECT_EQ(chat_calls.load(), 2);
  EXPECT_EQ(slept, (std::vector<long>{1000}));
}

TEST_F(HttpBackendTest, Embeddings) {
  ProviderClient client(backend(), nullptr, testing::repo_templates(), testing::no_sleep());
  EXPECT_EQ(client.embed_text("hello"), (std::vector<double>{0.6, 0.8}));
}

TEST(HttpBackend, UnreachableEndpointIsUnavailable) {
  HttpBackendConfig c;
  c.endpoint = "http://127.0.0.1:1";
  c.timeout_seconds = 1;
  ProviderClient client(std::make_shared<HttpBackend>(c), nullptr, testing::repo_templates(), testing::no_sleep());
  EXPECT_EQ(code_of([&] { client.call(text_request("generate_probe", {{"keypoint", "k"}})); }),
            ErrorCode::BackendUnavailable);
}

}  // namespace
}  // namespace charge::providers
