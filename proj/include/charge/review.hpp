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

#include "charge/corpus.hpp"
#include "charge/qagen.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace charge::review {

using qagen::RejectionReason;
using qagen::ReviewState;

inline constexpr std::size_t kReviewersPerItem = 3;
inline constexpr std::size_t kAcceptsRequired = 2;

enum class Verdict { accept, reject };
enum class AssignmentState { open, submitted };

std::string_view to_string(Verdict v);
std::string_view to_string(AssignmentState s);
Verdict verdict_from_string(std::string_view s);

struct ReviewAssignment {
  std::string qa_id;
  std::string reviewer_id;
  AssignmentState state = AssignmentState::open;
};

struct ReviewDecision {
  std::string qa_id;
  std::string reviewer_id;
  Verdict verdict = Verdict::accept;
  std::optional<RejectionReason> reason;
  std::optional<std::string> note;
  std::string timestamp;
  /// Client-chosen token; replaying a decision with the same key returns the
  /// original acknowledgement instead of AlreadySubmitted.
  std::optional<std::string> idempotency_key;
};

struct Acknowledgement {
  std::string qa_id;
  std::string reviewer_id;
  std::uint64_t sequence = 0;
  bool replayed = false;
};

struct AgreementReport {
  double kappa = 0.0;
  std::size_t n_items = 0;
  std::size_t n_raters_per_item = kReviewersPerItem;
  double observed_agreement = 0.0;  // P̄
  double expected_agreement = 0.0;  // P̄_e
  bool degenerate = false;          // every decision in one category
  std::map<std::string, std::size_t> category_totals;
};

/// Three distinct reviewers per pending pair, always picking the least-loaded
/// reviewers so loads stay within ±1; ties follow a seeded roster shuffle.
std::vector<ReviewAssignment> assign(const std::vector<qagen::QAPair>& dataset, const std::vector<std::string>& roster,
                                     std::uint64_t seed);

/// Fleiss's kappa over {accept, reject}. Every item must carry exactly
/// `raters` verdicts. When all verdicts share one category the expected
/// agreement is 1 and kappa is reported as 1.0 with `degenerate` set.
AgreementReport fleiss_kappa(const std::vector<std::vector<Verdict>>& items, std::size_t raters = kReviewersPerItem);

struct Consensus {
  ReviewState state = ReviewState::pending;
  std::optional<RejectionReason> reason;
};

/// accepted iff at least two accepts; rejected once acceptance is impossible,
/// carrying the majority rejection reason (earliest submitted on a tie).
Consensus consensus(const std::vector<ReviewDecision>& decisions_in_order, std::size_t raters = kReviewersPerItem);

/// Review state with a single-writer append-only log plus periodic snapshot.
/// Reads take a shared lock and see a consistent state.
class ReviewStore {
 public:
  explicit ReviewStore(std::string data_dir, std::size_t snapshot_every = 64);

  /// Registers candidates (persisted to candidates.jsonl). Existing ids are kept.
  void import_candidates(const std::vector<qagen::QAPair>& pairs);

  std::vector<ReviewAssignment> assign(const std::vector<std::string>& roster, std::uint64_t seed);
  Acknowledgement submit(ReviewDecision decision);
  /// Applies consensus to every candidate. Without `partial` every assignment
  /// must be submitted (IncompleteReviews otherwise).
  std::vector<qagen::QAPair> finalize(bool partial = false);

  std::vector<ReviewAssignment> assignments_for(const std::string& reviewer_id, bool open_only = true) const;
  std::vector<ReviewAssignment> assignments() const;
  std::vector<ReviewDecision> decisions() const;
  std::optional<qagen::QAPair> candidate(const std::string& qa_id) const;
  std::vector<qagen::QAPair> candidates() const;

  /// Progress, kappa over fully reviewed items, per-reason counts.
  nlohmann::json stats() const;

  void snapshot();
  const std::string& data_dir() const { return dir_; }

 private:
  void replay();
  void write_snapshot();
  void append_event(nlohmann::json event);
  void apply_event(const nlohmann::json& event);
  Acknowledgement apply_decision(const ReviewDecision& d, std::uint64_t seq);
  std::vector<qagen::QAPair> apply_finalize(bool partial);

  std::string dir_;
  std::size_t snapshot_every_;
  mutable std::shared_mutex mu_;
  std::uint64_t seq_ = 0;
  std::size_t since_snapshot_ = 0;
  std::vector<qagen::QAPair> candidates_;
  std::map<std::string, std::size_t> candidate_index_;
  std::vector<ReviewAssignment> assignments_;
  std::vector<ReviewDecision> decisions_;
  std::map<std::string, Acknowledgement> acks_by_key_;
};

struct ServerAuth {
  /// bearer token → reviewer id
  std::map<std::string, std::string> reviewer_tokens;
  std::string admin_token;
};

/// HTTP+JSON front of a ReviewStore.
class ReviewServer {
 public:
  ReviewServer(ReviewStore& store, const corpus::Corpus* corpus, ServerAuth auth,
               std::optional<std::string> static_dir = std::nullopt);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Keypoint statements shown on review cards.
  void set_keypoints(const std::vector<keypoints::Keypoint>& kps);

  /// Binds to an ephemeral port and returns it.
  int bind_any(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen_after_bind();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ServerAuth load_auth(const std::string& path);

void to_json(nlohmann::json& j, const ReviewAssignment& a);
void from_json(const nlohmann::json& j, ReviewAssignment& a);
void to_json(nlohmann::json& j, const ReviewDecision& d);
void from_json(const nlohmann::json& j, ReviewDecision& d);
void to_json(nlohmann::json& j, const AgreementReport& r);

}  // namespace charge::review
