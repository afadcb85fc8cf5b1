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

#include "charge/review.hpp"

#include "charge/error.hpp"
#include "charge/jsonl.hpp"
#include "charge/text.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <mutex>
#include <random>
#include <set>

namespace charge::review {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Verdict v) { return v == Verdict::accept ? "accept" : "reject"; }

std::string_view to_string(AssignmentState s) { return s == AssignmentState::open ? "open" : "submitted"; }

Verdict verdict_from_string(std::string_view s) {
  if (s == "accept") return Verdict::accept;
  if (s == "reject") return Verdict::reject;
  throw Error(ErrorCode::PreconditionFailed, "unknown verdict '" + std::string(s) + "'");
}

namespace {

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<ReviewAssignment> balance(const std::vector<const qagen::QAPair*>& items,
                                      const std::vector<std::string>& roster, std::uint64_t seed,
                                      std::map<std::string, std::size_t> loads) {
  std::vector<std::string> order;
  for (const auto& r : roster) {
    if (std::find(order.begin(), order.end(), r) == order.end()) order.push_back(r);
  }
  if (order.size() < kReviewersPerItem) {
    throw Error(ErrorCode::RosterTooSmall, "need at least " + std::to_string(kReviewersPerItem) + " reviewers, have " +
                                               std::to_string(order.size()));
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<ReviewAssignment> out;
  for (const qagen::QAPair* item : items) {
    std::vector<std::string> ranked = order;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const std::string& a, const std::string& b) { return loads[a] < loads[b]; });
    for (std::size_t i = 0; i < kReviewersPerItem; ++i) {
      out.push_back({item->qa_id, ranked[i], AssignmentState::open});
      ++loads[ranked[i]];
    }
  }
  return out;
}

}  // namespace

std::vector<ReviewAssignment> assign(const std::vector<qagen::QAPair>& dataset, const std::vector<std::string>& roster,
                                     std::uint64_t seed) {
  std::vector<const qagen::QAPair*> items;
  for (const auto& p : dataset) {
    if (p.review_state == ReviewState::pending) items.push_back(&p);
  }
  return balance(items, roster, seed, {});
}

AgreementReport fleiss_kappa(const std::vector<std::vector<Verdict>>& items, std::size_t raters) {
  if (raters < 2) throw Error(ErrorCode::InsufficientDecisions, "agreement needs at least two raters per item");
  if (items.empty()) throw Error(ErrorCode::InsufficientDecisions, "no fully reviewed items");
  AgreementReport r;
  r.n_items = items.size();
  r.n_raters_per_item = raters;
  const double n = static_cast<double>(raters);
  double total_accept = 0;
  double sum_p = 0;
  for (const auto& item : items) {
    if (item.size() != raters) {
      throw Error(ErrorCode::InsufficientDecisions,
                  "item has " + std::to_string(item.size()) + " decisions, expected " + std::to_string(raters));
    }
    double accepts = static_cast<double>(std::count(item.begin(), item.end(), Verdict::accept));
    double rejects = n - accepts;
    total_accept += accepts;
    sum_p += (accepts * accepts + rejects * rejects - n) / (n * (n - 1));
  }
  const double total = n * static_cast<double>(items.size());
  const double p_accept = total_accept / total;
  const double p_reject = 1.0 - p_accept;
  r.category_totals["accept"] = static_cast<std::size_t>(total_accept);
  r.category_totals["reject"] = static_cast<std::size_t>(total - total_accept);
  r.observed_agreement = sum_p / static_cast<double>(items.size());
  r.expected_agreement = p_accept * p_accept + p_reject * p_reject;
  if (r.category_totals["accept"] == 0 || r.category_totals["reject"] == 0) {
    r.degenerate = true;
    r.kappa = 1.0;
    return r;
  }
  r.kappa = (r.observed_agreement - r.expected_agreement) / (1.0 - r.expected_agreement);
  return r;
}

Consensus consensus(const std::vector<ReviewDecision>& decisions, std::size_t raters) {
  std::size_t accepts = 0;
  std::vector<RejectionReason> reasons;
  for (const auto& d : decisions) {
    if (d.verdict == Verdict::accept) {
      ++accepts;
    } else {
      reasons.push_back(d.reason.value_or(RejectionReason::other));
    }
  }
  Consensus c;
  if (accepts >= kAcceptsRequired) {
    c.state = ReviewState::accepted;
    return c;
  }
  const std::size_t outstanding = raters > decisions.size() ? raters - decisions.size() : 0;
  if (accepts + outstanding >= kAcceptsRequired) return c;
  c.state = ReviewState::rejected;
  std::size_t best = 0;
  for (const auto& r : reasons) {
    std::size_t n = static_cast<std::size_t>(std::count(reasons.begin(), reasons.end(), r));
    if (n > best) {
      best = n;
      c.reason = r;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// ReviewStore

namespace {

const char* kCandidates = "candidates.jsonl";
const char* kLog = "reviews.log.jsonl";
const char* kSnapshot = "snapshot.json";

void append_line_durable(const std::string& path, const std::string& line) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::Io, "cannot open " + path);
  std::string data = line + "\n";
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      ::close(fd);
      throw Error(ErrorCode::Io, "write failed on " + path);
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

ReviewStore::ReviewStore(std::string data_dir, std::size_t snapshot_every)
    : dir_(std::move(data_dir)), snapshot_every_(std::max<std::size_t>(1, snapshot_every)) {
  fs::create_directories(dir_);
  replay();
}

void ReviewStore::replay() {
  auto snapshot_path = (fs::path(dir_) / kSnapshot).string();
  if (fs::exists(snapshot_path)) {
    json s = json::parse(text::read_file(snapshot_path));
    seq_ = s.at("seq").get<std::uint64_t>();
    candidates_ = s.at("candidates").get<std::vector<qagen::QAPair>>();
    assignments_ = s.at("assignments").get<std::vector<ReviewAssignment>>();
    decisions_ = s.at("decisions").get<std::vector<ReviewDecision>>();
    for (const auto& a : s.at("acks")) {
      Acknowledgement ack{a.at("qa_id").get<std::string>(), a.at("reviewer_id").get<std::string>(),
                          a.at("sequence").get<std::uint64_t>(), false};
      acks_by_key_[a.at("key").get<std::string>()] = ack;
    }
  }
  for (std::size_t i = 0; i < candidates_.size(); ++i) candidate_index_[candidates_[i].qa_id] = i;
  auto candidates_path = (fs::path(dir_) / kCandidates).string();
  if (fs::exists(candidates_path)) {
    for (auto& p : jsonl::read_as<qagen::QAPair>(candidates_path)) {
      if (candidate_index_.count(p.qa_id)) continue;
      candidate_index_[p.qa_id] = candidates_.size();
      candidates_.push_back(std::move(p));
    }
  }
  auto log_path = (fs::path(dir_) / kLog).string();
  if (fs::exists(log_path)) {
    for (const auto& event : jsonl::read(log_path)) {
      if (event.at("seq").get<std::uint64_t>() <= seq_) continue;
      apply_event(event);
      seq_ = event.at("seq").get<std::uint64_t>();
      ++since_snapshot_;
    }
  }
}

void ReviewStore::apply_event(const json& event) {
  const auto type = event.at("type").get<std::string>();
  if (type == "assign") {
    for (auto a : event.at("assignments").get<std::vector<ReviewAssignment>>()) assignments_.push_back(std::move(a));
  } else if (type == "decision") {
    apply_decision(event.at("decision").get<ReviewDecision>(), event.at("seq").get<std::uint64_t>());
  } else if (type == "finalize") {
    apply_finalize(event.value("partial", false));
  } else {
    throw Error(ErrorCode::Io, "unknown review log event '" + type + "'");
  }
}

void ReviewStore::append_event(json event) {
  event["seq"] = seq_ + 1;
  append_line_durable((fs::path(dir_) / kLog).string(), event.dump());
  ++seq_;
  apply_event(event);
  if (++since_snapshot_ >= snapshot_every_) write_snapshot();
}

void ReviewStore::write_snapshot() {
  json acks = json::array();
  for (const auto& [key, a] : acks_by_key_) {
    acks.push_back({{"key", key}, {"qa_id", a.qa_id}, {"reviewer_id", a.reviewer_id}, {"sequence", a.sequence}});
  }
  json s = {{"seq", seq_},
            {"candidates", candidates_},
            {"assignments", assignments_},
            {"decisions", decisions_},
            {"acks", acks}};
  text::write_file((fs::path(dir_) / kSnapshot).string(), s.dump() + "\n");
  text::write_file((fs::path(dir_) / kLog).string(), "");
  since_snapshot_ = 0;
}

void ReviewStore::snapshot() {
  std::unique_lock lock(mu_);
  write_snapshot();
}

void ReviewStore::import_candidates(const std::vector<qagen::QAPair>& pairs) {
  std::unique_lock lock(mu_);
  for (const auto& p : pairs) {
    if (candidate_index_.count(p.qa_id)) continue;
    candidate_index_[p.qa_id] = candidates_.size();
    candidates_.push_back(p);
  }
  jsonl::write_all((fs::path(dir_) / kCandidates).string(), candidates_);
}

std::vector<ReviewAssignment> ReviewStore::assign(const std::vector<std::string>& roster, std::uint64_t seed) {
  std::unique_lock lock(mu_);
  std::set<std::string> assigned;
  std::map<std::string, std::size_t> loads;
  for (const auto& a : assignments_) {
    assigned.insert(a.qa_id);
    ++loads[a.reviewer_id];
  }
  std::vector<const qagen::QAPair*> items;
  for (const auto& p : candidates_) {
    if (p.review_state == ReviewState::pending && !assigned.count(p.qa_id)) items.push_back(&p);
  }
  auto fresh = balance(items, roster, seed, loads);
  if (!fresh.empty()) append_event({{"type", "assign"}, {"assignments", fresh}});
  return fresh;
}

Acknowledgement ReviewStore::apply_decision(const ReviewDecision& d, std::uint64_t seq) {
  for (auto& a : assignments_) {
    if (a.qa_id == d.qa_id && a.reviewer_id == d.reviewer_id) a.state = AssignmentState::submitted;
  }
  decisions_.push_back(d);
  Acknowledgement ack{d.qa_id, d.reviewer_id, seq, false};
  if (d.idempotency_key) acks_by_key_[*d.idempotency_key] = ack;
  return ack;
}

Acknowledgement ReviewStore::submit(ReviewDecision d) {
  if (d.verdict == Verdict::reject && !d.reason) {
    throw Error(ErrorCode::MissingRejectReason, "reject of " + d.qa_id + " needs a reason");
  }
  if (d.verdict == Verdict::accept) d.reason.reset();
  std::unique_lock lock(mu_);
  if (d.idempotency_key) {
    auto it = acks_by_key_.find(*d.idempotency_key);
    if (it != acks_by_key_.end()) {
      if (it->second.qa_id != d.qa_id || it->second.reviewer_id != d.reviewer_id) {
        throw Error(ErrorCode::AlreadySubmitted, "idempotency key reused for a different assignment");
      }
      Acknowledgement ack = it->second;
      ack.replayed = true;
      return ack;
    }
  }
  auto a = std::find_if(assignments_.begin(), assignments_.end(), [&](const ReviewAssignment& x) {
    return x.qa_id == d.qa_id && x.reviewer_id == d.reviewer_id;
  });
  if (a == assignments_.end()) throw Error(ErrorCode::NoSuchAssignment, d.qa_id + " for " + d.reviewer_id);
  if (a->state == AssignmentState::submitted) {
    throw Error(ErrorCode::AlreadySubmitted, d.qa_id + " by " + d.reviewer_id);
  }
  if (d.timestamp.empty()) d.timestamp = utc_now();
  append_event({{"type", "decision"}, {"decision", d}});
  Acknowledgement ack{d.qa_id, d.reviewer_id, seq_, false};
  return ack;
}

std::vector<qagen::QAPair> ReviewStore::apply_finalize(bool partial) {
  (void)partial;
  std::map<std::string, std::vector<ReviewDecision>> by_item;
  for (const auto& d : decisions_) by_item[d.qa_id].push_back(d);
  for (auto& p : candidates_) {
    auto it = by_item.find(p.qa_id);
    if (it == by_item.end()) continue;
    Consensus c = consensus(it->second);
    p.review_state = c.state;
    p.rejection_reason = c.reason;
  }
  return candidates_;
}

std::vector<qagen::QAPair> ReviewStore::finalize(bool partial) {
  std::unique_lock lock(mu_);
  if (!partial) {
    std::size_t open = static_cast<std::size_t>(std::count_if(
        assignments_.begin(), assignments_.end(), [](const auto& a) { return a.state == AssignmentState::open; }));
    if (open > 0) throw Error(ErrorCode::IncompleteReviews, std::to_string(open) + " assignments still open");
  }
  append_event({{"type", "finalize"}, {"partial", partial}});
  return candidates_;
}

std::vector<ReviewAssignment> ReviewStore::assignments_for(const std::string& reviewer_id, bool open_only) const {
  std::shared_lock lock(mu_);
  std::vector<ReviewAssignment> out;
  for (const auto& a : assignments_) {
    if (a.reviewer_id == reviewer_id && (!open_only || a.state == AssignmentState::open)) out.push_back(a);
  }
  return out;
}

std::vector<ReviewAssignment> ReviewStore::assignments() const {
  std::shared_lock lock(mu_);
  return assignments_;
}

std::vector<ReviewDecision> ReviewStore::decisions() const {
  std::shared_lock lock(mu_);
  return decisions_;
}

std::optional<qagen::QAPair> ReviewStore::candidate(const std::string& qa_id) const {
  std::shared_lock lock(mu_);
  auto it = candidate_index_.find(qa_id);
  if (it == candidate_index_.end()) return std::nullopt;
  return candidates_[it->second];
}

std::vector<qagen::QAPair> ReviewStore::candidates() const {
  std::shared_lock lock(mu_);
  return candidates_;
}

json ReviewStore::stats() const {
  std::shared_lock lock(mu_);
  std::size_t submitted = 0;
  json per_reviewer = json::object();
  for (const auto& a : assignments_) {
    auto& r = per_reviewer[a.reviewer_id];
    if (r.is_null()) r = {{"assigned", 0}, {"submitted", 0}};
    r["assigned"] = r["assigned"].get<std::size_t>() + 1;
    if (a.state == AssignmentState::submitted) {
      ++submitted;
      r["submitted"] = r["submitted"].get<std::size_t>() + 1;
    }
  }
  std::map<std::string, std::vector<Verdict>> by_item;
  json reasons = {{"ocr_error", 0}, {"redundant", 0}, {"other", 0}};
  json verdicts = {{"accept", 0}, {"reject", 0}};
  for (const auto& d : decisions_) {
    by_item[d.qa_id].push_back(d.verdict);
    const std::string v(to_string(d.verdict));
    verdicts[v] = verdicts[v].get<std::size_t>() + 1;
    if (d.reason) {
      const std::string key(qagen::to_string(*d.reason));
      reasons[key] = reasons[key].get<std::size_t>() + 1;
    }
  }
  std::vector<std::vector<Verdict>> complete;
  for (auto& [id, v] : by_item) {
    if (v.size() == kReviewersPerItem) complete.push_back(v);
  }
  json states = {{"pending", 0}, {"accepted", 0}, {"rejected", 0}};
  for (const auto& p : candidates_) {
    const std::string key(qagen::to_string(p.review_state));
    states[key] = states[key].get<std::size_t>() + 1;
  }
  json out = {{"candidates", candidates_.size()},
              {"assignments", assignments_.size()},
              {"submitted", submitted},
              {"open", assignments_.size() - submitted},
              {"progress", assignments_.empty() ? 0.0 : static_cast<double>(submitted) / assignments_.size()},
              {"verdicts", verdicts},
              {"rejection_reasons", reasons},
              {"states", states},
              {"per_reviewer", per_reviewer}};
  out["agreement"] = complete.empty() ? json(nullptr) : json(fleiss_kappa(complete));
  return out;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const ReviewAssignment& a) {
  j = {{"qa_id", a.qa_id}, {"reviewer_id", a.reviewer_id}, {"state", to_string(a.state)}};
}

void from_json(const json& j, ReviewAssignment& a) {
  a.qa_id = j.at("qa_id").get<std::string>();
  a.reviewer_id = j.at("reviewer_id").get<std::string>();
  a.state = j.value("state", "open") == "submitted" ? AssignmentState::submitted : AssignmentState::open;
}

void to_json(json& j, const ReviewDecision& d) {
  j = {{"qa_id", d.qa_id},
       {"reviewer_id", d.reviewer_id},
       {"verdict", to_string(d.verdict)},
       {"timestamp", d.timestamp}};
  j["reason"] = d.reason ? json(qagen::to_string(*d.reason)) : json(nullptr);
  j["note"] = d.note ? json(*d.note) : json(nullptr);
  j["idempotency_key"] = d.idempotency_key ? json(*d.idempotency_key) : json(nullptr);
}

void from_json(const json& j, ReviewDecision& d) {
  d.qa_id = j.at("qa_id").get<std::string>();
  d.reviewer_id = j.value("reviewer_id", "");
  d.verdict = verdict_from_string(j.at("verdict").get<std::string>());
  d.timestamp = j.value("timestamp", "");
  d.reason.reset();
  d.note.reset();
  d.idempotency_key.reset();
  if (j.contains("reason") && j.at("reason").is_string()) {
    d.reason = qagen::rejection_reason_from_string(j.at("reason").get<std::string>());
  }
  if (j.contains("note") && j.at("note").is_string()) d.note = j.at("note").get<std::string>();
  if (j.contains("idempotency_key") && j.at("idempotency_key").is_string()) {
    d.idempotency_key = j.at("idempotency_key").get<std::string>();
  }
}

void to_json(json& j, const AgreementReport& r) {
  j = {{"kappa", r.kappa},
       {"n_items", r.n_items},
       {"n_raters_per_item", r.n_raters_per_item},
       {"observed_agreement", r.observed_agreement},
       {"expected_agreement", r.expected_agreement},
       {"degenerate", r.degenerate},
       {"category_totals", r.category_totals}};
}

}  // namespace charge::review
