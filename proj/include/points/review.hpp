#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "points/corpus.hpp"

namespace httplib {
class Server;
}

namespace points::review {

using Json = nlohmann::json;

enum class Status { kPending, kClaimed, kAccepted, kCorrected, kDiscarded };
enum class Action { kAccept, kCorrect, kDiscard };

std::string_view to_string(Status s);
std::string_view to_string(Action a);
Status parse_status(std::string_view s);
Action parse_action(std::string_view s);

bool is_final(Status s);

/// A VLM annotation awaiting a human decision.
struct ReviewItem {
  std::string id;
  std::string queue;
  std::string image_ref;
  std::string question;
  std::string annotation;
  Status status = Status::kPending;
  std::optional<std::string> corrected_text;
  std::optional<std::string> labeler;
  std::int64_t version = 0;
  std::uint64_t seq = 0;  // enqueue order
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
  std::int64_t claimed_ms = 0;

  bool operator==(const ReviewItem&) const = default;
};

void to_json(Json& j, const ReviewItem& item);
void from_json(const Json& j, ReviewItem& item);

struct EnqueueTask {
  std::string id;
  std::string image_ref;
  std::string question;
  std::optional<std::string> annotation;
};

struct EnqueueResult {
  std::size_t enqueued = 0;
  std::vector<std::string> duplicates;
  std::vector<std::pair<std::string, std::string>> rejected;  // (id, reason)
};

struct QueueStats {
  std::size_t pending = 0;
  std::size_t claimed = 0;
  std::size_t accepted = 0;
  std::size_t corrected = 0;
  std::size_t discarded = 0;

  std::size_t total() const { return pending + claimed + accepted + corrected + discarded; }
  Json to_json() const;
};

struct Event {
  std::uint64_t seq = 0;
  std::string type;  // enqueue | claim | release | decide
  std::string item_id;
  std::int64_t version = 0;  // item version after the event
  std::int64_t ts_ms = 0;
  Json data;
};

struct StoreOptions {
  // When set, events are appended to <state_dir>/events.jsonl and a snapshot
  // is written to <state_dir>/snapshot.json every `snapshot_every` events.
  std::optional<std::filesystem::path> state_dir;
  std::chrono::milliseconds claim_timeout = std::chrono::minutes(30);
  std::size_t snapshot_every = 500;
  std::function<std::int64_t()> clock;  // ms since epoch; system clock when empty
};

/// Human-verification queue. Every mutation goes through one writer lock and
/// is appended to the event log before it becomes visible; reads take a
/// shared lock. Items move pending -> claimed -> {accepted|corrected|discarded};
/// an idle claim can also lapse back to pending.
class ReviewStore {
 public:
  explicit ReviewStore(StoreOptions options = {});
  ~ReviewStore();

  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  EnqueueResult enqueue(const std::string& queue, std::span<const EnqueueTask> tasks);
  std::optional<ReviewItem> claim_next(const std::string& queue, const std::string& labeler);
  ReviewItem decide(const std::string& item_id, const std::string& labeler, Action action,
                    const std::optional<std::string>& corrected_text, std::int64_t expected_version);

  std::optional<ReviewItem> get(const std::string& item_id) const;
  std::vector<ReviewItem> items(const std::string& queue) const;
  QueueStats stats(const std::string& queue) const;
  std::vector<Event> history(const std::string& item_id) const;
  std::size_t event_count() const;

  // Returns lapsed claims to pending; called implicitly by claim_next.
  std::size_t expire_claims();

  // Accepted items carry the annotation, corrected items the corrected text.
  std::vector<corpus::ConversationSample> verified_samples(const std::string& queue) const;
  corpus::DatasetManifest export_verified(const std::string& queue, const std::filesystem::path& out_dir,
                                          const std::string& name) const;

  void snapshot();

 private:
  std::int64_t now() const;
  void apply(const Event& e);
  void record(Event e);
  std::size_t expire_locked(std::int64_t now_ms);
  void load_state();

  StoreOptions options_;
  mutable std::shared_mutex mu_;
  std::map<std::string, ReviewItem> items_;
  std::map<std::string, std::vector<Event>> history_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_item_seq_ = 1;
  std::size_t since_snapshot_ = 0;
  std::size_t events_ = 0;
  std::ofstream log_;
};

struct AuthConfig {
  std::map<std::string, std::string> labeler_tokens;  // token -> labeler id
  std::optional<std::string> admin_token;

  static AuthConfig load(const std::filesystem::path& path);
  bool enabled() const { return !labeler_tokens.empty() || admin_token.has_value(); }
};

/// REST front end over a ReviewStore.
///
///   POST /queues/{name}/items           bulk enqueue
///   GET  /queues/{name}/next?labeler=ID claim (204 when empty)
///   POST /items/{id}/decision           {action, corrected_text?, expected_version}
///   GET  /items/{id}                    current item state
///   GET  /queues/{name}/stats
///   GET  /queues/{name}/export?format=manifest
///
/// 401 on a missing or unknown token, 403 when a labeler acts for someone
/// else, 404 for unknown items, 409 on version conflicts and illegal
/// transitions, 422 on validation errors.
class ReviewServer {
 public:
  ReviewServer(ReviewStore& store, AuthConfig auth = {});
  ~ReviewServer();

  int bind_to_any_port(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  void install_routes();

  ReviewStore& store_;
  AuthConfig auth_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace points::review
