#include "points/review.hpp"

#include <algorithm>
#include <mutex>

#include "points/error.hpp"
#include "points/util.hpp"

namespace points::review {

namespace {

constexpr std::pair<Status, std::string_view> kStatuses[] = {{Status::kPending, "pending"},
                                                             {Status::kClaimed, "claimed"},
                                                             {Status::kAccepted, "accepted"},
                                                             {Status::kCorrected, "corrected"},
                                                             {Status::kDiscarded, "discarded"}};
constexpr std::pair<Action, std::string_view> kActions[] = {
    {Action::kAccept, "accept"}, {Action::kCorrect, "correct"}, {Action::kDiscard, "discard"}};

Status status_after(Action a) {
  switch (a) {
    case Action::kAccept: return Status::kAccepted;
    case Action::kCorrect: return Status::kCorrected;
    case Action::kDiscard: return Status::kDiscarded;
  }
  return Status::kPending;
}

Json event_to_json(const Event& e) {
  return {{"seq", e.seq}, {"type", e.type}, {"item", e.item_id}, {"version", e.version}, {"ts", e.ts_ms},
          {"data", e.data}};
}

Event event_from_json(const Json& j) {
  Event e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.type = j.at("type").get<std::string>();
  e.item_id = j.at("item").get<std::string>();
  e.version = j.at("version").get<std::int64_t>();
  e.ts_ms = j.at("ts").get<std::int64_t>();
  e.data = j.value("data", Json::object());
  return e;
}

}  // namespace

std::string_view to_string(Status s) {
  for (const auto& [v, n] : kStatuses) {
    if (v == s) return n;
  }
  return "?";
}

std::string_view to_string(Action a) {
  for (const auto& [v, n] : kActions) {
    if (v == a) return n;
  }
  return "?";
}

Status parse_status(std::string_view s) {
  for (const auto& [v, n] : kStatuses) {
    if (n == s) return v;
  }
  fail(ErrorCode::kValidation, "unknown status '" + std::string(s) + "'");
}

Action parse_action(std::string_view s) {
  for (const auto& [v, n] : kActions) {
    if (n == s) return v;
  }
  fail(ErrorCode::kValidation, "unknown action '" + std::string(s) + "'");
}

bool is_final(Status s) { return s == Status::kAccepted || s == Status::kCorrected || s == Status::kDiscarded; }

void to_json(Json& j, const ReviewItem& item) {
  j = Json{{"id", item.id},
           {"queue", item.queue},
           {"image_ref", item.image_ref},
           {"question", item.question},
           {"annotation", item.annotation},
           {"status", to_string(item.status)},
           {"corrected_text", item.corrected_text ? Json(*item.corrected_text) : Json(nullptr)},
           {"labeler", item.labeler ? Json(*item.labeler) : Json(nullptr)},
           {"version", item.version},
           {"seq", item.seq},
           {"created_ms", item.created_ms},
           {"updated_ms", item.updated_ms},
           {"claimed_ms", item.claimed_ms}};
}

void from_json(const Json& j, ReviewItem& item) {
  item = ReviewItem{};
  j.at("id").get_to(item.id);
  j.at("queue").get_to(item.queue);
  j.at("image_ref").get_to(item.image_ref);
  j.at("question").get_to(item.question);
  j.at("annotation").get_to(item.annotation);
  item.status = parse_status(j.at("status").get<std::string>());
  if (auto it = j.find("corrected_text"); it != j.end() && !it->is_null()) item.corrected_text = it->get<std::string>();
  if (auto it = j.find("labeler"); it != j.end() && !it->is_null()) item.labeler = it->get<std::string>();
  item.version = j.at("version").get<std::int64_t>();
  item.seq = j.at("seq").get<std::uint64_t>();
  item.created_ms = j.value("created_ms", std::int64_t{0});
  item.updated_ms = j.value("updated_ms", std::int64_t{0});
  item.claimed_ms = j.value("claimed_ms", std::int64_t{0});
}

Json QueueStats::to_json() const {
  return {{"pending", pending},     {"claimed", claimed},     {"accepted", accepted},
          {"corrected", corrected}, {"discarded", discarded}, {"total", total()}};
}

ReviewStore::ReviewStore(StoreOptions options) : options_(std::move(options)) {
  if (options_.state_dir) {
    std::filesystem::create_directories(*options_.state_dir);
    load_state();
    log_.open(*options_.state_dir / "events.jsonl", std::ios::binary | std::ios::app);
    if (!log_) fail(ErrorCode::kIo, "cannot open event log in " + options_.state_dir->string());
  }
}

ReviewStore::~ReviewStore() = default;

std::int64_t ReviewStore::now() const {
  if (options_.clock) return options_.clock();
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void ReviewStore::load_state() {
  const auto snap_path = *options_.state_dir / "snapshot.json";
  std::uint64_t snap_seq = 0;
  if (std::filesystem::exists(snap_path)) {
    const auto doc = Json::parse(read_file(snap_path));
    snap_seq = doc.at("last_seq").get<std::uint64_t>();
    next_item_seq_ = doc.at("next_item_seq").get<std::uint64_t>();
    for (const auto& j : doc.at("items")) {
      auto item = j.get<ReviewItem>();
      items_.emplace(item.id, std::move(item));
    }
    next_seq_ = snap_seq + 1;
  }
  const auto log_path = *options_.state_dir / "events.jsonl";
  if (!std::filesystem::exists(log_path)) return;
  const auto lines = split_lines(read_file(log_path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    Event e;
    try {
      e = event_from_json(Json::parse(lines[i]));
    } catch (const std::exception&) {
      // Only a torn final write is tolerated; cut it off so appends start
      // on a clean line.
      if (i + 1 == lines.size()) {
        std::string kept;
        for (std::size_t k = 0; k < i; ++k) kept += lines[k] + "\n";
        write_file_atomic(log_path, kept);
        break;
      }
      fail(ErrorCode::kParse, "corrupt event log at line " + std::to_string(i + 1));
    }
    history_[e.item_id].push_back(e);
    ++events_;
    if (e.seq > snap_seq) apply(e);
    next_seq_ = std::max(next_seq_, e.seq + 1);
  }
}

void ReviewStore::apply(const Event& e) {
  if (e.type == "enqueue") {
    auto item = e.data.get<ReviewItem>();
    next_item_seq_ = std::max(next_item_seq_, item.seq + 1);
    items_[item.id] = std::move(item);
    return;
  }
  auto& item = items_.at(e.item_id);
  item.version = e.version;
  item.updated_ms = e.ts_ms;
  if (e.type == "claim") {
    item.status = Status::kClaimed;
    item.labeler = e.data.at("labeler").get<std::string>();
    item.claimed_ms = e.ts_ms;
  } else if (e.type == "release") {
    item.status = Status::kPending;
    item.labeler.reset();
    item.claimed_ms = 0;
  } else if (e.type == "decide") {
    item.status = status_after(parse_action(e.data.at("action").get<std::string>()));
    if (auto it = e.data.find("corrected_text"); it != e.data.end() && !it->is_null()) {
      item.corrected_text = it->get<std::string>();
    }
  } else {
    fail(ErrorCode::kParse, "unknown event type '" + e.type + "'");
  }
}

void ReviewStore::record(Event e) {
  e.seq = next_seq_++;
  if (log_.is_open()) {
    log_ << event_to_json(e).dump() << '\n';
    log_.flush();
    if (!log_) fail(ErrorCode::kIo, "event log write failed");
  }
  apply(e);
  history_[e.item_id].push_back(std::move(e));
  ++events_;
  if (options_.state_dir && ++since_snapshot_ >= options_.snapshot_every) {
    since_snapshot_ = 0;
    Json items = Json::array();
    for (const auto& [_, item] : items_) items.push_back(item);
    Json doc{{"last_seq", next_seq_ - 1}, {"next_item_seq", next_item_seq_}, {"items", items}};
    write_file_atomic(*options_.state_dir / "snapshot.json", doc.dump() + "\n");
  }
}

void ReviewStore::snapshot() {
  std::unique_lock lock(mu_);
  if (!options_.state_dir) return;
  since_snapshot_ = options_.snapshot_every;  // force on next record
  Json items = Json::array();
  for (const auto& [_, item] : items_) items.push_back(item);
  Json doc{{"last_seq", next_seq_ - 1}, {"next_item_seq", next_item_seq_}, {"items", items}};
  write_file_atomic(*options_.state_dir / "snapshot.json", doc.dump() + "\n");
  since_snapshot_ = 0;
}

EnqueueResult ReviewStore::enqueue(const std::string& queue, std::span<const EnqueueTask> tasks) {
  if (queue.empty()) fail(ErrorCode::kValidation, "queue name is empty");
  std::unique_lock lock(mu_);
  EnqueueResult result;
  const auto ts = now();
  for (const auto& t : tasks) {
    if (t.id.empty()) {
      result.rejected.emplace_back(t.id, "empty id");
      continue;
    }
    if (!t.annotation || trim(*t.annotation).empty()) {
      result.rejected.emplace_back(t.id, "missing VLM answer");
      continue;
    }
    if (t.question.empty()) {
      result.rejected.emplace_back(t.id, "missing question");
      continue;
    }
    if (items_.contains(t.id)) {
      result.duplicates.push_back(t.id);
      continue;
    }
    ReviewItem item;
    item.id = t.id;
    item.queue = queue;
    item.image_ref = t.image_ref;
    item.question = t.question;
    item.annotation = *t.annotation;
    item.seq = next_item_seq_;
    item.created_ms = ts;
    item.updated_ms = ts;
    Event e;
    e.type = "enqueue";
    e.item_id = item.id;
    e.ts_ms = ts;
    e.data = item;
    record(std::move(e));
    ++result.enqueued;
  }
  return result;
}

std::size_t ReviewStore::expire_locked(std::int64_t now_ms) {
  std::size_t released = 0;
  for (auto& [id, item] : items_) {
    if (item.status != Status::kClaimed) continue;
    if (now_ms - item.claimed_ms < options_.claim_timeout.count()) continue;
    Event e;
    e.type = "release";
    e.item_id = id;
    e.version = item.version + 1;
    e.ts_ms = now_ms;
    e.data = {{"labeler", item.labeler.value_or("")}, {"reason", "claim expired"}};
    record(std::move(e));
    ++released;
  }
  return released;
}

std::size_t ReviewStore::expire_claims() {
  std::unique_lock lock(mu_);
  return expire_locked(now());
}

std::optional<ReviewItem> ReviewStore::claim_next(const std::string& queue, const std::string& labeler) {
  if (labeler.empty()) fail(ErrorCode::kValidation, "labeler id is empty");
  std::unique_lock lock(mu_);
  const auto ts = now();
  expire_locked(ts);
  const ReviewItem* oldest = nullptr;
  for (const auto& [_, item] : items_) {
    if (item.queue != queue || item.status != Status::kPending) continue;
    if (!oldest || item.seq < oldest->seq) oldest = &item;
  }
  if (!oldest) return std::nullopt;
  Event e;
  e.type = "claim";
  e.item_id = oldest->id;
  e.version = oldest->version + 1;
  e.ts_ms = ts;
  e.data = {{"labeler", labeler}};
  const auto id = oldest->id;
  record(std::move(e));
  return items_.at(id);
}

ReviewItem ReviewStore::decide(const std::string& item_id, const std::string& labeler, Action action,
                               const std::optional<std::string>& corrected_text, std::int64_t expected_version) {
  if (action == Action::kCorrect && (!corrected_text || trim(*corrected_text).empty())) {
    fail(ErrorCode::kValidation, "correct requires corrected_text");
  }
  if (action != Action::kCorrect && corrected_text) {
    fail(ErrorCode::kValidation, "corrected_text is only allowed with correct");
  }
  std::unique_lock lock(mu_);
  auto it = items_.find(item_id);
  if (it == items_.end()) fail(ErrorCode::kNotFound, "no item '" + item_id + "'");
  const auto& item = it->second;
  if (item.version != expected_version) {
    fail(ErrorCode::kConflict, "item " + item_id + " is at version " + std::to_string(item.version) +
                                   ", expected " + std::to_string(expected_version));
  }
  if (item.status != Status::kClaimed) {
    fail(ErrorCode::kConflict, "item " + item_id + " is " + std::string(to_string(item.status)) + ", not claimed");
  }
  if (item.labeler != labeler) fail(ErrorCode::kConflict, "item " + item_id + " is claimed by another labeler");
  Event e;
  e.type = "decide";
  e.item_id = item_id;
  e.version = item.version + 1;
  e.ts_ms = now();
  e.data = {{"labeler", labeler}, {"action", to_string(action)}};
  if (corrected_text) e.data["corrected_text"] = *corrected_text;
  record(std::move(e));
  return items_.at(item_id);
}

std::optional<ReviewItem> ReviewStore::get(const std::string& item_id) const {
  std::shared_lock lock(mu_);
  auto it = items_.find(item_id);
  if (it == items_.end()) return std::nullopt;
  return it->second;
}

std::vector<ReviewItem> ReviewStore::items(const std::string& queue) const {
  std::shared_lock lock(mu_);
  std::vector<ReviewItem> out;
  for (const auto& [_, item] : items_) {
    if (item.queue == queue) out.push_back(item);
  }
  std::sort(out.begin(), out.end(), [](const ReviewItem& a, const ReviewItem& b) { return a.seq < b.seq; });
  return out;
}

QueueStats ReviewStore::stats(const std::string& queue) const {
  std::shared_lock lock(mu_);
  QueueStats s;
  for (const auto& [_, item] : items_) {
    if (item.queue != queue) continue;
    switch (item.status) {
      case Status::kPending: ++s.pending; break;
      case Status::kClaimed: ++s.claimed; break;
      case Status::kAccepted: ++s.accepted; break;
      case Status::kCorrected: ++s.corrected; break;
      case Status::kDiscarded: ++s.discarded; break;
    }
  }
  return s;
}

std::vector<Event> ReviewStore::history(const std::string& item_id) const {
  std::shared_lock lock(mu_);
  auto it = history_.find(item_id);
  return it == history_.end() ? std::vector<Event>{} : it->second;
}

std::size_t ReviewStore::event_count() const {
  std::shared_lock lock(mu_);
  return events_;
}

std::vector<corpus::ConversationSample> ReviewStore::verified_samples(const std::string& queue) const {
  std::vector<corpus::ConversationSample> out;
  for (const auto& item : items(queue)) {
    if (item.status != Status::kAccepted && item.status != Status::kCorrected) continue;
    corpus::ConversationSample s;
    s.id = item.id;
    if (!item.image_ref.empty()) s.image_refs.push_back(item.image_ref);
    const auto& answer = item.status == Status::kCorrected ? *item.corrected_text : item.annotation;
    s.turns = {{corpus::Role::kUser, item.question}, {corpus::Role::kAssistant, answer}};
    s.dataset = queue;
    s.category = "OCR";
    s.language = corpus::Language::kZh;
    s.provenance = corpus::Provenance::kHumanVerified;
    out.push_back(std::move(s));
  }
  return out;
}

corpus::DatasetManifest ReviewStore::export_verified(const std::string& queue, const std::filesystem::path& out_dir,
                                                     const std::string& name) const {
  const auto samples = verified_samples(queue);
  if (samples.empty()) fail(ErrorCode::kPrecondition, "queue " + queue + " has no accepted or corrected items");
  return corpus::write_dataset<corpus::ConversationSample>(out_dir, name, samples, corpus::Strategy::kVlmHumanCheck);
}

AuthConfig AuthConfig::load(const std::filesystem::path& path) {
  const auto doc = Json::parse(read_file(path));
  AuthConfig auth;
  for (const auto& [labeler, token] : doc.value("labelers", Json::object()).items()) {
    auth.labeler_tokens[token.get<std::string>()] = labeler;
  }
  if (auto it = doc.find("admin_token"); it != doc.end() && !it->is_null()) auth.admin_token = it->get<std::string>();
  return auth;
}

}  // namespace points::review
