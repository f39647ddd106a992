#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "points/corpus.hpp"
#include "points/error.hpp"

namespace points::model {

using Json = nlohmann::json;
using corpus::Role;

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;
  std::optional<std::string> image_ref;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string model_id;

  // Convenience accessors used by stubs and judges.
  const std::string& last_user_content() const;
  std::optional<std::string> image_ref() const;
};

void validate(const ChatRequest& request);
Json to_json(const ChatRequest& request);

// Content hash over every request field.
std::string cache_key(const ChatRequest& request);

struct RetryPolicy {
  int max_attempts = 3;
  std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(200), std::chrono::milliseconds(1000)};
};

struct ClientConfig {
  std::string endpoint;
  std::string api_key_env = "POINTS_API_KEY";
  std::size_t max_in_flight = 4;
  std::optional<std::filesystem::path> cache_dir;
  RetryPolicy retry;
  std::string model_id = "stub";
  double temperature = 0.0;
  int max_tokens = 1024;
};

/// Transport behind a ModelClient. Implementations throw Error(kBackend) for
/// retryable failures; kAuth and kRefused are returned to the caller as-is.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string send(const ChatRequest& request) = 0;
};

/// Deterministic in-process backend. Counts calls and tracks the largest
/// number of concurrent calls it has observed.
class StubBackend : public Backend {
 public:
  using Handler = std::function<std::string(const ChatRequest&)>;

  explicit StubBackend(Handler handler, std::chrono::microseconds delay = {});

  // Exact-match table on the last user message (or image ref, when the
  // request carries one and the table has an entry for it).
  static std::shared_ptr<StubBackend> from_table(std::unordered_map<std::string, std::string> table);

  // Rule-based stub configured from a JSON document (see README).
  static std::shared_ptr<StubBackend> from_json(const Json& doc);

  std::string send(const ChatRequest& request) override;

  std::size_t calls() const { return calls_.load(); }
  std::size_t max_in_flight_observed() const { return max_seen_.load(); }

 private:
  Handler handler_;
  std::chrono::microseconds delay_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_seen_{0};
};

/// OpenAI-compatible chat-completion endpoint over plain HTTP.
class HttpBackend : public Backend {
 public:
  HttpBackend(std::string endpoint, std::string api_key_env, std::chrono::seconds timeout = std::chrono::seconds(120));

  std::string send(const ChatRequest& request) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_env_;
  std::chrono::seconds timeout_;
};

struct CompletionResult {
  std::optional<std::string> text;
  std::optional<Error> error;

  bool ok() const { return text.has_value(); }
};

struct ClientStats {
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t backend_attempts = 0;
  std::size_t failures = 0;
};

/// Shared handle used by every pipeline stage. Thread-safe; the in-flight
/// semaphore bounds concurrent backend calls across all users of the handle.
class ModelClient {
 public:
  ModelClient(std::shared_ptr<Backend> backend, ClientConfig config = {});

  std::string complete(const ChatRequest& request);

  // Order-preserving; per-item errors are returned in place.
  std::vector<CompletionResult> complete_batch(std::span<const ChatRequest> requests);

  // Builds a request with this client's model id and decoding parameters.
  ChatRequest make_request(std::vector<ChatMessage> messages) const;

  ClientStats stats() const;
  const ClientConfig& config() const { return config_; }

 private:
  std::optional<std::string> cache_lookup(const std::string& key);
  void cache_store(const std::string& key, const std::string& text);
  std::string call_with_retry(const ChatRequest& request);

  std::shared_ptr<Backend> backend_;
  ClientConfig config_;
  std::counting_semaphore<> in_flight_;
  mutable std::mutex cache_mu_;
  std::unordered_map<std::string, std::string> memory_cache_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> attempts_{0};
  std::atomic<std::size_t> failures_{0};
};

ClientConfig parse_client_config(const Json& doc, const std::filesystem::path& base_dir);

// Builds a client from a config document: {"backend": "http"|"stub", ...}.
std::shared_ptr<ModelClient> make_client(const Json& doc, const std::filesystem::path& base_dir);
std::shared_ptr<ModelClient> load_client(const std::filesystem::path& config_path);

}  // namespace points::model
