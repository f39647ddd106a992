#include "points/model_client.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "points/util.hpp"

namespace points::model {

namespace {

const std::string kEmpty;

void note_max(std::atomic<std::size_t>& max_seen, std::size_t value) {
  auto cur = max_seen.load();
  while (value > cur && !max_seen.compare_exchange_weak(cur, value)) {
  }
}

struct StubRule {
  enum class Match { kEquals, kContains, kRegex, kImage, kAny };
  Match match = Match::kAny;
  std::string pattern;
  std::regex regex;
  std::string response;
  bool fail = false;
};

std::string substitute(std::string text, const ChatRequest& req) {
  auto replace_all = [&](const std::string& from, const std::string& to) {
    for (std::size_t pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
      text.replace(pos, from.size(), to);
    }
  };
  replace_all("{image}", req.image_ref().value_or(""));
  replace_all("{input}", req.last_user_content());
  return text;
}

}  // namespace

const std::string& ChatRequest::last_user_content() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::kUser) return it->content;
  }
  return kEmpty;
}

std::optional<std::string> ChatRequest::image_ref() const {
  for (const auto& m : messages) {
    if (m.image_ref) return m.image_ref;
  }
  return std::nullopt;
}

void validate(const ChatRequest& request) {
  if (request.messages.empty()) fail(ErrorCode::kPrecondition, "chat request has no messages");
  if (request.temperature < 0.0) fail(ErrorCode::kPrecondition, "temperature must be >= 0");
  if (request.max_tokens <= 0) fail(ErrorCode::kPrecondition, "max_tokens must be positive");
  for (const auto& m : request.messages) {
    if (m.image_ref && m.role != Role::kUser) {
      fail(ErrorCode::kPrecondition, "image_ref is only allowed on user messages");
    }
  }
}

Json to_json(const ChatRequest& request) {
  Json msgs = Json::array();
  for (const auto& m : request.messages) {
    Json jm{{"role", corpus::to_string(m.role)}, {"content", m.content}};
    if (m.image_ref) jm["image_ref"] = *m.image_ref;
    msgs.push_back(std::move(jm));
  }
  return Json{{"messages", std::move(msgs)},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens},
              {"model_id", request.model_id}};
}

std::string cache_key(const ChatRequest& request) { return sha256_hex(to_json(request).dump()); }

StubBackend::StubBackend(Handler handler, std::chrono::microseconds delay)
    : handler_(std::move(handler)), delay_(delay) {}

std::shared_ptr<StubBackend> StubBackend::from_table(std::unordered_map<std::string, std::string> table) {
  return std::make_shared<StubBackend>([table = std::move(table)](const ChatRequest& req) -> std::string {
    if (auto img = req.image_ref()) {
      if (auto it = table.find(*img); it != table.end()) return it->second;
    }
    if (auto it = table.find(req.last_user_content()); it != table.end()) return it->second;
    fail(ErrorCode::kBackend, "stub has no entry for request");
  });
}

std::shared_ptr<StubBackend> StubBackend::from_json(const Json& doc) {
  std::vector<StubRule> rules;
  for (const auto& jr : doc.value("rules", Json::array())) {
    StubRule r;
    if (jr.contains("equals")) {
      r.match = StubRule::Match::kEquals;
      r.pattern = jr["equals"].get<std::string>();
    } else if (jr.contains("contains")) {
      r.match = StubRule::Match::kContains;
      r.pattern = jr["contains"].get<std::string>();
    } else if (jr.contains("regex")) {
      r.match = StubRule::Match::kRegex;
      r.pattern = jr["regex"].get<std::string>();
      r.regex = std::regex(r.pattern);
    } else if (jr.contains("image")) {
      r.match = StubRule::Match::kImage;
      r.pattern = jr["image"].get<std::string>();
    }
    r.response = jr.value("response", std::string());
    r.fail = jr.value("fail", false);
    rules.push_back(std::move(r));
  }
  std::optional<std::string> fallback;
  if (doc.contains("default")) fallback = doc["default"].get<std::string>();
  const bool echo = doc.value("mode", std::string()) == "echo";

  return std::make_shared<StubBackend>([rules = std::move(rules), fallback, echo](const ChatRequest& req) {
    const auto& input = req.last_user_content();
    const auto image = req.image_ref();
    for (const auto& r : rules) {
      std::string out;
      bool hit = false;
      switch (r.match) {
        case StubRule::Match::kEquals: hit = input == r.pattern; break;
        case StubRule::Match::kContains: hit = input.find(r.pattern) != std::string::npos; break;
        case StubRule::Match::kImage: hit = image && *image == r.pattern; break;
        case StubRule::Match::kAny: hit = true; break;
        case StubRule::Match::kRegex: {
          std::smatch m;
          if (std::regex_search(input, m, r.regex)) {
            hit = true;
            out = m.format(r.response);
          }
          break;
        }
      }
      if (!hit) continue;
      if (r.fail) fail(ErrorCode::kBackend, "stub rule configured to fail");
      return r.match == StubRule::Match::kRegex ? out : substitute(r.response, req);
    }
    if (echo) return input;
    if (fallback) return substitute(*fallback, req);
    fail(ErrorCode::kBackend, "stub has no rule for request");
  });
}

std::string StubBackend::send(const ChatRequest& request) {
  ++calls_;
  const auto now = ++in_flight_;
  note_max(max_seen_, now);
  struct Leave {
    std::atomic<std::size_t>& n;
    ~Leave() { --n; }
  } leave{in_flight_};
  if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
  return handler_(request);
}

HttpBackend::HttpBackend(std::string endpoint, std::string api_key_env, std::chrono::seconds timeout)
    : api_key_env_(std::move(api_key_env)), timeout_(timeout) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) fail(ErrorCode::kValidation, "endpoint must be a URL: " + endpoint);
  const auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = endpoint;
    path_ = "/v1/chat/completions";
  } else {
    scheme_host_port_ = endpoint.substr(0, path_start);
    path_ = endpoint.substr(path_start);
  }
}

std::string HttpBackend::send(const ChatRequest& request) {
  Json msgs = Json::array();
  for (const auto& m : request.messages) {
    if (m.image_ref) {
      msgs.push_back({{"role", corpus::to_string(m.role)},
                      {"content", Json::array({Json{{"type", "image_url"}, {"image_url", {{"url", *m.image_ref}}}},
                                               Json{{"type", "text"}, {"text", m.content}}})}});
    } else {
      msgs.push_back({{"role", corpus::to_string(m.role)}, {"content", m.content}});
    }
  }
  const Json body{{"model", request.model_id},
                  {"messages", msgs},
                  {"temperature", request.temperature},
                  {"max_tokens", request.max_tokens}};

  httplib::Client cli(scheme_host_port_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (const char* key = std::getenv(api_key_env_.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = cli.Post(path_, headers, body.dump(), "application/json");
  if (!res) fail(ErrorCode::kBackend, "request to " + scheme_host_port_ + " failed: " + httplib::to_string(res.error()));
  if (res->status == 401 || res->status == 403) {
    fail(ErrorCode::kAuth, "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
  }
  if (res->status == 429 || res->status >= 500) {
    fail(ErrorCode::kBackend, "endpoint returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    fail(ErrorCode::kRefused, "endpoint refused request (HTTP " + std::to_string(res->status) + "): " + res->body);
  }
  try {
    const auto doc = Json::parse(res->body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kBackend, std::string("unparseable completion payload: ") + e.what());
  }
}

ModelClient::ModelClient(std::shared_ptr<Backend> backend, ClientConfig config)
    : backend_(std::move(backend)),
      config_(std::move(config)),
      in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight))) {
  if (!backend_) fail(ErrorCode::kPrecondition, "model client needs a backend");
  if (config_.max_in_flight < 1) fail(ErrorCode::kValidation, "max_in_flight must be >= 1");
  if (config_.retry.max_attempts < 1) fail(ErrorCode::kValidation, "retry.max_attempts must be >= 1");
  if (config_.cache_dir) std::filesystem::create_directories(*config_.cache_dir);
}

std::optional<std::string> ModelClient::cache_lookup(const std::string& key) {
  if (!config_.cache_dir) return std::nullopt;
  std::lock_guard lock(cache_mu_);
  if (auto it = memory_cache_.find(key); it != memory_cache_.end()) return it->second;
  const auto path = *config_.cache_dir / (key + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  auto text = Json::parse(read_file(path)).at("response").get<std::string>();
  memory_cache_.emplace(key, text);
  return text;
}

void ModelClient::cache_store(const std::string& key, const std::string& text) {
  if (!config_.cache_dir) return;
  std::lock_guard lock(cache_mu_);
  memory_cache_[key] = text;
  write_file_atomic(*config_.cache_dir / (key + ".json"), Json{{"response", text}}.dump() + "\n");
}

std::string ModelClient::call_with_retry(const ChatRequest& request) {
  const auto& policy = config_.retry;
  for (int attempt = 1;; ++attempt) {
    ++attempts_;
    try {
      in_flight_.acquire();
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{in_flight_};
      return backend_->send(request);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBackend || attempt >= policy.max_attempts) {
        if (e.code() == ErrorCode::kBackend) {
          fail(ErrorCode::kBackend, "giving up after " + std::to_string(attempt) + " attempts: " + e.what());
        }
        throw;
      }
    }
    if (!policy.backoff.empty()) {
      const auto idx = std::min<std::size_t>(static_cast<std::size_t>(attempt - 1), policy.backoff.size() - 1);
      std::this_thread::sleep_for(policy.backoff[idx]);
    }
  }
}

std::string ModelClient::complete(const ChatRequest& request) {
  validate(request);
  ++requests_;
  const auto key = cache_key(request);
  if (auto hit = cache_lookup(key)) {
    ++cache_hits_;
    return *hit;
  }
  try {
    auto text = call_with_retry(request);
    cache_store(key, text);
    return text;
  } catch (...) {
    ++failures_;
    throw;
  }
}

std::vector<CompletionResult> ModelClient::complete_batch(std::span<const ChatRequest> requests) {
  if (requests.empty()) fail(ErrorCode::kPrecondition, "complete_batch needs at least one request");
  std::vector<CompletionResult> results(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        results[i].text = complete(requests[i]);
      } catch (const Error& e) {
        results[i].error = e;
      } catch (const std::exception& e) {
        results[i].error = Error(ErrorCode::kBackend, e.what());
      }
    }
  };
  const auto n_workers = std::min(requests.size(), config_.max_in_flight);
  std::vector<std::jthread> pool;
  pool.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  pool.clear();
  return results;
}

ChatRequest ModelClient::make_request(std::vector<ChatMessage> messages) const {
  ChatRequest req;
  req.messages = std::move(messages);
  req.model_id = config_.model_id;
  req.temperature = config_.temperature;
  req.max_tokens = config_.max_tokens;
  return req;
}

ClientStats ModelClient::stats() const {
  return {requests_.load(), cache_hits_.load(), attempts_.load(), failures_.load()};
}

ClientConfig parse_client_config(const Json& doc, const std::filesystem::path& base_dir) {
  ClientConfig c;
  c.endpoint = doc.value("endpoint", std::string());
  c.api_key_env = doc.value("api_key_env", c.api_key_env);
  const auto in_flight = doc.value("max_in_flight", static_cast<long long>(c.max_in_flight));
  if (in_flight < 1) fail(ErrorCode::kValidation, "max_in_flight must be >= 1");
  c.max_in_flight = static_cast<std::size_t>(in_flight);
  if (auto it = doc.find("cache_dir"); it != doc.end() && !it->is_null()) {
    std::filesystem::path p = it->get<std::string>();
    c.cache_dir = p.is_absolute() ? p : base_dir / p;
  }
  if (auto it = doc.find("retry"); it != doc.end()) {
    c.retry.max_attempts = it->value("max_attempts", c.retry.max_attempts);
    if (it->contains("backoff_ms")) {
      c.retry.backoff.clear();
      for (auto ms : (*it)["backoff_ms"]) c.retry.backoff.emplace_back(ms.get<long long>());
    }
  }
  c.model_id = doc.value("model_id", c.model_id);
  c.temperature = doc.value("temperature", c.temperature);
  c.max_tokens = doc.value("max_tokens", c.max_tokens);
  return c;
}

std::shared_ptr<ModelClient> make_client(const Json& doc, const std::filesystem::path& base_dir) {
  auto config = parse_client_config(doc, base_dir);
  const auto kind = doc.value("backend", std::string("http"));
  std::shared_ptr<Backend> backend;
  if (kind == "stub") {
    backend = StubBackend::from_json(doc);
  } else if (kind == "http") {
    if (config.endpoint.empty()) fail(ErrorCode::kValidation, "http backend needs an endpoint");
    backend = std::make_shared<HttpBackend>(config.endpoint, config.api_key_env);
  } else {
    fail(ErrorCode::kValidation, "unknown backend '" + kind + "'");
  }
  return std::make_shared<ModelClient>(std::move(backend), std::move(config));
}

std::shared_ptr<ModelClient> load_client(const std::filesystem::path& config_path) {
  const auto doc = Json::parse(read_file(config_path));
  return make_client(doc, std::filesystem::absolute(config_path).parent_path());
}

}  // namespace points::model
