#include "points/model_client.hpp"

#include <thread>

#include "httplib.h"
#include "test_support.hpp"

using namespace points;
using namespace points::model;
using points::test::TempDir;

namespace {

ChatRequest user(const ModelClient& c, const std::string& text, std::optional<std::string> image = {}) {
  return c.make_request({{Role::kUser, text, std::move(image)}});
}

}  // namespace

TEST_CASE("stub table answers by prompt") {
  auto stub = StubBackend::from_table({{"P", "OK"}});
  ModelClient client(stub, test::fast_config());
  CHECK(client.complete(user(client, "P")) == "OK");
  CHECK(stub->calls() == 1);
  CHECK(test::code_of([&] { client.complete(user(client, "other")); }) == ErrorCode::kBackend);
}

TEST_CASE("cache serves repeated requests without backend calls") {
  TempDir dir;
  auto stub = StubBackend::from_table({{"P", "OK"}});
  auto config = test::fast_config();
  config.cache_dir = dir / "cache";
  {
    ModelClient client(stub, config);
    CHECK(client.complete(user(client, "P")) == "OK");
    CHECK(client.complete(user(client, "P")) == "OK");
    CHECK(stub->calls() == 1);
    CHECK(client.stats().cache_hits == 1);
  }
  // A fresh client reads the on-disk cache.
  ModelClient again(stub, config);
  CHECK(again.complete(user(again, "P")) == "OK");
  CHECK(stub->calls() == 1);

  SUBCASE("cache key covers every request field") {
    auto a = user(again, "P");
    auto b = a;
    b.temperature = 0.7;
    CHECK(cache_key(a) != cache_key(b));
    b = a;
    b.messages[0].image_ref = "img";
    CHECK(cache_key(a) != cache_key(b));
    CHECK(cache_key(a) == cache_key(user(again, "P")));
  }
}

TEST_CASE("retries stop after the configured attempts") {
  SUBCASE("unreachable endpoint") {
    auto config = test::fast_config();
    config.retry.max_attempts = 3;
    ModelClient client(std::make_shared<HttpBackend>("http://127.0.0.1:1/v1/chat/completions", "POINTS_TEST_KEY",
                                                     std::chrono::seconds(2)),
                       config);
    const auto msg = test::message_of([&] { client.complete(user(client, "hi")); });
    CHECK(msg.find("after 3 attempts") != std::string::npos);
    CHECK(client.stats().backend_attempts == 3);
    CHECK(client.stats().failures == 1);
  }
  SUBCASE("transient failure recovers") {
    std::atomic<int> n{0};
    auto stub = std::make_shared<StubBackend>([&](const ChatRequest&) -> std::string {
      if (n++ < 2) fail(ErrorCode::kBackend, "flaky");
      return "fine";
    });
    ModelClient client(stub, test::fast_config());
    CHECK(client.complete(user(client, "x")) == "fine");
    CHECK(stub->calls() == 3);
  }
  SUBCASE("auth failures are not retried") {
    auto stub = std::make_shared<StubBackend>(
        [](const ChatRequest&) -> std::string { fail(ErrorCode::kAuth, "bad key"); });
    ModelClient client(stub, test::fast_config());
    CHECK(test::code_of([&] { client.complete(user(client, "x")); }) == ErrorCode::kAuth);
    CHECK(stub->calls() == 1);
  }
}

TEST_CASE("complete_batch preserves order and bounds concurrency") {
  auto stub = std::make_shared<StubBackend>([](const ChatRequest& r) { return "echo:" + r.last_user_content(); },
                                            std::chrono::milliseconds(20));
  ModelClient client(stub, test::fast_config(2));
  std::vector<ChatRequest> reqs;
  for (int i = 0; i < 5; ++i) reqs.push_back(user(client, std::to_string(i)));
  const auto out = client.complete_batch(reqs);
  REQUIRE(out.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(*out[i].text == "echo:" + std::to_string(i));
  CHECK(stub->max_in_flight_observed() <= 2);
  CHECK(stub->max_in_flight_observed() >= 1);
}

TEST_CASE("complete_batch reports per-item errors in place") {
  auto stub = std::make_shared<StubBackend>([](const ChatRequest& r) -> std::string {
    if (r.last_user_content() == "bad") fail(ErrorCode::kRefused, "no");
    return "ok";
  });
  ModelClient client(stub, test::fast_config());
  std::vector<ChatRequest> reqs{user(client, "a"), user(client, "bad"), user(client, "c")};
  const auto out = client.complete_batch(reqs);
  REQUIRE(out.size() == 3);
  CHECK(out[0].ok());
  CHECK_FALSE(out[1].ok());
  CHECK(out[1].error->code() == ErrorCode::kRefused);
  CHECK(out[2].ok());
  CHECK(test::code_of([&] { client.complete_batch({}); }) == ErrorCode::kPrecondition);
}

TEST_CASE("request validation") {
  ChatRequest empty;
  CHECK(test::code_of([&] { validate(empty); }) == ErrorCode::kPrecondition);
  ChatRequest r;
  r.messages = {{Role::kUser, "x", std::nullopt}};
  r.temperature = -1;
  CHECK_THROWS_AS(validate(r), Error);
}

TEST_CASE("JSON-configured stub") {
  TempDir dir;
  const Json doc = {{"backend", "stub"},
                    {"rules",
                     {{{"image", "img1"}, {"response", "a red car"}},
                      {{"equals", "ping"}, {"response", "pong"}},
                      {{"regex", "^add (\\w+)$"}, {"response", "added $1"}},
                      {{"contains", "boom"}, {"fail", true}}}},
                    {"default", "said: {input}"},
                    {"max_in_flight", 3}};
  auto client = make_client(doc, dir.path());
  CHECK(client->config().max_in_flight == 3);
  CHECK(client->complete(user(*client, "describe", "img1")) == "a red car");
  CHECK(client->complete(user(*client, "ping")) == "pong");
  CHECK(client->complete(user(*client, "add milk")) == "added milk");
  CHECK(client->complete(user(*client, "hello")) == "said: hello");
  CHECK(test::code_of([&] { client->complete(user(*client, "boom")); }) == ErrorCode::kBackend);

  CHECK(test::code_of([&] { make_client({{"backend", "carrier-pigeon"}}, dir.path()); }) == ErrorCode::kValidation);
  CHECK(test::code_of([&] { make_client({{"backend", "http"}}, dir.path()); }) == ErrorCode::kValidation);
  CHECK(test::code_of([&] { make_client({{"backend", "stub"}, {"max_in_flight", 0}}, dir.path()); }) ==
        ErrorCode::kValidation);
}

TEST_CASE("HTTP backend speaks the chat-completions protocol") {
  httplib::Server server;
  Json seen;
  std::string auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = Json::parse(req.body);
    auth = req.get_header_value("Authorization");
    const auto text = seen["messages"].back()["content"];
    if (text.is_string() && text == "deny") {
      res.status = 401;
      return;
    }
    if (text.is_string() && text == "refuse") {
      res.status = 400;
      return;
    }
    res.set_content(Json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "hello back"}}}}}}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("POINTS_TEST_KEY", "sekrit", 1);
  const auto endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  ModelClient client(std::make_shared<HttpBackend>(endpoint, "POINTS_TEST_KEY"), test::fast_config());
  CHECK(client.complete(user(client, "look", "https://example.com/a.png")) == "hello back");
  CHECK(auth == "Bearer sekrit");
  CHECK(seen["model"] == "stub");
  CHECK(seen["temperature"] == 0.0);
  const auto& content = seen["messages"][0]["content"];
  REQUIRE(content.is_array());
  CHECK(content[0]["image_url"]["url"] == "https://example.com/a.png");
  CHECK(content[1]["text"] == "look");

  CHECK(test::code_of([&] { client.complete(user(client, "deny")); }) == ErrorCode::kAuth);
  CHECK(test::code_of([&] { client.complete(user(client, "refuse")); }) == ErrorCode::kRefused);
  server.stop();
  th.join();
}
