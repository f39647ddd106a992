#include "httplib.h"
#include "points/error.hpp"
#include "points/review.hpp"

namespace points::review {

namespace {

constexpr auto kJson = "application/json";

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kAuth: return 401;
    default: return 422;
  }
}

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, Json{{"error", message}});
}

struct Principal {
  bool admin = false;
  std::optional<std::string> labeler;
};

}  // namespace

ReviewServer::ReviewServer(ReviewStore& store, AuthConfig auth)
    : store_(store), auth_(std::move(auth)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind_to_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool ReviewServer::bind(const std::string& host, int port) { return server_->bind_to_port(host, port); }

bool ReviewServer::listen_after_bind() { return server_->listen_after_bind(); }

void ReviewServer::stop() {
  if (server_) server_->stop();
}

void ReviewServer::wait_until_ready() const { server_->wait_until_ready(); }

void ReviewServer::install_routes() {
  auto& srv = *server_;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  // Resolves the bearer token; writes a 401 and returns nullopt on failure.
  auto authenticate = [this](const httplib::Request& req, httplib::Response& res) -> std::optional<Principal> {
    if (!auth_.enabled()) return Principal{.admin = true};
    const auto header = req.get_header_value("Authorization");
    constexpr std::string_view kBearer = "Bearer ";
    if (header.rfind(kBearer, 0) != 0) {
      reply_error(res, 401, "missing bearer token");
      return std::nullopt;
    }
    const auto token = header.substr(kBearer.size());
    if (auth_.admin_token && token == *auth_.admin_token) return Principal{.admin = true};
    if (auto it = auth_.labeler_tokens.find(token); it != auth_.labeler_tokens.end()) {
      return Principal{.admin = !auth_.admin_token.has_value(), .labeler = it->second};
    }
    reply_error(res, 401, "unknown token");
    return std::nullopt;
  };

  auto guarded = [](auto&& fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        reply_error(res, http_status(e.code()), e.what());
      } catch (const Json::exception& e) {
        reply_error(res, 422, std::string("invalid payload: ") + e.what());
      } catch (const std::exception& e) {
        reply_error(res, 500, e.what());
      }
    };
  };

  srv.Post(R"(/queues/([^/]+)/items)", guarded([this, authenticate](const httplib::Request& req,
                                                                      httplib::Response& res) {
             auto who = authenticate(req, res);
             if (!who) return;
             if (!who->admin) return reply_error(res, 403, "enqueue requires the admin token");
             const auto body = Json::parse(req.body);
             const auto& list = body.is_array() ? body : body.at("items");
             std::vector<EnqueueTask> tasks;
             for (const auto& j : list) {
               EnqueueTask t;
               t.id = j.value("id", std::string());
               t.image_ref = j.value("image_ref", std::string());
               t.question = j.value("question", std::string());
               for (const char* key : {"vlm_answer", "annotation"}) {
                 if (auto it = j.find(key); it != j.end() && it->is_string()) t.annotation = it->get<std::string>();
               }
               tasks.push_back(std::move(t));
             }
             const auto result = store_.enqueue(req.matches[1], tasks);
             Json rejected = Json::array();
             for (const auto& [id, reason] : result.rejected) rejected.push_back({{"id", id}, {"reason", reason}});
             reply(res, 200,
                   {{"enqueued", result.enqueued}, {"duplicates", result.duplicates}, {"rejected", rejected}});
           }));

  srv.Get(R"(/queues/([^/]+)/next)", guarded([this, authenticate](const httplib::Request& req,
                                                                    httplib::Response& res) {
            auto who = authenticate(req, res);
            if (!who) return;
            const auto labeler = req.get_param_value("labeler");
            if (labeler.empty()) return reply_error(res, 422, "labeler query parameter is required");
            if (auth_.enabled() && who->labeler != labeler) {
              return reply_error(res, 403, "token does not belong to labeler " + labeler);
            }
            auto item = store_.claim_next(req.matches[1], labeler);
            if (!item) {
              res.status = 204;
              return;
            }
            reply(res, 200, *item);
          }));

  srv.Post(R"(/items/([^/]+)/decision)", guarded([this, authenticate](const httplib::Request& req,
                                                                        httplib::Response& res) {
             auto who = authenticate(req, res);
             if (!who) return;
             const auto body = Json::parse(req.body);
             std::string labeler;
             if (auth_.enabled()) {
               if (!who->labeler) return reply_error(res, 403, "decisions must be made with a labeler token");
               labeler = *who->labeler;
             } else {
               labeler = body.value("labeler", std::string());
               if (labeler.empty()) return reply_error(res, 422, "labeler is required");
             }
             if (!body.contains("expected_version")) return reply_error(res, 422, "expected_version is required");
             std::optional<std::string> corrected;
             if (auto it = body.find("corrected_text"); it != body.end() && !it->is_null()) {
               corrected = it->get<std::string>();
             }
             const auto item = store_.decide(req.matches[1], labeler, parse_action(body.at("action").get<std::string>()),
                                             corrected, body.at("expected_version").get<std::int64_t>());
             reply(res, 200, item);
           }));

  srv.Get(R"(/items/([^/]+))", guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
            if (!authenticate(req, res)) return;
            auto item = store_.get(req.matches[1]);
            if (!item) return reply_error(res, 404, "no item " + std::string(req.matches[1]));
            reply(res, 200, *item);
          }));

  srv.Get(R"(/queues/([^/]+)/stats)", guarded([this, authenticate](const httplib::Request& req,
                                                                     httplib::Response& res) {
            if (!authenticate(req, res)) return;
            reply(res, 200, store_.stats(req.matches[1]).to_json());
          }));

  srv.Get(R"(/queues/([^/]+)/export)", guarded([this, authenticate](const httplib::Request& req,
                                                                      httplib::Response& res) {
            auto who = authenticate(req, res);
            if (!who) return;
            if (!who->admin) return reply_error(res, 403, "export requires the admin token");
            const auto format = req.has_param("format") ? req.get_param_value("format") : std::string("manifest");
            if (format != "manifest") return reply_error(res, 422, "unsupported export format '" + format + "'");
            const std::string queue = req.matches[1];
            const auto samples = store_.verified_samples(queue);
            if (samples.empty()) return reply_error(res, 422, "queue " + queue + " has nothing to export");
            Json manifest{{"name", queue},
                          {"kind", "conversation"},
                          {"strategy", corpus::to_string(corpus::Strategy::kVlmHumanCheck)},
                          {"counts", samples.size()},
                          {"fixed_answers", false}};
            reply(res, 200, {{"manifest", manifest}, {"records", samples}});
          }));
}

}  // namespace points::review
