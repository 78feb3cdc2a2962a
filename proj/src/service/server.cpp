#include <httplib.h>

#include "common/error.h"
#include "service/service.h"

namespace dscm::service {

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const InferenceService& service) : impl_(std::make_unique<Impl>()) {
  auto adapt = [&service](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    const auto out = service.handle(req.method, req.path, query, req.body);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  impl_->server.Get(R"(/.*)", adapt);
  impl_->server.Post(R"(/.*)", adapt);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw Error(ErrorCode::kIo, "cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void serve(const InferenceService& service, const std::string& host, int port) {
  HttpServer server(service);
  server.bind(host, port);
  server.run();
}

}  // namespace dscm::service
