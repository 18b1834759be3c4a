#include "http_server.hpp"

#include <httplib.h>

#include "kgdial/error.hpp"

namespace kgdial {

HttpChatServer::HttpChatServer(ChatService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse r = service_.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json; charset=utf-8");
  };
  server_->Post(R"(/session(/.*)?)", dispatch);
  server_->Get(R"(/session(/.*)?)", dispatch);
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) res.set_content(error_body(httplib::status_message(res.status)).dump(), "application/json; charset=utf-8");
  });
}

HttpChatServer::~HttpChatServer() { stop(); }

int HttpChatServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpChatServer::listen() { server_->listen_after_bind(); }

void HttpChatServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace kgdial
