#pragma once

#include <functional>
#include <memory>
#include <string>

#include "chat_service.hpp"

namespace httplib {
class Server;
}

namespace kgdial {

/// httplib front end for a ChatService. Requests run on httplib's thread pool.
class HttpChatServer {
 public:
  explicit HttpChatServer(ChatService& service);
  ~HttpChatServer();

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  ChatService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace kgdial
