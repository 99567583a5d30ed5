#pragma once

#include <memory>
#include <string>

#include "insectup/error.hpp"
#include "insectup/service/platform.hpp"

namespace httplib {
class Server;
}

namespace insectup::service {

/// HTTP status for an error code.
int http_status(ErrorCode code);

/// The /api/v1 JSON API over a Platform.
class ApiServer {
 public:
  explicit ApiServer(Platform& platform);
  ~ApiServer();

  /// Binds to host:port (port 0 picks a free one) and returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocks.
  bool run();
  void stop();

  httplib::Server& server();

 private:
  void routes();

  Platform& platform_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace insectup::service
