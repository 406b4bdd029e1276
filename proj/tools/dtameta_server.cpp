// HTTP service. Env: PORT (default 8080), DATA_DIR, MAX_UPLOAD_BYTES.

#include <cstdlib>
#include <iostream>

#include "dtameta/service.hpp"
#include "httplib.h"

int main() {
  const char* port_env = std::getenv("PORT");
  const int port = port_env && *port_env ? std::atoi(port_env) : 8080;
  dtameta::AnalysisService service(dtameta::ServiceConfig::from_env());
  httplib::Server server;
  service.mount(server);
  std::cerr << "listening on 0.0.0.0:" << port << '\n';
  if (!server.listen("0.0.0.0", port)) {
    std::cerr << "cannot bind port " << port << '\n';
    return 1;
  }
  return 0;
}
