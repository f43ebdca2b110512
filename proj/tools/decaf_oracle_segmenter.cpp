// Label-image segmenter speaking the line protocol on stdin/stdout.

#include <csignal>
#include <iostream>
#include <string>

#include "decaf/oracle_segmenter.hpp"

int main() {
  std::signal(SIGPIPE, SIG_IGN);
  std::ios::sync_with_stdio(false);
  decaf::OracleServer server;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    for (const auto& reply : server.handle(line)) std::cout << reply << '\n';
    std::cout.flush();
    if (!std::cout) return 1;
  }
  return 0;
}
