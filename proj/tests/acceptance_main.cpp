#include <iostream>
#include <string>

#include "ssl/acceptance.hpp"

int main(int argc, char** argv) {
  const std::string suite = argc > 1 ? argv[1] : "all";
  if (!ssl::is_suite(suite)) {
    std::cerr << "unknown suite " << suite << "\n";
    return 1;
  }
  return ssl::verify_suite(suite, std::cout) ? 0 : 1;
}
