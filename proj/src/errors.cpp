#include "ptee/errors.hpp"

#include <cstdio>

namespace ptee {

namespace {
WarnHandler g_warn_handler = nullptr;
}

void set_warn_handler(WarnHandler handler) { g_warn_handler = handler; }

void warn(const std::string& message) {
  if (g_warn_handler != nullptr) {
    g_warn_handler(message);
    return;
  }
  std::fprintf(stderr, "warning: %s\n", message.c_str());
}

}  // namespace ptee
