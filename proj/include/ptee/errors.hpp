#pragma once

#include <stdexcept>
#include <string>

namespace ptee {

// Every recoverable failure surfaces as an Error. `category` is a stable
// machine-readable slug; the CLI prints it as part of its single error line.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

// Non-fatal diagnostics go through warn(). Tests may install a handler to
// capture them; passing nullptr restores the default (stderr).
using WarnHandler = void (*)(const std::string&);
void set_warn_handler(WarnHandler handler);
void warn(const std::string& message);

}  // namespace ptee
