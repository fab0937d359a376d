#pragma once

#include <stdexcept>
#include <string>

namespace paratool {

// Exit-code categories for the command-line tool:
//   2 usage, 3 missing dependency, 4 data, 5 internal.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DependencyError : std::runtime_error {
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace paratool
