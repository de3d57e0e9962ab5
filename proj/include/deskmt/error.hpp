#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace deskmt {

// All library errors carry a short machine-readable category (stable, used by
// the CLI for its exit line) plus a human-readable detail message.
class Error : public std::runtime_error {
public:
  Error(std::string category, const std::string& detail)
      : std::runtime_error(detail), category_(std::move(category)) {}

  const std::string& category() const { return category_; }

private:
  std::string category_;
};

[[noreturn]] inline void fail(const std::string& category, const std::string& detail) {
  throw Error(category, detail);
}

inline void require(bool cond, const std::string& category, const std::string& detail) {
  if (!cond) fail(category, detail);
}

}  // namespace deskmt
