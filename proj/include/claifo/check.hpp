#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace claifo {

// Thrown when a caller violates an operation's precondition.
struct input_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when a computation produces an invalid result (non-finite loss,
// corrupt file, dimension mismatch discovered mid-run).
struct runtime_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void append(std::ostringstream&) {}
template <typename A, typename... Rest>
void append(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  append(os, rest...);
}
}  // namespace detail

template <typename... Args>
void require(bool cond, const Args&... msg) {
  if (!cond) {
    std::ostringstream os;
    detail::append(os, msg...);
    throw input_error(os.str());
  }
}

template <typename... Args>
void ensure(bool cond, const Args&... msg) {
  if (!cond) {
    std::ostringstream os;
    detail::append(os, msg...);
    throw runtime_failure(os.str());
  }
}

}  // namespace claifo
