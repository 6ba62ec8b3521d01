#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace fedfda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Single exception type for every precondition or runtime failure in the
// library. Messages are deterministic so the CLI can surface them verbatim.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Parts>
[[noreturn]] void fail(Parts&&... parts) {
  std::ostringstream oss;
  (oss << ... << std::forward<Parts>(parts));
  throw Error(oss.str());
}

template <typename... Parts>
void require(bool condition, Parts&&... parts) {
  if (!condition) {
    fail(std::forward<Parts>(parts)...);
  }
}

}  // namespace detail

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace fedfda
