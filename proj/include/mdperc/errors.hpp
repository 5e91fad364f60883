#pragma once

#include <stdexcept>
#include <string>

namespace mdperc {

// Precondition of an operation does not hold (region mismatch, site outside
// a window, degenerate parameters).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// A computation would exceed a configured budget (ring count, margin cap,
// enumeration size).
class ResourceError : public std::runtime_error {
 public:
  explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace mdperc
