#pragma once

#include <stdexcept>
#include <string>

namespace scribvox {

// Malformed or inconsistent external data: bad magic bytes, truncated
// payloads, unknown config keys, unmapped label ids.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Math gone bad at runtime: NaN logits, degenerate normalizers.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace scribvox
