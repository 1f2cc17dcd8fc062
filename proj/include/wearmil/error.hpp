#pragma once

#include <stdexcept>
#include <string>

namespace wearmil {

// Library-wide error type. Everything that can fail throws this with a
// human-readable message carrying location context (file/row) where known.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace wearmil
