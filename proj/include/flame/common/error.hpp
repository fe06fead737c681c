// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace flame {

// Base for every error raised by the library. `code()` is a stable,
// machine-readable identifier (e.g. "SchemaError") that also travels over
// the REST API.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define FLAME_DEFINE_ERROR(Name)                                   \
  class Name : public ::flame::Error {                             \
   public:                                                         \
    explicit Name(const std::string& message)                      \
        : ::flame::Error(#Name, message) {}                        \
  }

}  // namespace flame
