#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace llmseg {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  Io,
  Format,          // malformed tensor file, PNG, JSON
  UnsupportedDtype,
  NonFinite,
  Transport,
  GenerationIncomplete,
  DegenerateDescriptor,
  Config,
  MissingInput,
};

std::string_view to_string(ErrorCode code);

/// Base error for everything thrown by llmseg. The code is stable and is what
/// tests and the CLI dispatch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Thrown when an LLM response yields fewer distinct names than requested.
/// Carries whatever could be recovered.
class GenerationIncomplete : public Error {
 public:
  GenerationIncomplete(std::size_t requested, std::vector<std::string> partial);

  std::size_t requested() const noexcept { return requested_; }
  const std::vector<std::string>& partial() const noexcept { return partial_; }

 private:
  std::size_t requested_;
  std::vector<std::string> partial_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace llmseg
