#include "llmseg/error.hpp"

#include <fmt/format.h>

namespace llmseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::Io: return "io";
    case ErrorCode::Format: return "format";
    case ErrorCode::UnsupportedDtype: return "unsupported-dtype";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::Transport: return "transport";
    case ErrorCode::GenerationIncomplete: return "generation-incomplete";
    case ErrorCode::DegenerateDescriptor: return "degenerate-descriptor";
    case ErrorCode::Config: return "config";
    case ErrorCode::MissingInput: return "missing-input";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(fmt::format("[{}] {}", to_string(code), message)), code_(code) {}

GenerationIncomplete::GenerationIncomplete(std::size_t requested, std::vector<std::string> partial)
    : Error(ErrorCode::GenerationIncomplete,
            fmt::format("expected {} distinct subclasses, recovered {}", requested, partial.size())),
      requested_(requested),
      partial_(std::move(partial)) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace llmseg
