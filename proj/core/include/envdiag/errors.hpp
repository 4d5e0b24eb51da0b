#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace envdiag {

enum class ErrorCode {
  InvalidArgument,
  TooFewRows,
  RankDeficient,
  BadGrouping,
  NonConvergence,
  Separation,
  LeverageOne,
  DegenerateX,
  OutOfRange,
  AlphaTooSmall,
  TooManyRefitFailures,
  MissingColumn,
  NonNumericCell,
  EmptyFile,
  Io,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (the CLI, the simulation harness) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace envdiag
