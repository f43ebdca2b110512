#pragma once

#include <stdexcept>
#include <string>

namespace decaf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent file contents (dumps, manifests, maps, results).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A value or shape violates an operation's precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Failure talking to, or reported by, the external segmenter.
class SegmenterError : public Error {
 public:
  SegmenterError(std::string code, const std::string& message)
      : Error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Raised by Otsu thresholding when fewer than two histogram bins are occupied.
class DegenerateHistogram : public Error {
 public:
  DegenerateHistogram() : Error("degenerate histogram") {}
};

}  // namespace decaf
