#pragma once

#include <stdexcept>
#include <string>

namespace saot {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// User-supplied data (configs, manifests, boxes) failed validation.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem-level failure: missing file, unwritable path, short read.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ParseErrorKind { MalformedHeader, Truncated, DtypeMismatch, TrailingData };

// Tensor-file decoding failure. Derives from IoError so callers that only
// care about "could not load" can catch one type.
class ParseError : public IoError {
 public:
  ParseError(ParseErrorKind kind, const std::string& what) : IoError(what), kind_(kind) {}
  ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

// Non-finite values reached a place that cannot absorb them (loss, optimizer).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace saot
