#pragma once

#include <stdexcept>
#include <string>

namespace xalign {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files, invalid records, inconsistent knowledge snapshots.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, shape mismatches and other numerical contract violations.
class NumericError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace xalign
