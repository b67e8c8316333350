#pragma once

#include <stdexcept>
#include <string>

namespace deltametrics {

enum class ErrorKind {
  kInvalidInput,      // malformed or out-of-domain input
  kInsufficientData,  // too few observations or clusters
  kDegenerate,        // statistic is undefined for this data
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Process exit code used by the command-line tool.
  int exit_code() const noexcept {
    return kind_ == ErrorKind::kInvalidInput ? 2 : 3;
  }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what)
      : Error(ErrorKind::kInvalidInput, what) {}
};

class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what)
      : Error(ErrorKind::kInsufficientData, what) {}
};

class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what)
      : Error(ErrorKind::kDegenerate, what) {}
};

}  // namespace deltametrics
