#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nonconj {

/// Broad failure category. The CLI maps these onto exit codes.
enum class ErrorKind { input, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Malformed or inconsistent caller input (dimensions, empty data, bad flags).
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

/// Configuration that makes an update ill-defined (e.g. a nonpositive
/// hyperparameter denominator).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::input, what) {}
};

/// Text-format violation; line is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::input, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Argument outside the domain of a function or exponential family.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class OverflowError : public Error {
 public:
  explicit OverflowError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Cholesky factorization hit a nonpositive pivot.
class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(std::ptrdiff_t pivot)
      : Error(ErrorKind::numerical,
              "matrix is not positive definite (pivot " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}

  std::ptrdiff_t pivot() const noexcept { return pivot_; }

 private:
  std::ptrdiff_t pivot_;
};

/// The negative Hessian at the optimum could not be factorized even after jitter.
class NonConcaveError : public Error {
 public:
  explicit NonConcaveError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

}  // namespace nonconj
