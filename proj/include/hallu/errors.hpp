#ifndef HALLU_ERRORS_HPP
#define HALLU_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hallu {

/// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside an operation's mathematical domain (empty input, bad dimension, T <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The record does not carry the data an estimator needs.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string record_id, std::string field, const std::string& reason)
      : Error("record '" + record_id + "': " + field + ": " + reason),
        record_id_(std::move(record_id)),
        field_(std::move(field)) {}
  const std::string& record_id() const noexcept { return record_id_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string record_id_;
  std::string field_;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class ConstraintError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace hallu

#endif  // HALLU_ERRORS_HPP
