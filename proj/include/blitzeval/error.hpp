#pragma once

#include <stdexcept>
#include <string>

namespace blitzeval {

// Base for every error raised by the library. Callers that only care about
// "did it work" catch this; the subclasses map onto the CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidBoundary : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class OutOfWindow : public Error {
 public:
  using Error::Error;
};

class InvalidRecord : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class NameError : public Error {
 public:
  using Error::Error;
};

// Regressor is (numerically) collinear with the fixed effects or with
// earlier regressors. column() names the offending regressor.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& column, const std::string& what)
      : Error(what), column_(column) {}
  const std::string& column() const { return column_; }

 private:
  std::string column_;
};

class DegenerateVcov : public Error {
 public:
  using Error::Error;
};

class NoInteriorMinimum : public Error {
 public:
  using Error::Error;
};

}  // namespace blitzeval
