// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsgd {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, std::vector<std::string> expected, const std::string& found);

  std::size_t position() const noexcept { return position_; }
  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  std::size_t position_;
  std::vector<std::string> expected_;
};

class UnknownPrimitive : public Error {
 public:
  explicit UnknownPrimitive(const std::string& name)
      : Error("unknown primitive '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class ArityMismatch : public Error {
 public:
  ArityMismatch(const std::string& name, std::size_t got, std::size_t want)
      : Error("primitive '" + name + "' expects " + std::to_string(want) + " argument(s), got " +
              std::to_string(got)),
        got_(got),
        want_(want) {}
  std::size_t got() const noexcept { return got_; }
  std::size_t want() const noexcept { return want_; }

 private:
  std::size_t got_;
  std::size_t want_;
};

/// A primitive was evaluated outside its domain (e.g. log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

class SelfTestFailure : public Error {
 public:
  SelfTestFailure(const std::string& primitive, std::size_t argument, std::vector<double> point,
                  double error);
  const std::string& primitive() const noexcept { return primitive_; }
  std::size_t argument() const noexcept { return argument_; }
  const std::vector<double>& point() const noexcept { return point_; }
  double error() const noexcept { return error_; }

 private:
  std::string primitive_;
  std::size_t argument_;
  std::vector<double> point_;
  double error_;
};

class NonFiniteGradient : public Error {
 public:
  explicit NonFiniteGradient(const std::string& context)
      : Error("non-finite gradient: " + context), context_(context) {}
  const std::string& context() const noexcept { return context_; }

  /// Same error with a location suffix such as "sample 17" or "iteration 3".
  NonFiniteGradient at(const std::string& where) const { return NonFiniteGradient(context_ + ", " + where); }

 private:
  std::string context_;
};

/// Estimator not applicable to the given model.
class NotEligible : public Error {
 public:
  using Error::Error;
};

class InvalidExponent : public Error {
 public:
  using Error::Error;
};

/// Bad argument or configuration value; the message names the offending field.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace dsgd
