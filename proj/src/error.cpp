// SPDX-License-Identifier: Apache-2.0
#include "dsgd/error.hpp"

#include <sstream>

namespace dsgd {

namespace {

std::string syntax_message(std::size_t position, const std::vector<std::string>& expected,
                           const std::string& found) {
  std::ostringstream os;
  os << "syntax error at " << position << ": expected ";
  for (std::size_t i = 0; i < expected.size(); ++i) os << (i ? " or " : "") << expected[i];
  os << ", found " << found;
  return os.str();
}

std::string selftest_message(const std::string& primitive, std::size_t argument,
                             const std::vector<double>& point, double error) {
  std::ostringstream os;
  os << "self-test failure: partial " << argument << " of '" << primitive << "' at (";
  for (std::size_t i = 0; i < point.size(); ++i) os << (i ? ", " : "") << point[i];
  os << ") has relative error " << error;
  return os.str();
}

}  // namespace

SyntaxError::SyntaxError(std::size_t position, std::vector<std::string> expected, const std::string& found)
    : Error(syntax_message(position, expected, found)), position_(position), expected_(std::move(expected)) {}

SelfTestFailure::SelfTestFailure(const std::string& primitive, std::size_t argument, std::vector<double> point,
                                 double error)
    : Error(selftest_message(primitive, argument, point, error)),
      primitive_(primitive),
      argument_(argument),
      point_(std::move(point)),
      error_(error) {}

}  // namespace dsgd
