#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace xresq {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

using Bits = std::vector<std::uint8_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or matrix extents that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// Brute-force enumeration refused because the candidate count exceeds the budget.
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line and record (0 for header) at fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t record)
      : Error(what + " (line " + std::to_string(line) + ", record " + std::to_string(record) + ")"),
        line_(line),
        record_(record) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t record() const noexcept { return record_; }

 private:
  std::size_t line_;
  std::size_t record_;
};

}  // namespace xresq
