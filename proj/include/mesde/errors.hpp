#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mesde {

/// Root of the library's exception hierarchy. `exit_code()` is the status the
/// command-line tool returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration: bad flag, inconsistent grid, missing file.
class ConfigError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed or degenerate input data.
class DataError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// CSV parse failure; carries the 1-based row and column of the offending cell.
class ParseError : public DataError {
public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : DataError(what + " (row " + std::to_string(row) + ", column " +
                  std::to_string(column) + ")"),
        row_(row), column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

private:
  std::size_t row_;
  std::size_t column_;
};

/// A trajectory whose increments are all zero; its profiled time scale is 0.
class DegenerateTrajectoryError : public DataError {
public:
  explicit DegenerateTrajectoryError(std::size_t individual)
      : DataError("degenerate trajectory: individual " + std::to_string(individual) +
                  " has (numerically) zero quadratic variation"),
        individual_(individual) {}

  std::size_t individual() const noexcept { return individual_; }

private:
  std::size_t individual_;
};

/// Failure while evaluating a user model (non-finite or non-positive S).
class ModelError : public Error {
public:
  ModelError(const std::string& what, double t, double y, std::vector<double> eta)
      : Error(describe(what, t, y, eta)), t_(t), y_(y), eta_(std::move(eta)) {}

  explicit ModelError(const std::string& what) : Error(what) {}

  int exit_code() const noexcept override { return 4; }
  double t() const noexcept { return t_; }
  double y() const noexcept { return y_; }
  const std::vector<double>& eta() const noexcept { return eta_; }

private:
  static std::string describe(const std::string& what, double t, double y,
                              const std::vector<double>& eta) {
    std::ostringstream os;
    os << what << " at t=" << t << ", y=" << y << ", eta=(";
    for (std::size_t k = 0; k < eta.size(); ++k) os << (k ? "," : "") << eta[k];
    os << ")";
    return os.str();
  }

  double t_ = 0.0;
  double y_ = 0.0;
  std::vector<double> eta_;
};

/// Euler path left the representable range.
class SimulationError : public Error {
public:
  SimulationError(std::size_t individual, double t, double value)
      : Error("simulation blow-up: individual " + std::to_string(individual) +
              " reached " + std::to_string(value) + " at t=" + std::to_string(t)),
        individual_(individual), t_(t) {}

  int exit_code() const noexcept override { return 4; }
  std::size_t individual() const noexcept { return individual_; }
  double t() const noexcept { return t_; }

private:
  std::size_t individual_;
  double t_;
};

/// Optimizer failure or a numerically unusable estimating equation.
class EstimationError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

} // namespace mesde
