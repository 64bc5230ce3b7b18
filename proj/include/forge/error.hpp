#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace forge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data. Carries the offending cell when known (0-based,
/// row 0 is the first data row, column 0 is the first dimension column).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what,
                           std::optional<std::size_t> row = std::nullopt,
                           std::optional<std::size_t> column = std::nullopt)
      : Error(what), row_(row), column_(column) {}

  std::optional<std::size_t> row() const { return row_; }
  std::optional<std::size_t> column() const { return column_; }

 private:
  std::optional<std::size_t> row_;
  std::optional<std::size_t> column_;
};

/// Parameter combination the search cannot run with (r out of range, trial
/// count over the cap, alpha/beta/w outside their domain).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Every trial for a target was discarded by the density threshold.
class NoClusterFound : public Error {
 public:
  explicit NoClusterFound(std::string subject_id)
      : Error("no cluster found for subject '" + subject_id +
              "': every trial fell below the density threshold"),
        subject_id_(std::move(subject_id)) {}

  const std::string& subject_id() const { return subject_id_; }

 private:
  std::string subject_id_;
};

class NoSharedDims : public Error {
 public:
  explicit NoSharedDims(std::string subject_id)
      : Error("subject '" + subject_id +
              "' shares no present dimension with any other subject"),
        subject_id_(std::move(subject_id)) {}

  const std::string& subject_id() const { return subject_id_; }

 private:
  std::string subject_id_;
};

}  // namespace forge
