#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace viewflow {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class BatchSizeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

/// Network parameters missing from, or mis-shaped in, a weight container.
class BindingError : public Error {
 public:
  explicit BindingError(const std::string& what, std::vector<std::string> missing = {},
                        std::vector<std::string> mismatched = {})
      : Error(what), missing_(std::move(missing)), mismatched_(std::move(mismatched)) {}
  const std::vector<std::string>& missing() const noexcept { return missing_; }
  const std::vector<std::string>& mismatched() const noexcept { return mismatched_; }

 private:
  std::vector<std::string> missing_, mismatched_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class CoverageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary file failed validation; offset is the byte where it went wrong.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::size_t offset) : Error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace viewflow
