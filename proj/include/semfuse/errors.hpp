#pragma once

#include <stdexcept>
#include <string>

namespace semfuse {

// Process exit codes used by the CLI. Each error family maps to one code.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kGrammar = 5,
  kThreshold = 6,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::kUsage; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kConfig; }
};

// Corpus, encoding, annotation and file-format failures.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kData; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumeric; }
};

class ShapeError : public NumericError {
 public:
  using NumericError::NumericError;
};

class GrammarError : public Error {
 public:
  GrammarError(const std::string& what, int position)
      : Error(what), position_(position) {}
  ExitCode exit_code() const override { return ExitCode::kGrammar; }
  // 1-based index of the offending token, or 0 when not position-specific.
  int position() const { return position_; }

 private:
  int position_;
};

}  // namespace semfuse
