#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace companion {

// Tensor shapes disagree with what an operation requires.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke a precondition that is not about shapes (label range, empty input, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Misuse of the autodiff API, e.g. backward from a non-scalar.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// A function handed to the gradient checker returned NaN/inf.
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Binary file does not follow the expected layout (IDX magic, checkpoint header, ...).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric requested for a class with no samples.
struct UndefinedClassError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConfigError : std::runtime_error {
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Non-finite loss during training.
struct TrainingFault : std::runtime_error {
  TrainingFault(std::uint64_t step, const std::string& what)
      : std::runtime_error("training fault at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

}  // namespace companion
