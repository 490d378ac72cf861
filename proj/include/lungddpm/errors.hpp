#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lungddpm {

/// Invalid argument or violated precondition.
class ArgumentError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed binary file. `offset()` is the byte position where decoding failed.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class PlacementError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class SearchExhaustedError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class SolverDivergenceError : public std::runtime_error {
public:
  SolverDivergenceError(const std::string& what, int step)
      : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

private:
  int step_;
};

class UnsupportedArchitectureError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace lungddpm
