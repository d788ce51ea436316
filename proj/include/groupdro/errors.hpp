#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace groupdro {

/// A dataset split cannot give every part at least one example of some group.
class SplitInfeasibleError : public std::invalid_argument {
 public:
  SplitInfeasibleError(int group, std::size_t group_size, const std::string& what)
      : std::invalid_argument(what), group_(group), group_size_(group_size) {}

  int group() const noexcept { return group_; }
  std::size_t group_size() const noexcept { return group_size_; }

 private:
  int group_;
  std::size_t group_size_;
};

/// Malformed row or token in an input file. Lines are 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A structurally valid file violates the declared schema (wrong column
/// count, group or label id out of range).
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : std::runtime_error(what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite value encountered mid-run; what() carries the diagnostics.
class NumericalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace groupdro
