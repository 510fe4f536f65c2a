#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace igmmdiar {

// Argument outside a function's mathematical domain (digamma at x <= 0,
// division by zero on a tape, non-finite input).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A value or configuration failed a documented invariant.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An object was used in the wrong state, e.g. backward on a foreign tape.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A constrained clustering target that cannot be reached.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace igmmdiar
