#pragma once

#include <stdexcept>
#include <string>

namespace trex {

// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input text or JSON.  Carries a human-readable position.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at offset " + std::to_string(position) + ")"),
        position_(position) {}
  explicit ParseError(const std::string& what) : Error(what), position_(0) {}

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Expression is well-formed but violates the type rules.
class TypeError : public Error {
 public:
  using Error::Error;
};

// A referenced name (object, representation, tool, task) does not exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

}  // namespace trex
