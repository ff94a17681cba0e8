#pragma once

#include <stdexcept>
#include <string>

namespace graphdqn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or record.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Loss or parameter became NaN/Inf during training.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace graphdqn
