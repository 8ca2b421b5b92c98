#ifndef HPIM_ERROR_HPP_
#define HPIM_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace hpim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file or text; the message carries line context.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but violates a domain constraint
/// (schema invariants, simplex violations, out-of-range parameters).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training (non-finite loss, divergence).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hpim

#endif  // HPIM_ERROR_HPP_
