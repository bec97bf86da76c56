#pragma once

#include <stdexcept>
#include <string>

namespace ckm {

// Base of every error the toolkit raises. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Value outside its admissible interval (pixel, dB, time step).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Incompatible array shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Oracle-scale operation asked to materialize something too large.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Ill-conditioned system, NaN propagation, non-PSD prior and the like.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Operation not defined for the given input kind.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Missing observations, bad configuration, violated contract.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ckm
