#pragma once

#include <stdexcept>
#include <string>

namespace topocal {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scalar argument violates its documented range (non-positive focal, ...).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// Shapes or contents of input data do not agree.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// A sampling grid or experiment configuration cannot be satisfied.
class InvalidSpec : public Error {
 public:
  using Error::Error;
};

// A homography (or intermediate matrix) is singular within tolerance.
class DegenerateHomography : public Error {
 public:
  using Error::Error;
};

class EmptyDictionary : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace topocal
