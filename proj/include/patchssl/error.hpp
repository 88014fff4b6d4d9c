#pragma once

#include <stdexcept>
#include <string>

namespace patchssl {

// Error hierarchy shared by every module. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised when a ROC AUC is requested for single-class labels.
class UndefinedAucError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchssl
