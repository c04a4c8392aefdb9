#pragma once

#include <stdexcept>
#include <string>

namespace hhic {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidBoxError : public Error {
 public:
  using Error::Error;
};

class DegenerateBoxError : public Error {
 public:
  using Error::Error;
};

class DegenerateAugmentationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class EmptyComparisonError : public Error {
 public:
  using Error::Error;
};

class UndefinedSimilarityError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::string component, const std::string& what)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string last_good_checkpoint)
      : Error(what), last_good_(std::move(last_good_checkpoint)) {}
  const std::string& last_good_checkpoint() const noexcept { return last_good_; }

 private:
  std::string last_good_;
};

}  // namespace hhic
