#pragma once

#include <stdexcept>
#include <string>

namespace overtrain {

// Every failure raised by the library derives from Error so callers can catch
// the whole family at once; the subclasses name the contract that was broken.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidSpectrumError : public Error {
 public:
  using Error::Error;
};

class InvalidParameterError : public Error {
 public:
  using Error::Error;
};

// Learning-rate bound 4*eta*(lambda+2)*Gamma < 1 violated.
class RejectedConfigError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class InstabilityError : public Error {
 public:
  using Error::Error;
};

class IncompleteTraceError : public Error {
 public:
  IncompleteTraceError(const std::string& what, int stages_found)
      : Error(what), stages_found_(stages_found) {}
  int stages_found() const { return stages_found_; }

 private:
  int stages_found_;
};

class InsufficientSamplesError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class InconsistentInputsError : public Error {
 public:
  using Error::Error;
};

}  // namespace overtrain
