#pragma once

#include <stdexcept>
#include <string>

namespace waiverlab {

// Root of every library error. The CLI maps ConfigError to exit code 2 and
// everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A softmax row where every entry is the -inf mask sentinel.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class SequenceTooLongError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class EmptyAverageError : public Error {
 public:
  using Error::Error;
};

class IncompleteCaptureError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class LengthMismatchError : public LoadError {
 public:
  using LoadError::LoadError;
};

class UnsupportedDtypeError : public LoadError {
 public:
  using LoadError::LoadError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace waiverlab
