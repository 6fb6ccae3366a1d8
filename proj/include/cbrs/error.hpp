#pragma once

#include <stdexcept>
#include <string>

namespace cbrs {

// Base for every failure the engine reports to callers.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data (corpus, model file, scenario, config). The CLI maps these
// to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbrs
