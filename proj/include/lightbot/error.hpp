#pragma once

#include <stdexcept>
#include <string>

namespace lightbot {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PuzzleError : public Error {
 public:
  using Error::Error;
};

class ProgramError : public Error {
 public:
  using Error::Error;
};

}  // namespace lightbot
