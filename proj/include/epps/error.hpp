#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace epps {

// Base for every error raised by the library. Messages are prefixed with the
// module that raised them ("spdc: ...", "tcspc: ...").
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the validity window of a coefficient table or model.
class ValidityError : public Error {
 public:
  using Error::Error;
};

// Non-physical argument (e.g. signal wavelength shorter than the pump).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A spectral density has no weight left on the requested grid.
class EmptySupportError : public Error {
 public:
  using Error::Error;
};

// Invalid combination of run parameters. Carries every violation found.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}
  explicit ConfigError(const std::string& violation)
      : ConfigError(std::vector<std::string>{violation}) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }
  std::vector<std::string> violations_;
};

// g2 normalization has a zero pairwise coincidence count.
class UndefinedG2Error : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace epps
