#pragma once

#include <stdexcept>
#include <string>

namespace muvit {

/// Invalid shapes, group counts, variants or other build-time settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The caller used an API out of contract (non-scalar loss, missing grads,
/// wrong input size).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed PNM, checkpoint or config document. Carries the byte offset
/// where parsing stopped when one is known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long long offset = -1)
      : std::runtime_error(offset >= 0 ? what + " (at byte " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  long long offset() const noexcept { return offset_; }

 private:
  long long offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf showed up where a finite value was required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A self-check failed: analytic vs enumerated counts, gradcheck threshold.
class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace muvit
