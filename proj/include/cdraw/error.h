#ifndef CDRAW_ERROR_H_
#define CDRAW_ERROR_H_

#include <stdexcept>
#include <string>

namespace cdraw {

// Shape or precondition violation at an API boundary.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced mid-computation. Carries enough context for the
// trainer's rollback path to report where things went wrong.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(const std::string& msg, std::string where, int step = -1)
      : std::runtime_error(step >= 0 ? msg + " [" + where + ", step " +
                                           std::to_string(step) + "]"
                                     : msg + " [" + where + "]"),
        where_(std::move(where)),
        step_(step) {}
  const std::string& where() const { return where_; }
  int step() const { return step_; }

 private:
  std::string where_;
  int step_;
};

// Undecodable or truncated compressed stream.
class CorruptStream : public std::runtime_error {
 public:
  explicit CorruptStream(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cdraw

#endif  // CDRAW_ERROR_H_
