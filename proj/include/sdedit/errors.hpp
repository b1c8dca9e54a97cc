#pragma once

#include <stdexcept>
#include <string>

namespace sdedit {

/// Argument outside the mathematical domain of an operation (t ∉ [0,1], δ ∉ (0,1), ...).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Time grid too coarse for the schedule (a VP factor 1−βΔt ≤ 0, a negative
/// VE variance increment).
class ScheduleError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class TrainingError : public std::runtime_error {
public:
  TrainingError(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

private:
  long step_;
};

/// Misuse of the t0 search protocol (feedback after accept, no pending candidate).
class ProtocolError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace sdedit
