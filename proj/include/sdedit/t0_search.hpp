#pragma once

#include "sdedit/errors.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sdedit {

enum class Feedback { more_realistic, more_faithful, accept };

inline const char* to_string(Feedback f) {
  switch (f) {
  case Feedback::more_realistic: return "more_realistic";
  case Feedback::more_faithful: return "more_faithful";
  case Feedback::accept: return "accept";
  }
  return "?";
}

inline std::optional<Feedback> parse_feedback(const std::string& s) {
  if (s == "more_realistic" || s == "r") return Feedback::more_realistic;
  if (s == "more_faithful" || s == "f") return Feedback::more_faithful;
  if (s == "accept" || s == "a") return Feedback::accept;
  return std::nullopt;
}

/// Bisection over t0 driven by a human verdict on each candidate. Larger t0
/// trades faithfulness for realism, so "more realistic" raises the lower bound.
struct T0SearchState {
  static constexpr double kInitialLo = 0.3;
  static constexpr double kInitialHi = 0.6;
  static constexpr int kSoftCap = 10;

  struct Step {
    double t0;
    Feedback feedback;
  };

  double lo = kInitialLo;
  double hi = kInitialHi;
  double probe = 0.5 * (kInitialLo + kInitialHi);
  int iterations = 0;
  bool accepted = false;
  std::vector<Step> history;

  static T0SearchState initial() { return {}; }

  static T0SearchState over(double lo, double hi) {
    if (!(0.0 <= lo && lo < hi && hi <= 1.0)) throw ParameterError("t0 search interval must satisfy 0 <= lo < hi <= 1");
    T0SearchState s;
    s.lo = lo;
    s.hi = hi;
    s.probe = 0.5 * (lo + hi);
    return s;
  }

  double width() const { return hi - lo; }
  /// Past the soft cap callers should stop asking and accept the probe.
  bool soft_cap_reached() const { return iterations >= kSoftCap; }
};

inline T0SearchState t0_binary_search(T0SearchState state, Feedback feedback) {
  if (state.accepted) throw ProtocolError("t0 search already accepted; no further feedback allowed");
  state.history.push_back({state.probe, feedback});
  switch (feedback) {
  case Feedback::accept:
    state.accepted = true;
    return state;
  case Feedback::more_realistic:
    state.lo = state.probe;
    break;
  case Feedback::more_faithful:
    state.hi = state.probe;
    break;
  }
  state.probe = 0.5 * (state.lo + state.hi);
  ++state.iterations;
  return state;
}

} // namespace sdedit
