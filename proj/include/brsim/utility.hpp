#pragma once

#include <cmath>
#include <limits>

#include "errors.hpp"

namespace brsim {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Speed of the lane-keeping subject vehicle when the maneuver starts.
struct SubjectState {
  double v_s = 0.0;  // m/s
};

/// Decision of the cutting-in target vehicle, realized when it crosses the lane boundary.
struct CutInAction {
  double v_lc = 0.0;  // target speed at the crossing, m/s
  double gap = 0.0;   // distance gap to the subject along the travel direction, m

  friend bool operator==(const CutInAction&, const CutInAction&) = default;
};

/// Reference values where each utility changes regime.
struct UtilitySpec {
  double gap_star = 10.0;  // m
  double ttc_star = 4.0;   // s
  double v_star = 30.0;    // m/s

  void validate() const {
    if (!(gap_star > 0.0) || !(ttc_star > 0.0) || !(v_star > 0.0) || !std::isfinite(gap_star) ||
        !std::isfinite(ttc_star) || !std::isfinite(v_star)) {
      throw DomainError("UtilitySpec: reference values must be finite and positive");
    }
  }
};

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Safety utilities share one shape: a logistic step from 0.5 (far below the
// reference) to 1 (far above), passing 0.75 at the reference.
inline double safety_utility(double x, double reference) noexcept {
  return sigmoid(x - reference) + 0.5 * sigmoid(reference - x);
}

inline double utility_gap(double gap, const UtilitySpec& spec) {
  if (!std::isfinite(gap) || gap < 0.0) throw DomainError("utility_gap: gap must be finite and >= 0");
  return safety_utility(gap, spec.gap_star);
}

inline double utility_ttc(double ttc, const UtilitySpec& spec) {
  if (std::isnan(ttc) || ttc < 0.0) throw DomainError("utility_ttc: ttc must be >= 0 or +inf");
  if (std::isinf(ttc)) return 1.0;
  return safety_utility(ttc, spec.ttc_star);
}

/// S(2v - 2v*) - S(2v* - 2v), evaluated through the identity with tanh(v - v*).
inline double utility_progress(double v_lc, const UtilitySpec& spec) {
  if (!std::isfinite(v_lc) || v_lc < 0.0) throw DomainError("utility_progress: speed must be finite and >= 0");
  return std::tanh(v_lc - spec.v_star);
}

/// Time to collision at the lane crossing; +inf when the gap is not closing.
inline double ttc_of(const SubjectState& state, const CutInAction& action) noexcept {
  const double closing = state.v_s - action.v_lc;
  if (!(closing > 0.0)) return kInfinity;
  return action.gap / closing;
}

}  // namespace brsim
