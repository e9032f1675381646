#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "errors.hpp"
#include "quantal.hpp"
#include "rng.hpp"
#include "utility.hpp"

namespace brsim {

inline constexpr double kLambdaMax = 100.0;

enum class UtilityId : std::uint8_t { Gap = 0, Ttc = 1, Progress = 2 };
inline constexpr std::size_t kNumUtilities = 3;

inline constexpr std::string_view to_string(UtilityId id) {
  switch (id) {
    case UtilityId::Gap: return "gap";
    case UtilityId::Ttc: return "ttc";
    case UtilityId::Progress: return "progress";
  }
  return "?";
}

struct RationalityComponent {
  double lambda = 0.0;
  UtilityId utility = UtilityId::Gap;
};

/// One stochastic driving policy: a rationality parameter per utility, ordered (gap, ttc, progress).
class RationalityVector {
 public:
  RationalityVector() = default;
  RationalityVector(double lambda_gap, double lambda_ttc, double lambda_progress,
                    double lambda_max = kLambdaMax)
      : lambdas_{lambda_gap, lambda_ttc, lambda_progress} {
    for (double l : lambdas_) {
      if (!std::isfinite(l) || std::abs(l) > lambda_max) {
        throw DomainError("RationalityVector: lambda must be finite with |lambda| <= lambda_max");
      }
    }
  }

  double operator[](UtilityId id) const { return lambdas_[static_cast<std::size_t>(id)]; }
  double gap() const { return lambdas_[0]; }
  double ttc() const { return lambdas_[1]; }
  double progress() const { return lambdas_[2]; }
  const std::array<double, 3>& lambdas() const { return lambdas_; }

  RationalityComponent component(UtilityId id) const { return {(*this)[id], id}; }

  friend bool operator==(const RationalityVector&, const RationalityVector&) = default;

 private:
  std::array<double, 3> lambdas_{0.0, 0.0, 0.0};
};

// Behavior categories: sign patterns of (lambda_gap, lambda_ttc, lambda_progress).
enum class BehaviorCategory : std::uint8_t { B1 = 0, B2, B3, B4, B5, B6, B7, B8 };
inline constexpr std::size_t kNumCategories = 8;

inline constexpr std::array<BehaviorCategory, kNumCategories> kAllCategories{
    BehaviorCategory::B1, BehaviorCategory::B2, BehaviorCategory::B3, BehaviorCategory::B4,
    BehaviorCategory::B5, BehaviorCategory::B6, BehaviorCategory::B7, BehaviorCategory::B8};

// +1 / -1 per utility, indexed by category.
inline constexpr std::array<std::array<int, 3>, kNumCategories> kCategorySigns{{
    {-1, -1, +1},  // B1: high speed, close distance, low ttc
    {-1, +1, +1},  // B2: high speed, close distance, high ttc
    {+1, +1, -1},  // B3: low speed, longer distance, high ttc
    {+1, -1, -1},  // B4: low speed, longer distance, low ttc
    {-1, -1, -1},  // B5: low speed, close distance, low ttc
    {-1, +1, -1},  // B6: low speed, close distance, high ttc
    {+1, +1, +1},  // B7: high speed, longer distance, high ttc
    {+1, -1, +1},  // B8: high speed, longer distance, low ttc
}};

inline constexpr std::size_t index_of(BehaviorCategory c) { return static_cast<std::size_t>(c); }

inline constexpr const std::array<int, 3>& signs_of(BehaviorCategory c) {
  return kCategorySigns[index_of(c)];
}

inline std::string to_string(BehaviorCategory c) { return "B" + std::to_string(index_of(c) + 1); }

inline std::optional<BehaviorCategory> parse_category(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'B' || s[0] == 'b') && s[1] >= '1' && s[1] <= '8') {
    return static_cast<BehaviorCategory>(s[1] - '1');
  }
  return std::nullopt;
}

inline BehaviorCategory behavior_category_of(const RationalityVector& lam) {
  std::array<int, 3> signs{};
  for (std::size_t i = 0; i < 3; ++i) {
    const double l = lam.lambdas()[i];
    if (l == 0.0) throw AmbiguousCategoryError("behavior_category_of: lambda component is zero");
    signs[i] = l > 0.0 ? +1 : -1;
  }
  for (BehaviorCategory c : kAllCategories) {
    if (signs_of(c) == signs) return c;
  }
  throw AmbiguousCategoryError("behavior_category_of: unreachable sign pattern");
}

/// Uniform draw inside the category's orthant: (0, lambda_max] or [-lambda_max, 0) per utility.
inline RationalityVector sample_lambda_in_category(BehaviorCategory cat, Stream& rng,
                                                   double lambda_max = kLambdaMax) {
  std::array<double, 3> l{};
  for (std::size_t i = 0; i < 3; ++i) {
    l[i] = signs_of(cat)[i] * lambda_max * rng.uniform_pos();
  }
  return {l[0], l[1], l[2], lambda_max};
}

inline RationalityVector sample_lambda_in_category(BehaviorCategory cat, std::uint64_t seed,
                                                   double lambda_max = kLambdaMax) {
  Stream rng(seed, "lambda-sample");
  return sample_lambda_in_category(cat, rng, lambda_max);
}

/// Utility values of an action in a given state, ordered (gap, ttc, progress).
struct UtilityValues {
  double gap = 0.0;
  double ttc = 0.0;
  double progress = 0.0;

  double operator[](std::size_t i) const { return i == 0 ? gap : (i == 1 ? ttc : progress); }
};

inline UtilityValues utilities_of(const SubjectState& state, const CutInAction& action,
                                  const UtilitySpec& spec) {
  return {utility_gap(action.gap, spec), utility_ttc(ttc_of(state, action), spec),
          utility_progress(action.v_lc, spec)};
}

inline double mixture_density(const UtilityValues& u, const RationalityVector& lam) {
  const double sum = component_density(u.gap, lam.gap()) + component_density(u.ttc, lam.ttc()) +
                     component_density(u.progress, lam.progress());
  return sum / 3.0;
}

/// Equal-weight mixture of the per-utility quantal responses, evaluated pointwise (unnormalized over actions).
inline double mixture_density(const SubjectState& state, const CutInAction& action,
                              const RationalityVector& lam, const UtilitySpec& spec) {
  return mixture_density(utilities_of(state, action, spec), lam);
}

/// Nine-parameter mixed-behavior model: for every utility a positive and a
/// negative rationality branch blended by a mixing weight alpha.
struct MixedPolicyParams {
  std::array<double, 3> lambda_plus{1.0, 1.0, 1.0};
  std::array<double, 3> lambda_minus{-1.0, -1.0, -1.0};
  std::array<double, 3> alpha{0.5, 0.5, 0.5};

  void validate(double lambda_max = kLambdaMax) const {
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(lambda_plus[i] > 0.0 && lambda_plus[i] <= lambda_max)) {
        throw DomainError("MixedPolicyParams: lambda_plus must lie in (0, lambda_max]");
      }
      if (!(lambda_minus[i] < 0.0 && lambda_minus[i] >= -lambda_max)) {
        throw DomainError("MixedPolicyParams: lambda_minus must lie in [-lambda_max, 0)");
      }
      if (!(alpha[i] >= 0.0 && alpha[i] <= 1.0)) throw DomainError("MixedPolicyParams: alpha must lie in [0, 1]");
    }
  }

  RationalityVector plus_vector() const { return {lambda_plus[0], lambda_plus[1], lambda_plus[2]}; }
  RationalityVector minus_vector() const { return {lambda_minus[0], lambda_minus[1], lambda_minus[2]}; }

  /// Flattened as (l+_gap, l+_ttc, l+_prog, l-_gap, l-_ttc, l-_prog, a_gap, a_ttc, a_prog).
  std::array<double, 9> to_array() const {
    return {lambda_plus[0], lambda_plus[1], lambda_plus[2], lambda_minus[0], lambda_minus[1],
            lambda_minus[2], alpha[0], alpha[1], alpha[2]};
  }
  static MixedPolicyParams from_array(std::span<const double, 9> x) {
    return {{x[0], x[1], x[2]}, {x[3], x[4], x[5]}, {x[6], x[7], x[8]}};
  }

  friend bool operator==(const MixedPolicyParams&, const MixedPolicyParams&) = default;
};

inline double mixed_density(const UtilityValues& u, const MixedPolicyParams& params) {
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double a = params.alpha[i];
    sum += a * component_density(u[i], params.lambda_plus[i]) +
           (1.0 - a) * component_density(u[i], params.lambda_minus[i]);
  }
  return sum / 3.0;
}

inline double mixed_density(const SubjectState& state, const CutInAction& action,
                            const MixedPolicyParams& params, const UtilitySpec& spec) {
  return mixed_density(utilities_of(state, action, spec), params);
}

/// Keeps only the mixture branches whose sign some category in the filter uses,
/// renormalizing each utility's branch weights.
inline MixedPolicyParams restrict_to_categories(MixedPolicyParams params,
                                                std::span<const BehaviorCategory> filter) {
  if (filter.empty()) throw DomainError("restrict_to_categories: empty category filter");
  for (std::size_t i = 0; i < 3; ++i) {
    bool plus = false;
    bool minus = false;
    for (BehaviorCategory c : filter) (signs_of(c)[i] > 0 ? plus : minus) = true;
    if (plus && !minus) params.alpha[i] = 1.0;
    if (minus && !plus) params.alpha[i] = 0.0;
  }
  return params;
}

}  // namespace brsim
