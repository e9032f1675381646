#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "utility.hpp"

namespace brsim {

/// Rectangular discretization of the (v_lc, gap) action space.
struct GridSpec {
  double v_min = 0.0;
  double v_max = 45.0;
  double gap_min = 0.0;
  double gap_max = 60.0;
  std::size_t nv = 128;
  std::size_t ngap = 128;

  static GridSpec for_speed_limit(double v_limit, std::size_t resolution = 128) {
    return {0.0, 1.5 * v_limit, 0.0, 60.0, resolution, resolution};
  }

  void validate(std::size_t min_resolution = 1) const {
    if (!(v_min >= 0.0 && v_max > v_min && gap_min >= 0.0 && gap_max > gap_min) ||
        !std::isfinite(v_max) || !std::isfinite(gap_max)) {
      throw DomainError("GridSpec: ranges must be finite, nonnegative and non-empty");
    }
    if (nv < min_resolution || ngap < min_resolution) throw DomainError("GridSpec: resolution too small");
  }

  double v_step() const { return (v_max - v_min) / static_cast<double>(nv); }
  double gap_step() const { return (gap_max - gap_min) / static_cast<double>(ngap); }
  std::size_t cells() const { return nv * ngap; }
};

/// Normalized probability masses on the cells of a GridSpec. Cell index is iv * ngap + igap.
class ActionGrid {
 public:
  ActionGrid(const GridSpec& spec, std::vector<double> weights) : spec_(spec), mass_(std::move(weights)) {
    spec_.validate();
    if (mass_.size() != spec_.cells()) throw DomainError("ActionGrid: weight count does not match grid");
    double total = 0.0;
    for (double m : mass_) {
      if (!(m >= 0.0) || !std::isfinite(m)) throw DegenerateGridError("ActionGrid: masses must be finite and >= 0");
      total += m;
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw DegenerateGridError("ActionGrid: total mass is zero");
    for (double& m : mass_) m /= total;
    cumulative_.resize(mass_.size());
    std::partial_sum(mass_.begin(), mass_.end(), cumulative_.begin());
  }

  const GridSpec& spec() const { return spec_; }
  std::size_t size() const { return mass_.size(); }
  const std::vector<double>& mass() const { return mass_; }
  double mass(std::size_t cell) const { return mass_[cell]; }

  double v_center(std::size_t iv) const { return spec_.v_min + (static_cast<double>(iv) + 0.5) * spec_.v_step(); }
  double gap_center(std::size_t ig) const {
    return spec_.gap_min + (static_cast<double>(ig) + 0.5) * spec_.gap_step();
  }
  std::vector<double> v_axis() const { return axis(spec_.nv, [&](std::size_t i) { return v_center(i); }); }
  std::vector<double> gap_axis() const {
    return axis(spec_.ngap, [&](std::size_t i) { return gap_center(i); });
  }

  CutInAction center(std::size_t cell) const {
    return {v_center(cell / spec_.ngap), gap_center(cell % spec_.ngap)};
  }

  /// Inverse-CDF draw of a cell index; zero-mass cells are never returned.
  std::size_t sample_cell(Stream& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    std::size_t cell = static_cast<std::size_t>(it - cumulative_.begin());
    if (cell >= mass_.size()) cell = last_positive();
    return cell;
  }

  CutInAction jitter(std::size_t cell, Stream& rng) const {
    const CutInAction c = center(cell);
    return {c.v_lc + (rng.uniform() - 0.5) * spec_.v_step(), c.gap + (rng.uniform() - 0.5) * spec_.gap_step()};
  }

  template <typename F>
  double expectation(F&& f) const {
    double sum = 0.0;
    for (std::size_t c = 0; c < mass_.size(); ++c) {
      if (mass_[c] > 0.0) sum += mass_[c] * f(center(c));
    }
    return sum;
  }

 private:
  template <typename F>
  static std::vector<double> axis(std::size_t n, F&& f) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }

  std::size_t last_positive() const {
    for (std::size_t c = mass_.size(); c-- > 0;) {
      if (mass_[c] > 0.0) return c;
    }
    return 0;
  }

  GridSpec spec_;
  std::vector<double> mass_;
  std::vector<double> cumulative_;
};

inline constexpr std::size_t kMinGridResolution = 16;

/// Evaluates density_fn at every cell center, weights by cell area and normalizes.
template <typename DensityFn>
  requires std::invocable<DensityFn&, const SubjectState&, const CutInAction&>
ActionGrid build_action_grid(const SubjectState& state, DensityFn&& density_fn, const GridSpec& spec) {
  spec.validate(kMinGridResolution);
  const double area = spec.v_step() * spec.gap_step();
  std::vector<double> weights(spec.cells());
  for (std::size_t iv = 0; iv < spec.nv; ++iv) {
    const double v = spec.v_min + (static_cast<double>(iv) + 0.5) * spec.v_step();
    for (std::size_t ig = 0; ig < spec.ngap; ++ig) {
      const double g = spec.gap_min + (static_cast<double>(ig) + 0.5) * spec.gap_step();
      weights[iv * spec.ngap + ig] = density_fn(state, CutInAction{v, g}) * area;
    }
  }
  return ActionGrid(spec, std::move(weights));
}

inline CutInAction sample_action(const ActionGrid& grid, Stream& rng, bool jitter = false) {
  const std::size_t cell = grid.sample_cell(rng);
  return jitter ? grid.jitter(cell, rng) : grid.center(cell);
}

inline CutInAction sample_action(const ActionGrid& grid, std::uint64_t seed, bool jitter = false) {
  Stream rng(seed, "action-sample");
  return sample_action(grid, rng, jitter);
}

}  // namespace brsim
