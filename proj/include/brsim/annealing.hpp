#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "scenario.hpp"

// Two-level simulated annealing over behavior categories (outer loop) and
// rationality vectors inside the chosen category (inner loop), maximizing the
// simulated rare-event rate of the policy.

namespace brsim {

struct SAConfig {
  std::size_t outer_iters = 30;        // I_max
  std::size_t inner_iters = 10;        // J_max
  std::size_t n_rollouts = 1000;       // N per simulate_scene call
  double t_out_init = 0.05;
  double t_inn_init = 0.05;
  double cooling_factor = 0.95;
  double lambda_max = kLambdaMax;
  double exploration_floor = 1e-3;     // kappa in weighted_sample_bid
  bool literal_acceptance = false;     // inverted inequalities as printed, for comparison only
  std::uint64_t seed = 0;

  void validate() const {
    if (n_rollouts < 1) throw ConfigError("SAConfig: n_rollouts must be >= 1");
    if (!(t_out_init > 0.0) || !(t_inn_init > 0.0)) throw ConfigError("SAConfig: temperatures must be > 0");
    if (!(cooling_factor > 0.0 && cooling_factor < 1.0)) throw ConfigError("SAConfig: cooling_factor in (0, 1)");
    if (!(lambda_max > 0.0)) throw ConfigError("SAConfig: lambda_max must be > 0");
    if (!(exploration_floor > 0.0)) throw ConfigError("SAConfig: exploration_floor must be > 0");
  }
};

struct SATraceRow {
  std::size_t iteration = 0;  // evaluation counter
  std::string phase;          // init | inner
  BehaviorCategory bid = BehaviorCategory::B1;
  RationalityVector lambda{};
  double rate = 0.0;
  bool accepted = false;
  double temperature = 0.0;
};

struct SAState {
  std::array<double, kNumCategories> p_max_per_bid{};
  std::array<RationalityVector, kNumCategories> lambda_max_per_bid{};
  BehaviorCategory best_bid = BehaviorCategory::B1;
  std::vector<SATraceRow> trace;
  bool budget_exhausted = true;

  const RationalityVector& best_lambda() const { return lambda_max_per_bid[index_of(best_bid)]; }
  double best_rate() const { return p_max_per_bid[index_of(best_bid)]; }
};

/// Rare-event rate of a policy: (lambda, n rollouts, seed) -> rate in [0, 1].
using SceneEvaluator = std::function<double(const RationalityVector&, std::size_t, std::uint64_t)>;

inline SceneEvaluator scene_evaluator(const Scene& scene) {
  return [scene](const RationalityVector& lam, std::size_t n, std::uint64_t seed) {
    return simulate_scene(lam, n, scene, seed);
  };
}

inline SceneEvaluator scene_evaluator(const Scene& scene, ResponseFn response) {
  return [scene, response = std::move(response)](const RationalityVector& lam, std::size_t n, std::uint64_t seed) {
    return simulate_scene(lam, n, scene, seed, response).rate();
  };
}

inline std::array<RationalityVector, kNumCategories> init_lambda(std::uint64_t seed,
                                                                 double lambda_max = kLambdaMax) {
  std::array<RationalityVector, kNumCategories> out{};
  for (BehaviorCategory c : kAllCategories) {
    Stream rng(seed, "sa-init", index_of(c));
    out[index_of(c)] = sample_lambda_in_category(c, rng, lambda_max);
  }
  return out;
}

/// Draws a category with probability (rate_b + kappa) / sum(rate + kappa).
inline BehaviorCategory weighted_sample_bid(const std::array<double, kNumCategories>& rates, Stream& rng,
                                            double kappa = 1e-3) {
  std::array<double, kNumCategories> cum{};
  double total = 0.0;
  for (std::size_t b = 0; b < kNumCategories; ++b) {
    if (!(rates[b] >= 0.0)) throw DomainError("weighted_sample_bid: rates must be >= 0");
    total += rates[b] + kappa;
    cum[b] = total;
  }
  const double u = rng.uniform() * total;
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  return kAllCategories[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), kNumCategories - 1)];
}

/// Metropolis rule: improvements always pass, deteriorations with exp(delta / T).
inline bool sa_accept(double candidate_rate, double incumbent_rate, double temperature, Stream& rng) {
  if (!(temperature > 0.0)) throw DomainError("sa_accept: temperature must be > 0");
  if (candidate_rate > incumbent_rate) return true;
  return rng.uniform() < std::exp((candidate_rate - incumbent_rate) / temperature);
}

namespace detail {

inline BehaviorCategory argmax_bid(const std::array<double, kNumCategories>& p) {
  return kAllCategories[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
}

}  // namespace detail

/// Searches for the category and rationality vector with the highest rare-event rate.
/// Every evaluation reuses cfg.seed for its rollouts (common random numbers), so rate
/// differences reflect the policies rather than sampling noise.
inline SAState optimize(const SAConfig& cfg, const SceneEvaluator& evaluate, double target_rate = 1.0) {
  cfg.validate();
  SAState st;
  const std::uint64_t eval_seed = derive_seed(cfg.seed, "sa-scene");
  std::size_t counter = 0;

  st.lambda_max_per_bid = init_lambda(cfg.seed, cfg.lambda_max);
  for (BehaviorCategory c : kAllCategories) {
    const auto b = index_of(c);
    st.p_max_per_bid[b] = evaluate(st.lambda_max_per_bid[b], cfg.n_rollouts, eval_seed);
    st.trace.push_back({counter++, "init", c, st.lambda_max_per_bid[b], st.p_max_per_bid[b], true, 0.0});
  }

  // Chain state per category; the record above only ever improves.
  auto current_rate = st.p_max_per_bid;

  for (std::size_t i = 0; i < cfg.outer_iters; ++i) {
    if (st.p_max_per_bid[index_of(detail::argmax_bid(st.p_max_per_bid))] >= target_rate) {
      st.budget_exhausted = false;
      break;
    }
    const double t_out = cfg.t_out_init * std::pow(cfg.cooling_factor, static_cast<double>(i));
    Stream outer_rng(cfg.seed, "sa-outer", i);
    const BehaviorCategory bid = weighted_sample_bid(st.p_max_per_bid, outer_rng, cfg.exploration_floor);
    const auto b = index_of(bid);
    const double p_best = *std::max_element(st.p_max_per_bid.begin(), st.p_max_per_bid.end());

    bool explore;
    if (cfg.literal_acceptance) {
      explore = std::exp((st.p_max_per_bid[b] - p_best) / t_out) < outer_rng.uniform();
    } else {
      explore = sa_accept(st.p_max_per_bid[b], p_best, t_out, outer_rng);
    }
    if (!explore) continue;

    for (std::size_t j = 0; j < cfg.inner_iters; ++j) {
      const double t_inn = cfg.t_inn_init * std::pow(cfg.cooling_factor, static_cast<double>(j));
      Stream inner_rng(cfg.seed, "sa-inner", (static_cast<std::uint64_t>(i) << 32) | j);
      const RationalityVector cand = sample_lambda_in_category(bid, inner_rng, cfg.lambda_max);
      const double rate = evaluate(cand, cfg.n_rollouts, eval_seed);

      bool accepted;
      if (cfg.literal_acceptance) {
        accepted = rate > st.p_max_per_bid[b] ||
                   std::exp((rate - st.p_max_per_bid[b]) / t_inn) < inner_rng.uniform();
        if (accepted) {
          st.p_max_per_bid[b] = rate;
          st.lambda_max_per_bid[b] = cand;
        }
      } else {
        accepted = sa_accept(rate, current_rate[b], t_inn, inner_rng);
        if (accepted) {
          current_rate[b] = rate;
          if (rate > st.p_max_per_bid[b]) {
            st.p_max_per_bid[b] = rate;
            st.lambda_max_per_bid[b] = cand;
          }
        }
      }
      st.trace.push_back({counter++, "inner", bid, cand, rate, accepted, t_inn});
    }
  }
  st.best_bid = detail::argmax_bid(st.p_max_per_bid);
  return st;
}

}  // namespace brsim
