#pragma once

#include <stdexcept>
#include <string>

namespace brsim {

// Input outside the mathematical domain of a function (negative ttc, p > 1, NaN, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// A rationality vector with a zero component has no behavior category.
struct AmbiguousCategoryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateGridError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The requested action cannot be realized by the cut-in geometry.
struct InfeasibleScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Proposal assigns zero mass to a sampled event point.
struct AbsoluteContinuityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CEStallError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or invariant-violating input data (CSV rows, observation sets).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace brsim
