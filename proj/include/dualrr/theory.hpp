#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualrr/tensor.hpp"

namespace dualrr {

// Probability vector over at most 16 outcomes.
struct Categorical {
  std::vector<double> probs;
  // Non-negative entries summing to 1 within 1e-12, 1 <= size <= 16.
  void validate() const;
};

// D_KL(p || q) in nats. Terms with p_i = 0 contribute 0; any p_i > 0 with
// q_i = 0 yields +infinity.
double kl_divergence(const Categorical& p, const Categorical& q);

// Total variation distance: max-event probability gap = 0.5 * sum |p - q|.
double tv_distance(const Categorical& p, const Categorical& q);

// Uniform (symmetric Dirichlet(1)) draw from the probability simplex.
Categorical random_simplex(Rng& rng, std::size_t v);

// Convex mixture (1-w) * a + w * b; w in [0,1].
Categorical mix(const Categorical& a, const Categorical& b, double w);

// Finds the mixture of `base` toward `noise` whose divergence from `base` is
// as close to `target_eps` as the mixture family allows (bisection on the
// weight; returns the w=1 endpoint when the family cannot reach the target).
Categorical perturb_to_kl(const Categorical& base, const Categorical& noise,
                          double target_eps);

// One (target divergence, margin) aggregation cell of a stability check.
struct FlipCell {
  double eps_target = 0.0;
  double delta = 0.0;
  std::uint64_t margin_pairs = 0;  // ordered (i,j) with p_T margin >= delta
  std::uint64_t flips = 0;         // of those, student strict reversals
  double mean_bound = 0.0;         // mean over pairs of sqrt(2*eps_hat)/delta
};

struct FlipBoundReport {
  std::size_t v = 0;
  std::uint64_t dist_pairs = 0;            // (P_T, P_S) pairs examined
  std::uint64_t sufficient_cases = 0;      // margin pairs with delta >= sqrt(2*eps_hat)
  std::uint64_t sufficient_violations = 0; // flips among those (theorem says 0)
  double pinsker_max_excess = -1.0;        // max of TV - sqrt(eps_hat/2)
  std::vector<FlipCell> cells;
  std::string to_json() const;
};

// Samples `trials` teacher distributions; for every target divergence builds a
// perturbed student, computes the exact divergence eps_hat, and enumerates all
// margin-qualified ordered outcome pairs against each margin in `delta_grid`.
// Ranking stability claim under test: a margin of at least sqrt(2*eps_hat)
// admits no strict reversal. Every pair also self-checks Pinsker's inequality.
// Throws UserError on empty/invalid grids or v outside [2,16].
FlipBoundReport verify_flip_bound(std::uint64_t trials, std::size_t v,
                                  const std::vector<double>& eps_grid,
                                  const std::vector<double>& delta_grid,
                                  std::uint64_t seed);

struct GridReport {
  std::uint64_t points = 0;      // simplex grid points per side
  std::uint64_t dist_pairs = 0;  // ordered (p, q) grid pairs examined
  std::uint64_t sufficient_cases = 0;
  std::uint64_t violations = 0;
  double pinsker_max_excess = -1.0;
};

// Exhaustive check of the same sufficient condition over every ordered pair
// of rational grid points (multiples of `resolution`) on the V-simplex.
// Throws UserError when v is outside [2,16] or the resolution does not divide
// 1 into a whole number of parts.
GridReport flip_bound_grid(std::size_t v, double resolution);

// Exact joint distribution over a context X and a length-l outcome sequence,
// P(x, y_1..y_l), stored row-major with y_1 the slowest sequence axis.
struct DiscreteEnv {
  std::size_t n_x = 0;
  std::size_t v = 0;
  std::size_t l = 0;
  std::vector<double> table;  // size n_x * v^l, sums to 1

  // Bounds: n_x in [1,8], v in [2,6], l in [1,3]; table normalized to 1e-12.
  void validate() const;
  std::size_t seq_count() const;  // v^l
};

// Random environment with a sharpness knob: per-context sequence scores are
// drawn once from `seed` (normal with spread 4, so gamma >= 1 already sits in
// the sharpening regime rather than the near-uniform hump), then P(y|x) is
// their softmax at inverse temperature gamma — the same seed sweeps gamma
// over a fixed score table. The context marginal is a random simplex point.
DiscreteEnv random_env(std::size_t n_x, std::size_t v, std::size_t l,
                       double gamma, std::uint64_t seed);

// Deterministic environment: P(y|x) is one-hot at a seed-chosen sequence.
DiscreteEnv deterministic_env(std::size_t n_x, std::size_t v, std::size_t l,
                              std::uint64_t seed);

// Environment whose positions are conditionally independent given x:
// P(y|x) factorizes into per-position categoricals.
DiscreteEnv factorized_env(std::size_t n_x, std::size_t v, std::size_t l,
                           std::uint64_t seed);

// Conditional mutual information I(y_t ; y_{<t} | X) in nats by exact
// summation, for 1-based position t in [2, l]. Never negative.
double cmi_exact(const DiscreteEnv& env, std::size_t t);

// H(y_t | X) and H(y_1..y_{t-1} | X) in nats, the two caps on the CMI.
double cond_entropy_position(const DiscreteEnv& env, std::size_t t);
double cond_entropy_prefix(const DiscreteEnv& env, std::size_t t);

}  // namespace dualrr
