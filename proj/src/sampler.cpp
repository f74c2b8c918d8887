#include "dualrr/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "dualrr/rng.hpp"

namespace dualrr {

namespace {

// Masked log softmax of one cube row over the items not yet chosen.
// Returns log-probs for unchosen items; chosen items keep the sentinel.
std::vector<double> masked_log_softmax(const Tensor& cube, std::size_t t,
                                       const std::vector<std::uint8_t>& chosen) {
  const std::size_t n = cube.cols();
  std::vector<double> z(n);
  double mx = kMaskSentinel;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = chosen[i] ? kMaskSentinel : cube.at(t, i);
    mx = std::max(mx, z[i]);
  }
  double lse = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (!chosen[i]) lse += std::exp(z[i] - mx);
  lse = mx + std::log(lse);
  for (std::size_t i = 0; i < n; ++i)
    if (!chosen[i]) z[i] -= lse;
  return z;
}

}  // namespace

SampledGroup gumbel_sample_group(const Tensor& cube, std::size_t group_size,
                                 double tau, std::uint64_t seed,
                                 std::uint64_t step) {
  if (group_size == 0) throw UserError("sampling: group size must be >= 1");
  if (tau <= 0.0) throw UserError("sampling: temperature must be > 0");
  const std::size_t l = cube.rows(), n = cube.cols();
  if (l > n) throw Error("sampling: more slate positions than candidates");

  SampledGroup out;
  out.slates.resize(group_size);
  out.log_probs.assign(group_size, 0.0);
  for (std::size_t k = 0; k < group_size; ++k) {
    std::vector<std::uint8_t> chosen(n, 0);
    Slate& slate = out.slates[k];
    slate.reserve(l);
    for (std::size_t t = 0; t < l; ++t) {
      const std::vector<double> logp = masked_log_softmax(cube, t, chosen);
      std::size_t best = n;  // sentinel: no pick yet
      double best_score = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        const double score = logp[i] / tau + gumbel_noise(seed, step, k, t, i);
        if (best == n || score > best_score) {
          best = i;
          best_score = score;
        }
      }
      slate.push_back(best);
      out.log_probs[k] += logp[best];
      chosen[best] = 1;
    }
  }
  return out;
}

Slate greedy_slate(const Tensor& cube) {
  const std::size_t l = cube.rows();
  const std::size_t n = cube.cols();
  if (l == 0 || n < l) throw Error("greedy_slate: cube needs at least as many columns as rows");
  std::vector<std::uint8_t> chosen(n, 0);
  Slate slate;
  slate.reserve(l);
  for (std::size_t t = 0; t < l; ++t) {
    std::size_t best = n;
    double best_score = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      const double score = cube.at(t, i);
      if (best == n || score > best_score) {
        best = i;
        best_score = score;
      }
    }
    slate.push_back(best);
    chosen[best] = 1;
  }
  return slate;
}

double sequence_log_prob(const Tensor& cube, const Slate& slate) {
  const std::size_t n = cube.cols();
  if (slate.size() != cube.rows())
    throw Error("sequence_log_prob: slate length != cube rows");
  std::vector<std::uint8_t> chosen(n, 0);
  double total = 0.0;
  for (std::size_t t = 0; t < slate.size(); ++t) {
    const std::size_t pick = slate[t];
    if (pick >= n) throw Error("sequence_log_prob: index out of range");
    if (chosen[pick]) throw Error("sequence_log_prob: repeated slate index");
    total += masked_log_softmax(cube, t, chosen)[pick];
    chosen[pick] = 1;
  }
  return total;
}

}  // namespace dualrr
