#pragma once

#include <cstdint>
#include <vector>

#include "dualrr/models.hpp"
#include "dualrr/tensor.hpp"

namespace dualrr {

// A group of slates drawn in parallel from one logits cube, plus each
// slate's sequence log-probability under the unperturbed policy.
struct SampledGroup {
  std::vector<Slate> slates;
  std::vector<double> log_probs;
};

// Draws `group_size` slates from the cube by perturbed argmax: position by
// position, log pi(i | remaining) / tau plus standard Gumbel noise, argmax
// over the items the slate has not used yet (ties break to the lowest index).
// Noise comes from a counter generator keyed by (seed, step, slate, position,
// item), so results are reproducible without storing the noise block, and no
// model forward passes happen here — the cube is the only model artifact.
SampledGroup gumbel_sample_group(const Tensor& cube, std::size_t group_size,
                                 double tau, std::uint64_t seed,
                                 std::uint64_t step);

// Sum over positions of the duplicate-masked log softmax at the slate's
// picks: log-probability that sequential sampling at temperature 1 would
// produce exactly this slate. Always <= 0.
double sequence_log_prob(const Tensor& cube, const Slate& slate);

// Noise-free decode from a logits cube: position by position, argmax over
// the candidates the slate has not used yet (ties break to the lowest
// index). The parallel-decoder analogue of greedy pointer decoding.
Slate greedy_slate(const Tensor& cube);

}  // namespace dualrr
