#pragma once

#include <cstddef>
#include <vector>

#include "dualrr/models.hpp"
#include "dualrr/tensor.hpp"

namespace dualrr {

// Per-position engagement flags. Cascade: long_view implies click implies
// exposure; violations are data bugs and rejected.
struct Feedback {
  bool exposure = false;
  bool click = false;
  bool long_view = false;
  bool operator==(const Feedback&) const = default;
};

struct UtilityWeights {
  double click = 1.0;
  double long_view = 2.0;
  double exposure = 0.1;
};

// Scalar utility of one feedback record: the weighted indicator sum.
// Exposure-only = 0.1, +click = 1.1, +long view = 3.1 with defaults.
double utility_score(const Feedback& f, const UtilityWeights& w = {});

// Ordered preference: candidate `winner` beat candidate `loser` by more than
// the separation threshold.
struct PreferencePair {
  std::size_t winner = 0;
  std::size_t loser = 0;
};

// All ordered pairs of exposed candidates whose utility gap exceeds
// delta_score. Indices in the result refer to the candidate list, not slate
// positions. delta_score must be positive.
std::vector<PreferencePair> build_pairs(const Slate& exposed,
                                        const std::vector<Feedback>& feedback,
                                        double delta_score,
                                        const UtilityWeights& w = {});

// Position decay: full weight inside the viewport of size `viewport`, then
// 1/log2(t - viewport + 2) below it. `t` is 1-based.
double rank_weight(std::size_t t, std::size_t viewport);

// Teacher-forcing negative log-likelihood of the exposed slate:
//   -sum_t log softmax(forced_logits[t])[slate[t]].
// Throws if any step's own target carries the mask sentinel (mask bug).
Tensor mle_loss(const Tensor& forced_logits, const Slate& slate);

// Pairwise preference loss over first-step pointer scores:
//   sum over pairs of -ln sigmoid(s_winner - s_loser); zero for no pairs.
Tensor bpr_loss(const Tensor& item_scores, const std::vector<PreferencePair>& pairs);

// Sequence-level distillation: sum_t KL(pi_T,t || pi_S,t) with temperature
// tau applied to both sides. The teacher side is detached internally, so no
// gradient ever reaches teacher parameters through this loss.
Tensor kd_loss(const Tensor& teacher_forced_logits, const Tensor& student_cube,
               double tau);

// Group policy-gradient surrogate:
//   -(1/G) * sum_j A_j * sum_t w_t * log pi_S(slate_j[t] | already-placed),
// where each position's distribution excludes the slate's earlier picks
// (matching how the slates were sampled) and w_t is rank_weight.
// Advantages are plain numbers (no gradient).
Tensor ldro_loss(const Tensor& student_cube, const std::vector<Slate>& group,
                 const std::vector<double>& advantages, std::size_t viewport);

struct RegularizerTerms {
  Tensor kl_penalty;     // sum_t KL(pi_S,t || pi_T,t), matched supports
  Tensor entropy_bonus;  // sum_t H(pi_S,t), unrestricted rows
};

// Trust-region penalty and exploration bonus for the policy update. The KL
// term restricts the student row to the teacher's support at that step (the
// teacher-forced distribution assigns exact zeros to prefix members, so the
// unrestricted divergence would be infinite by construction).
RegularizerTerms regularizers(const Tensor& student_cube,
                              const Tensor& teacher_forced_logits,
                              const Slate& exposed);

struct LossWeights {
  double lambda_bpr = 1.0;
  double lambda_kd = 1.0;
  double lambda_rl = 0.5;
  double beta_kl = 0.02;
  double beta_entropy = 0.05;
};

struct LossTerms {
  Tensor mle, bpr, kd, ldro, kl_penalty, entropy_bonus;
};

// total = mle + lambda_bpr*bpr + lambda_kd*kd
//       + lambda_rl*(ldro + beta_kl*kl_penalty - beta_entropy*entropy_bonus)
Tensor total_loss(const LossTerms& t, const LossWeights& w);

struct LossBreakdown {
  double mle = 0, bpr = 0, kd = 0, ldro = 0, kl_penalty = 0, entropy_bonus = 0,
         total = 0;
  bool operator==(const LossBreakdown&) const = default;
};

LossBreakdown breakdown(const LossTerms& t, const LossWeights& w);

}  // namespace dualrr
