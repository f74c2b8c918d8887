#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "dualrr/models.hpp"
#include "dualrr/objectives.hpp"
#include "dualrr/tensor.hpp"

namespace dualrr {

// Fixed objective order for every reward vector and advantage tensor.
inline constexpr std::size_t kNumObjectives = 4;
enum ObjectiveIndex : std::size_t {
  kObjCtr = 0,   // network-estimated (or realized) click rate
  kObjLvr = 1,   // network-estimated (or realized) long-view rate
  kObjNdcg4 = 2, // relevance ranking quality, viewport 4
  kObjNdcg8 = 3, // relevance ranking quality, viewport 8
};

struct RewardVector {
  std::array<double, kNumObjectives> values{};
  bool posterior_ctr = false;  // true when realized feedback replaced the estimate
  bool posterior_lvr = false;
};

// Ranking quality of the first k positions: DCG/IDCG with linear gain and
// 1/log2(pos+1) discount. All-zero relevance returns 0 by convention.
double prior_ndcg(const Slate& slate, const std::vector<double>& relevance,
                  std::size_t k);

// Small feed-forward scorer: raw context plus the ordered features of the
// slate's items, squashed to (0,1) estimates of the click and long-view
// rates. It trains only against realized stream feedback and is excluded
// from policy-gradient updates (reward values enter the policy loss as
// plain numbers).
class RewardNet {
 public:
  RewardNet(const ModelConfig& cfg, std::size_t hidden, std::uint64_t seed);

  // [1,2] tensor: (click-rate estimate, long-view-rate estimate).
  Tensor forward(const Context& ctx, const CandidateList& cands,
                 const Slate& slate) const;

  // Squared-error training loss against realized per-slate rates.
  Tensor feedback_loss(const Context& ctx, const CandidateList& cands,
                       const Slate& slate, const std::vector<Feedback>& fb) const;

  std::vector<ParamRef> params() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// Assembles the per-slate reward vector: network estimates for the rate
// objectives, relevance ranking quality for the prior objectives (zeros when
// no relevance side-channel is available), and — for the exposed slate only —
// realized rates substituted over the network estimates.
RewardVector hybrid_reward(const Slate& slate, const Context& ctx,
                           const CandidateList& cands, const RewardNet& net,
                           const std::vector<double>& relevance,
                           const std::vector<Feedback>* posterior);

// Weighted sum of the hybrid reward's objectives: the scalar used to rank
// candidate slates at decision time (estimates + relevance priors only; no
// posterior feedback ever enters).
double fused_prior_score(const Slate& slate, const Context& ctx,
                         const CandidateList& cands, const RewardNet& net,
                         const std::vector<double>& relevance,
                         const std::array<double, kNumObjectives>& alpha);

enum class NormMode { kLdro, kGrpo };

// Two-stage advantage tensor over a batch of groups. Flat row-major
// [batch][group][objective] storage.
struct AdvantageMatrix {
  std::size_t n_batch = 0, n_group = 0, n_obj = 0;
  std::vector<double> group_stage;  // after within-group standardization
  std::vector<double> batch_stage;  // after cross-batch standardization (or copy)
  std::vector<double> fused;        // [batch][group], filled by fuse()

  std::size_t idx(std::size_t b, std::size_t g, std::size_t m) const {
    return (b * n_group + g) * n_obj + m;
  }
};

// Double-decoupled normalization: per (batch-slot, objective) standardize
// across the group (population sigma, +eps), then — in LDRO mode — per
// objective standardize again across all batch*group values. GRPO mode stops
// after the group stage. Groups need at least two members.
AdvantageMatrix double_decouple(const std::vector<std::vector<RewardVector>>& rewards,
                                double eps, NormMode mode);

// Weighted objective fusion into scalar advantages; fills and returns
// matrix.fused. alpha must have one weight per objective.
const std::vector<double>& fuse(AdvantageMatrix& matrix,
                                const std::array<double, kNumObjectives>& alpha);

}  // namespace dualrr
