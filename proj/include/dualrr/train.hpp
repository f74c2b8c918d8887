#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "dualrr/metrics.hpp"
#include "dualrr/models.hpp"
#include "dualrr/objectives.hpp"
#include "dualrr/reward.hpp"
#include "dualrr/stream.hpp"
#include "dualrr/tensor.hpp"

namespace dualrr {

// Everything a training run needs, flattenable to a key=value config file
// (nested model/env fields use dotted keys, e.g. "model.d_model").
struct TrainConfig {
  ModelConfig model;
  EnvConfig env;

  std::size_t group_size = 12;  // exploration slates per record (exposed included)
  std::size_t batch = 64;       // records per gradient step

  double lambda_bpr = 1.0;
  double lambda_kd = 1.0;
  double lambda_rl = 0.5;
  double beta_kl = 0.02;
  double beta_entropy = 0.05;
  double tau_sample = 0.8;
  double tau_distill = 1.0;
  std::size_t viewport = 4;   // full rank weight down to this position
  double delta_score = 0.5;   // utility gap needed to form a preference pair

  double lr_dense = 1e-3;   // dense ranker parameters (momentum method)
  double lr_embed = 1e-3;   // lookup-style parameters (accumulator method)
  double lr_reward = 1e-3;  // reward-net parameters

  std::size_t reward_hidden = 32;  // reward-net hidden width
  double adv_eps = 1e-8;           // standardization epsilon
  double warmup_frac = 0.1;        // leading fraction of steps with the policy loss off

  std::size_t total_steps = 0;
  std::uint64_t seed = 0;

  std::size_t eval_every = 0;     // 0 = no periodic snapshots
  std::size_t eval_records = 32;  // records per snapshot
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

  // Ablation switches.
  bool no_kd = false;              // drop the distillation term
  bool grpo_mode = false;          // group-stage-only advantage normalization
  bool no_rank_weight = false;     // flat position weights in the policy loss
  bool no_batch_decouple = false;  // skip the cross-batch standardization stage

  // Objective fusion weights, ordered as ObjectiveIndex.
  std::array<double, kNumObjectives> alpha{1.0, 1.0, 1.0, 1.0};

  void validate() const;  // throws UserError
};

// Flat key=value serialization: every field, fixed order, one per line.
// parse(serialize(c)) round-trips exactly.
std::string serialize_train_config(const TrainConfig& cfg);

// Parses the key=value text. Unknown or repeated keys, malformed values, and
// invalid field combinations all throw UserError. Lines that are blank or
// start with '#' are skipped. Unspecified fields keep their defaults.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);  // UserError on I/O

// One row of the per-step metrics log (and of the in-memory ring buffer).
struct StepMetrics {
  std::uint64_t step = 0;  // index of the completed step (0-based)
  LossBreakdown losses;
  double rnet_loss = 0.0;
  double group_reward = 0.0;  // mean raw fused reward over the step's groups
  double lambda_rl = 0.0;     // effective policy-loss weight this step
  bool rl_active = false;
  double base_rate = 0.0;  // drifting engagement base rate at the batch start

  bool operator==(const StepMetrics&) const = default;
};

// Canonical JSONL form of one metrics row; identical states serialize to
// identical bytes (no wall-clock content).
std::string metrics_to_json(const StepMetrics& m);

// Exploration groups and their fused advantages for one batch.
struct GroupPlan {
  std::vector<std::vector<Slate>> groups;  // [batch][group_size] slates, exposed first
  std::vector<double> advantages;          // [batch*group_size] fused, row-major
  double mean_raw_reward = 0.0;            // pre-normalization fused reward mean
};

// Joint online trainer: shared-encoder ranker (sequential teacher head +
// parallel student head) and the reward net, updated together from a
// closed-loop simulated stream. Each step runs four phases: (1) teacher
// likelihood + pairwise preference losses on the exposed slate, (2)
// distillation from the gradient-blocked teacher into the student, (3)
// exploration groups sampled around each record, scored, and double-
// decoupled into advantages, (4) one combined backward pass and a single
// simultaneous parameter update.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  // Resume: same config (total_steps may differ), state from the checkpoint.
  Trainer(const TrainConfig& cfg, const std::string& checkpoint_path);

  const TrainConfig& config() const;
  std::uint64_t step_count() const;
  const RankerModel& model() const;
  const RewardNet& reward_net() const;

  // Policy-loss weight at the current step: 0 during the warm-up fraction.
  double effective_lambda_rl() const;

  // Generates one batch from the closed-loop stream (behavior policy =
  // sample-and-rank over the current student) and trains on it.
  StepMetrics train_step();

  // Trains on an externally supplied batch (e.g. an ingested log).
  StepMetrics step_on_batch(const std::vector<InteractionRecord>& batch);

  // Phase-3 preparation without gradients: per record, the exposed slate
  // plus group_size-1 sampled slates, hybrid rewards (posterior substituted
  // on the exposed slate only), double-decoupling, and fusion.
  GroupPlan plan_groups(const std::vector<InteractionRecord>& batch) const;

  // Builds the full differentiable objective for a batch under the given
  // plan (empty plan = policy terms off) and weight. Advantages enter as
  // plain numbers. Optional outputs report the weighted term values.
  //
  // The distillation targets and divergence-penalty anchors are
  // gradient-blocked: the objective treats them as constants. By default
  // they are recomputed from the live parameters each call; a
  // finite-difference probe of this function must instead hold them fixed,
  // so it passes `frozen_targets` (one teacher-forced logits tensor per
  // record, from teacher_targets()) to pin the constants while parameters
  // are perturbed.
  Tensor combined_loss(const std::vector<InteractionRecord>& batch,
                       const GroupPlan& plan, double lambda_rl,
                       LossBreakdown* breakdown_out, double* rnet_out,
                       const std::vector<Tensor>* frozen_targets = nullptr) const;

  // Per-record teacher-forced logits at the current parameters, for use as
  // combined_loss frozen_targets.
  std::vector<Tensor> teacher_targets(
      const std::vector<InteractionRecord>& batch) const;

  // Evaluation snapshot on a fixed held-out stream (same records every
  // call): teacher/student position agreement, first-step rank flip rate,
  // ranking quality of the student's greedy slate against true relevance,
  // and mean sampled-group reward.
  MetricReport evaluate() const;

  // Complete state: parameters, optimizer accumulators, step counters,
  // stream position, metric ring buffer. Round-trips bit-exactly.
  void save_checkpoint(const std::string& path) const;

  static constexpr std::size_t kRingCapacity = 256;
  const std::deque<StepMetrics>& ring() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// Runs cfg.total_steps training steps (resuming from resume_checkpoint if
// non-empty), writing metrics.jsonl, eval.jsonl, periodic checkpoints, and
// checkpoint_final.ckpt under out_dir. A fresh run truncates existing logs;
// a resumed run appends. Returns the final checkpoint path.
std::string run_training(const TrainConfig& cfg, const std::string& out_dir,
                         const std::string& resume_checkpoint = "");

}  // namespace dualrr
