#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dualrr/models.hpp"
#include "dualrr/objectives.hpp"

namespace dualrr {

// Ground-truth interaction environment. Each request draws a fresh user and
// candidate pool from seeded latent factors; engagement follows a cascading
// examination model whose base rate drifts sinusoidally over time.
struct EnvConfig {
  std::size_t n_cand = 12;        // candidates per request
  std::size_t l_out = 6;          // slate length
  std::size_t latent_dim = 8;     // user/item latent width (= feature width)
  std::size_t d_query = 4;        // query noise width
  double base_rate = 0.3;         // mean click base rate b0
  double drift_amplitude = 0.5;   // a in base(step) = b0*(1 + a*sin(...)), [0,1)
  double drift_period = 2000.0;   // steps per full drift cycle
  double examination_decay = 0.85;  // per-position attention decay d, [0,1]
  double utility_scale = 1.0;     // gain on latent utilities
  std::uint64_t seed = 0;

  // Rejects configs whose drifting base rate could leave (0,1), and any
  // degenerate sizes. Throws UserError.
  void validate() const;
};

// One logged request/response/feedback round plus the oracle-only relevance
// side channel (never fed to models).
struct InteractionRecord {
  std::uint64_t step = 0;
  Context ctx;
  CandidateList cands;
  Slate exposed;                       // one entry per slate position
  std::vector<Feedback> feedback;      // aligned with `exposed`
  std::vector<double> true_relevance;  // sigmoid(utility), one per candidate
  bool operator==(const InteractionRecord&) const = default;
};

// Latent utility of every candidate for this user:
//   u_i = utility_scale * dot(user, feat_i) / sqrt(latent_dim).
std::vector<double> latent_utilities(const Context& ctx,
                                     const CandidateList& cands,
                                     const EnvConfig& env);

class StreamSim {
 public:
  // Maps a request to the slate that gets shown.
  using Policy = std::function<Slate(const Context&, const CandidateList&)>;

  explicit StreamSim(const EnvConfig& cfg);

  // Generates `batch` consecutive records, advancing one step per record.
  // The policy picks each exposed slate; feedback is sampled per position:
  //   P(examined at t) = d^(t-1)
  //   P(click | examined) = base(step) * sigmoid(u)
  //   P(long view | click) = sigmoid(u - 1)
  // so marginally P(click at t) = base(step) * sigmoid(u) * d^(t-1).
  // Draw order per record is fixed: user, query, hist noise, candidate
  // features, then per-position engagement. Throws Error if the policy
  // returns an invalid slate.
  std::vector<InteractionRecord> next_batch(const Policy& policy,
                                            std::size_t batch);

  // b0 * (1 + a * sin(2*pi*step/period)).
  double base_rate_at(std::uint64_t step) const;

  std::uint64_t step() const { return step_; }
  std::uint64_t rng_state() const { return rng_.state(); }
  void restore(std::uint64_t step, std::uint64_t rng_state);
  const EnvConfig& config() const { return cfg_; }

  // Seeded logging policy: uniform random ordered selection of `l_out`
  // distinct candidates.
  static Policy uniform_policy(std::uint64_t seed, std::size_t l_out);

 private:
  EnvConfig cfg_;
  Rng rng_;
  std::uint64_t step_ = 0;
};

// Visits every ordered selection of `l` distinct indices from {0..n-1} in
// lexicographic order. Throws Error when n < l or l == 0.
void for_each_slate(std::size_t n, std::size_t l,
                    const std::function<void(const Slate&)>& visitor);

// Exact expected page utility of a slate under the ground-truth engagement
// model, evaluated at the period-average base rate b0 (the argmax over slates
// is invariant to the base rate, which scales all slates equally):
//   sum_t d^(t-1) * (w_exp + b0 * sigmoid(u_t) * (w_click + w_lv * sigmoid(u_t - 1)))
double expected_slate_reward(const Slate& slate,
                             const std::vector<double>& utilities,
                             const EnvConfig& env);

// Exhaustive argmax of expected_slate_reward over all l_out-permutations of
// the candidates. Ties resolve to the lexicographically smallest slate.
// Throws Error when cands.size() > 10 or env.l_out > 5 (enumeration bound).
std::pair<Slate, double> oracle_best_slate(const Context& ctx,
                                           const CandidateList& cands,
                                           const EnvConfig& env);

// One record per line: {step, ctx:{user,query,hist}, cands:[{id,feat}..],
// exposed, feedback:[{exposure,click,long_view}..], relevance}. Doubles are
// written as shortest round-trip decimals, so write/ingest is lossless.
void write_jsonl(const std::string& path,
                 const std::vector<InteractionRecord>& records);

// Parses and validates a JSONL interaction log. Any malformed line (bad JSON,
// missing/mistyped field, feedback cascade violation, slate index out of
// range or repeated, mismatched lengths) throws UserError naming the line.
std::vector<InteractionRecord> ingest_log(const std::string& path);

}  // namespace dualrr
