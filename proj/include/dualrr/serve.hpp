#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dualrr/models.hpp"
#include "dualrr/reward.hpp"

namespace dualrr {

// One inference request: the context, the candidate pool, and the sampling
// knobs. Deliberately carries no engagement feedback and no relevance side
// channel — serving decisions are made from model estimates alone, and the
// request shape is what enforces that.
struct ServeRequest {
  Context ctx;
  CandidateList cands;
  std::size_t n_samples = 8;  // search breadth
  double tau = 0.8;           // sampling temperature
  std::uint64_t seed = 0;     // noise key; fixes the result exactly
};

struct ServeResult {
  Slate best;
  double best_score = 0.0;          // max over all_scores
  std::vector<double> all_scores;   // one fused score per sampled slate
  std::uint64_t forwards_used = 0;  // parallel-decoder invocations (one)
  double wall_time = 0.0;           // seconds
};

// Sample-and-rank: one encoder pass plus ONE parallel-decoder pass produce
// the full position-by-candidate logits cube; n_samples slates are drawn by
// perturbed argmax from a counter generator keyed by the request seed; each
// slate is scored by the fused decision-time reward (network rate estimates
// plus whatever priors are available — at serving, none); the best-scoring
// slate wins, ties to the earliest sample. Deterministic given the request.
ServeResult serve(const ServeRequest& req, const RankerModel& model,
                  const RewardNet& rnet,
                  const std::array<double, kNumObjectives>& alpha);

// Line protocol for the CLI: one JSON object per line. Requests require
// "ctx" ({"user","query","hist"}) and "cands" ([{"id","feat"}...]);
// "n", "tau", "seed" are optional with the defaults above. Unknown fields
// are rejected — a request cannot smuggle in data the pipeline must not see.
ServeRequest parse_serve_request(const std::string& json_line);
std::string serve_result_to_json(const ServeResult& r);

// Side-by-side cost of the two decoding branches. Forward counts are exact
// contracts; wall times are measurements for reporting, never thresholds.
struct BenchReport {
  std::size_t trials = 0;
  std::size_t teacher_l_out = 0;
  std::size_t serve_samples = 0;  // breadth used on the serve path
  std::uint64_t teacher_forwards_per_decode = 0;
  std::uint64_t student_forwards_per_serve = 0;
  double teacher_median_s = 0.0;
  double teacher_p99_s = 0.0;
  double serve_median_s = 0.0;
  double serve_p99_s = 0.0;
  std::string to_text() const;
  std::string to_json() const;
};

// Times sequential greedy decoding against the full sample-and-rank path
// (breadth 8) over `trials` synthetic requests with `n_cand` candidates
// each. The models must share d_model; they may be the same object.
BenchReport bench_decoding(const RankerModel& teacher,
                           const RankerModel& student, const RewardNet& rnet,
                           std::size_t trials, std::size_t n_cand,
                           std::uint64_t seed);

}  // namespace dualrr
