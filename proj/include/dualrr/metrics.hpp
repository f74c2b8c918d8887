#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dualrr/models.hpp"
#include "dualrr/stream.hpp"

namespace dualrr {

// Fraction of slate positions where the two decoders pick the same candidate.
// `teacher_rows` are the teacher's pointer logits under forcing with
// `reference` (already duplicate-masked by the decoder); the student's row t
// is masked at reference[0..t-1] here before its argmax, so both argmaxes
// range over the same remaining candidates. Ties break to the lowest index.
double position_agreement(const Tensor& teacher_rows,
                          const Tensor& student_cube, const Slate& reference);

// Mean position_agreement over an evaluation set, teacher-forced with each
// record's exposed slate. Throws Error on an empty set or shape mismatches.
double ptar(const RankerModel& model,
            const std::vector<InteractionRecord>& eval_set);

// Fraction of strictly-teacher-ordered pairs that the student reverses;
// student ties count as half a flip. Throws Error when fewer than two scores
// or when every teacher pair is tied ("no ordered pairs").
double rfr(const std::vector<double>& teacher_scores,
           const std::vector<double>& student_scores);

// Probability that a positive outscores a negative, ties at half credit.
// Labels are 0/1. Throws Error unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct DistributionProfile {
  double top1_confidence = 0.0;  // max probability
  double branching_factor = 0.0; // 2^entropy, entropy in bits
};

// Profile of a discrete distribution. Requires dist to sum to 1 within 1e-9
// with non-negative entries; 0*log(0) counts as 0.
DistributionProfile distribution_profile(const std::vector<double>& dist);

// Jaccard similarity of the two slates' item sets: |A and B| / |A or B|.
// Two empty slates are identical, giving 1.
double sequence_consistency(const Slate& pred, const Slate& truth);

// Named metric values for one evaluation window, serialized for the CLI.
struct MetricReport {
  std::uint64_t window_start = 0;
  std::uint64_t window_end = 0;
  std::size_t samples = 0;
  std::vector<std::pair<std::string, double>> values;

  void add(const std::string& name, double value);
  // {"window_start":..,"window_end":..,"samples":..,"metrics":{..}}
  std::string to_json() const;
};

}  // namespace dualrr
