#include "dualrr/metrics.hpp"

#include <cmath>
#include <set>

#include "json.hpp"

namespace dualrr {

namespace {

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  std::size_t best = 0;
  double best_v = t.at(row, 0);
  for (std::size_t j = 1; j < t.cols(); ++j)
    if (t.at(row, j) > best_v) {
      best_v = t.at(row, j);
      best = j;
    }
  return best;
}

}  // namespace

double position_agreement(const Tensor& teacher_rows,
                          const Tensor& student_cube, const Slate& reference) {
  if (teacher_rows.rows() != student_cube.rows() ||
      teacher_rows.cols() != student_cube.cols())
    throw Error("position agreement: decoder output shapes differ");
  const std::size_t l = teacher_rows.rows();
  if (l == 0) throw Error("position agreement: empty slate");
  if (reference.size() < l)
    throw Error("position agreement: reference shorter than the decode");

  std::size_t agree = 0;
  std::vector<bool> placed(student_cube.cols(), false);
  for (std::size_t t = 0; t < l; ++t) {
    const std::size_t y_teacher = argmax_row(teacher_rows, t);
    std::size_t y_student = student_cube.cols();
    double best = 0.0;
    for (std::size_t j = 0; j < student_cube.cols(); ++j) {
      if (placed[j]) continue;
      const double v = student_cube.at(t, j);
      if (y_student == student_cube.cols() || v > best) {
        best = v;
        y_student = j;
      }
    }
    if (y_teacher == y_student) ++agree;
    if (reference[t] >= placed.size())
      throw Error("position agreement: reference index out of range");
    placed[reference[t]] = true;
  }
  return static_cast<double>(agree) / static_cast<double>(l);
}

double ptar(const RankerModel& model,
            const std::vector<InteractionRecord>& eval_set) {
  if (eval_set.empty()) throw Error("ptar: empty evaluation set");
  double acc = 0.0;
  for (const InteractionRecord& rec : eval_set) {
    EncoderOutput enc = model.encode(rec.ctx, rec.cands);
    Tensor teacher = model.teacher_forced_logits(enc, rec.exposed);
    Tensor student = model.student_forward(enc);
    if (student.rows() != rec.exposed.size())
      throw Error("ptar: record slate length does not match the model");
    acc += position_agreement(teacher, student, rec.exposed);
  }
  return acc / static_cast<double>(eval_set.size());
}

double rfr(const std::vector<double>& teacher_scores,
           const std::vector<double>& student_scores) {
  const std::size_t n = teacher_scores.size();
  if (n < 2) throw Error("rfr: need at least two scores");
  if (student_scores.size() != n) throw Error("rfr: score lengths differ");
  std::size_t ordered = 0;
  double flips = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (!(teacher_scores[i] > teacher_scores[j])) continue;
      ++ordered;
      if (student_scores[i] < student_scores[j])
        flips += 1.0;
      else if (student_scores[i] == student_scores[j])
        flips += 0.5;
    }
  if (ordered == 0) throw Error("rfr: no ordered pairs");
  return flips / static_cast<double>(ordered);
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error("auc: length mismatch");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error("auc: labels must be 0 or 1");
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  }
  if (pos.empty() || neg.empty())
    throw Error("auc: need both a positive and a negative example");
  double wins = 0.0;
  for (double p : pos)
    for (double q : neg) {
      if (p > q)
        wins += 1.0;
      else if (p == q)
        wins += 0.5;
    }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

DistributionProfile distribution_profile(const std::vector<double>& dist) {
  if (dist.empty()) throw Error("distribution profile: empty distribution");
  double sum = 0.0, top1 = 0.0, entropy_bits = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0)) throw Error("distribution profile: negative probability");
    sum += p;
    if (p > top1) top1 = p;
    if (p > 0.0) entropy_bits -= p * std::log2(p);
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error("distribution profile: probabilities do not sum to one");
  DistributionProfile out;
  out.top1_confidence = top1;
  out.branching_factor = std::exp2(entropy_bits);
  return out;
}

double sequence_consistency(const Slate& pred, const Slate& truth) {
  std::set<std::size_t> a(pred.begin(), pred.end());
  std::set<std::size_t> b(truth.begin(), truth.end());
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (std::size_t v : a) inter += b.count(v);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

void MetricReport::add(const std::string& name, double value) {
  values.emplace_back(name, value);
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["window_start"] = window_start;
  j["window_end"] = window_end;
  j["samples"] = samples;
  nlohmann::ordered_json m = nlohmann::ordered_json::object();
  for (const auto& [name, value] : values) m[name] = value;
  j["metrics"] = std::move(m);
  return j.dump();
}

}  // namespace dualrr
