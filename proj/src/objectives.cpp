#include "dualrr/objectives.hpp"

#include <cmath>

namespace dualrr {

namespace {

void check_cube_against_slate(const Tensor& cube, const Slate& slate,
                              const char* what) {
  if (slate.size() != cube.rows())
    throw Error(std::string(what) + ": slate length != cube rows");
  for (std::size_t idx : slate)
    if (idx >= cube.cols())
      throw Error(std::string(what) + ": slate index out of range");
}

std::vector<std::uint8_t> prefix_mask(const Slate& slate, std::size_t t,
                                      std::size_t n) {
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t u = 0; u < t; ++u) mask[slate[u]] = 1;
  return mask;
}

}  // namespace

double utility_score(const Feedback& f, const UtilityWeights& w) {
  if (f.click && !f.exposure)
    throw Error("feedback: click without exposure violates the cascade");
  if (f.long_view && !f.click)
    throw Error("feedback: long view without click violates the cascade");
  return w.click * (f.click ? 1.0 : 0.0) + w.long_view * (f.long_view ? 1.0 : 0.0) +
         w.exposure * (f.exposure ? 1.0 : 0.0);
}

std::vector<PreferencePair> build_pairs(const Slate& exposed,
                                        const std::vector<Feedback>& feedback,
                                        double delta_score,
                                        const UtilityWeights& w) {
  if (delta_score <= 0.0) throw UserError("build_pairs: delta_score must be > 0");
  if (feedback.size() != exposed.size())
    throw Error("build_pairs: one feedback record per exposed position");
  std::vector<double> score(exposed.size());
  for (std::size_t i = 0; i < exposed.size(); ++i)
    score[i] = utility_score(feedback[i], w);
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < exposed.size(); ++i)
    for (std::size_t j = 0; j < exposed.size(); ++j)
      if (i != j && score[i] - score[j] > delta_score)
        pairs.push_back({exposed[i], exposed[j]});
  return pairs;
}

double rank_weight(std::size_t t, std::size_t viewport) {
  if (t == 0 || viewport == 0) throw Error("rank_weight: positions are 1-based");
  if (t <= viewport) return 1.0;
  return 1.0 / std::log2(static_cast<double>(t - viewport + 2));
}

Tensor mle_loss(const Tensor& forced_logits, const Slate& slate) {
  check_cube_against_slate(forced_logits, slate, "mle_loss");
  for (std::size_t t = 0; t < slate.size(); ++t)
    if (forced_logits.at(t, slate[t]) == kMaskSentinel)
      throw Error("mle_loss: step target is masked at its own step (mask bug)");
  Tensor lsm = log_softmax_rows(forced_logits);
  return scale(sum_all(pick_cols(lsm, slate)), -1.0);
}

Tensor bpr_loss(const Tensor& item_scores,
                const std::vector<PreferencePair>& pairs) {
  if (item_scores.rows() != 1) throw Error("bpr_loss: scores must be one row");
  if (pairs.empty()) return Tensor::scalar(0.0);
  Tensor loss = Tensor::scalar(0.0);
  for (const PreferencePair& p : pairs) {
    if (p.winner == p.loser) throw Error("bpr_loss: degenerate pair");
    if (p.winner >= item_scores.cols() || p.loser >= item_scores.cols())
      throw Error("bpr_loss: pair index out of range");
    Tensor gap = sub(pick(item_scores, 0, p.winner), pick(item_scores, 0, p.loser));
    // -ln sigmoid(gap) = softplus(-gap), computed without overflow.
    loss = add(loss, softplus(scale(gap, -1.0)));
  }
  return loss;
}

Tensor kd_loss(const Tensor& teacher_forced_logits, const Tensor& student_cube,
               double tau) {
  if (tau <= 0.0) throw UserError("kd_loss: temperature must be positive");
  if (teacher_forced_logits.rows() != student_cube.rows() ||
      teacher_forced_logits.cols() != student_cube.cols())
    throw Error("kd_loss: teacher/student shapes differ");
  // Teacher side is a constant: detach severs every path into its parameters.
  Tensor t_probs = softmax_rows(scale(teacher_forced_logits.detach(), 1.0 / tau));
  Tensor s_log = log_softmax_rows(scale(student_cube, 1.0 / tau));
  // KL(T||S) = sum T*ln T - sum T*ln S. The first term is a constant scalar;
  // entries with T exactly 0 (masked) contribute nothing to either term, and
  // T*ln S stays finite because ln S is finite on the unrestricted cube.
  double t_entropy_part = 0.0;
  for (std::size_t i = 0; i < t_probs.size(); ++i) {
    const double p = t_probs.data()[i];
    if (p > 0.0) t_entropy_part += p * std::log(p);
  }
  return add_scalar(scale(sum_all(mul(t_probs, s_log)), -1.0), t_entropy_part);
}

Tensor ldro_loss(const Tensor& student_cube, const std::vector<Slate>& group,
                 const std::vector<double>& advantages, std::size_t viewport) {
  if (group.empty()) throw Error("ldro_loss: empty group");
  if (group.size() != advantages.size())
    throw Error("ldro_loss: one advantage per slate");
  Tensor acc = Tensor::scalar(0.0);
  bool connected = false;
  for (std::size_t j = 0; j < group.size(); ++j) {
    const Slate& slate = group[j];
    check_cube_against_slate(student_cube, slate, "ldro_loss");
    if (advantages[j] == 0.0) continue;  // exact-zero advantage contributes nothing
    connected = true;
    Tensor weighted = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < slate.size(); ++t) {
      Tensor row = slice_rows(student_cube, t, 1);
      if (t > 0)
        row = masked_fill(row, prefix_mask(slate, t, student_cube.cols()),
                          kMaskSentinel);
      Tensor logp = pick(log_softmax_rows(row), 0, slate[t]);
      weighted = add(weighted, scale(logp, rank_weight(t + 1, viewport)));
    }
    acc = add(acc, scale(weighted, advantages[j]));
  }
  // Keep the result on the graph even when every advantage is zero, so the
  // surrounding total stays differentiable; the contribution is exactly zero.
  if (!connected) acc = add(acc, scale(sum_all(student_cube), 0.0));
  return scale(acc, -1.0 / static_cast<double>(group.size()));
}

RegularizerTerms regularizers(const Tensor& student_cube,
                              const Tensor& teacher_forced_logits,
                              const Slate& exposed) {
  if (teacher_forced_logits.rows() != student_cube.rows() ||
      teacher_forced_logits.cols() != student_cube.cols())
    throw Error("regularizers: teacher/student shapes differ");
  check_cube_against_slate(student_cube, exposed, "regularizers");
  const std::size_t n = student_cube.cols();

  // KL(S||T) per step on the teacher's support: the student row is masked to
  // the same prefix exclusions before normalizing, so both distributions live
  // on identical supports and the divergence is finite.
  Tensor t_log = log_softmax_rows(teacher_forced_logits.detach());
  Tensor kl = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < student_cube.rows(); ++t) {
    Tensor row = slice_rows(student_cube, t, 1);
    if (t > 0) row = masked_fill(row, prefix_mask(exposed, t, n), kMaskSentinel);
    Tensor s_log = log_softmax_rows(row);
    Tensor s_prob = softmax_rows(row);
    Tensor t_log_row = slice_rows(t_log, t, 1);
    // Masked coordinates have s_prob exactly 0 and finite logs on both sides.
    kl = add(kl, sum_all(mul(s_prob, sub(s_log, t_log_row))));
  }

  Tensor s_log_u = log_softmax_rows(student_cube);
  Tensor s_prob_u = softmax_rows(student_cube);
  Tensor entropy = scale(sum_all(mul(s_prob_u, s_log_u)), -1.0);

  return {kl, entropy};
}

Tensor total_loss(const LossTerms& t, const LossWeights& w) {
  Tensor rl = add(t.ldro, sub(scale(t.kl_penalty, w.beta_kl),
                              scale(t.entropy_bonus, w.beta_entropy)));
  Tensor out = add(t.mle, add(scale(t.bpr, w.lambda_bpr),
                              add(scale(t.kd, w.lambda_kd), scale(rl, w.lambda_rl))));
  return out;
}

LossBreakdown breakdown(const LossTerms& t, const LossWeights& w) {
  LossBreakdown b;
  b.mle = t.mle.item();
  b.bpr = t.bpr.item();
  b.kd = t.kd.item();
  b.ldro = t.ldro.item();
  b.kl_penalty = t.kl_penalty.item();
  b.entropy_bonus = t.entropy_bonus.item();
  b.total = total_loss(t, w).item();
  return b;
}

}  // namespace dualrr
