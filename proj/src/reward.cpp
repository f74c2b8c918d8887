#include "dualrr/reward.hpp"

#include <algorithm>
#include <cmath>

namespace dualrr {

double prior_ndcg(const Slate& slate, const std::vector<double>& relevance,
                  std::size_t k) {
  if (k == 0 || k > slate.size()) throw Error("ndcg: k must be in [1, slate length]");
  for (double r : relevance)
    if (r < 0.0) throw Error("ndcg: negative relevance");
  for (std::size_t idx : slate)
    if (idx >= relevance.size()) throw Error("ndcg: slate index out of range");

  double dcg = 0.0;
  for (std::size_t p = 1; p <= k; ++p)
    dcg += relevance[slate[p - 1]] / std::log2(static_cast<double>(p) + 1.0);

  std::vector<double> sorted = relevance;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double idcg = 0.0;
  for (std::size_t p = 1; p <= k && p <= sorted.size(); ++p)
    idcg += sorted[p - 1] / std::log2(static_cast<double>(p) + 1.0);

  if (idcg == 0.0) return 0.0;
  return dcg / idcg;
}

struct RewardNet::Impl {
  ModelConfig cfg;
  std::size_t hidden = 0;
  Tensor w1, b1, w2, b2;
  std::vector<ParamRef> registry;

  std::size_t input_dim() const {
    return cfg.d_user + cfg.d_query + cfg.d_hist + cfg.l_out * cfg.d_item;
  }
};

RewardNet::RewardNet(const ModelConfig& cfg, std::size_t hidden,
                     std::uint64_t seed)
    : impl_(std::make_shared<Impl>()) {
  cfg.validate();
  if (hidden == 0) throw UserError("reward net: hidden width must be positive");
  impl_->cfg = cfg;
  impl_->hidden = hidden;
  Rng rng(seed);
  const std::size_t in = impl_->input_dim();
  impl_->w1 = Tensor::param(in, hidden, rng, 0.05);
  impl_->b1 = Tensor::param(1, hidden, rng, 0.05);
  impl_->w2 = Tensor::param(hidden, 2, rng, 0.05);
  impl_->b2 = Tensor::param(1, 2, rng, 0.05);
  impl_->registry = {{"rnet.w1", impl_->w1, false},
                     {"rnet.b1", impl_->b1, false},
                     {"rnet.w2", impl_->w2, false},
                     {"rnet.b2", impl_->b2, false}};
}

Tensor RewardNet::forward(const Context& ctx, const CandidateList& cands,
                          const Slate& slate) const {
  const ModelConfig& cfg = impl_->cfg;
  if (slate.size() != cfg.l_out) throw Error("reward net: slate length != l_out");
  if (ctx.user.size() != cfg.d_user || ctx.query.size() != cfg.d_query ||
      ctx.hist.size() != cfg.d_hist)
    throw Error("reward net: context dims do not match config");
  std::vector<double> in;
  in.reserve(impl_->input_dim());
  in.insert(in.end(), ctx.user.begin(), ctx.user.end());
  in.insert(in.end(), ctx.query.begin(), ctx.query.end());
  in.insert(in.end(), ctx.hist.begin(), ctx.hist.end());
  for (std::size_t idx : slate) {
    if (idx >= cands.size()) throw Error("reward net: slate index out of range");
    if (cands[idx].feat.size() != cfg.d_item)
      throw Error("reward net: candidate feature dims do not match config");
    in.insert(in.end(), cands[idx].feat.begin(), cands[idx].feat.end());
  }
  Tensor x = Tensor::row(std::move(in));
  Tensor h = gelu(add_rowvec(matmul(x, impl_->w1), impl_->b1));
  return sigmoid(add_rowvec(matmul(h, impl_->w2), impl_->b2));
}

Tensor RewardNet::feedback_loss(const Context& ctx, const CandidateList& cands,
                                const Slate& slate,
                                const std::vector<Feedback>& fb) const {
  if (fb.size() != slate.size())
    throw Error("reward net: one feedback record per slate position");
  double clicks = 0.0, lvs = 0.0;
  for (const Feedback& f : fb) {
    utility_score(f);  // validates the cascade
    clicks += f.click ? 1.0 : 0.0;
    lvs += f.long_view ? 1.0 : 0.0;
  }
  const double l = static_cast<double>(slate.size());
  Tensor target = Tensor::from(1, 2, {clicks / l, lvs / l});
  Tensor diff = sub(forward(ctx, cands, slate), target);
  return sum_all(mul(diff, diff));
}

std::vector<ParamRef> RewardNet::params() const { return impl_->registry; }

RewardVector hybrid_reward(const Slate& slate, const Context& ctx,
                           const CandidateList& cands, const RewardNet& net,
                           const std::vector<double>& relevance,
                           const std::vector<Feedback>* posterior) {
  RewardVector rv;
  Tensor est = net.forward(ctx, cands, slate);
  rv.values[kObjCtr] = est.at(0, 0);
  rv.values[kObjLvr] = est.at(0, 1);
  if (relevance.empty()) {
    rv.values[kObjNdcg4] = 0.0;
    rv.values[kObjNdcg8] = 0.0;
  } else {
    rv.values[kObjNdcg4] = prior_ndcg(slate, relevance, std::min<std::size_t>(4, slate.size()));
    rv.values[kObjNdcg8] = prior_ndcg(slate, relevance, std::min<std::size_t>(8, slate.size()));
  }
  if (posterior) {
    if (posterior->size() != slate.size())
      throw Error("hybrid reward: posterior length != slate length");
    double clicks = 0.0, lvs = 0.0;
    for (const Feedback& f : *posterior) {
      utility_score(f);  // validates the cascade
      clicks += f.click ? 1.0 : 0.0;
      lvs += f.long_view ? 1.0 : 0.0;
    }
    const double l = static_cast<double>(slate.size());
    rv.values[kObjCtr] = clicks / l;
    rv.values[kObjLvr] = lvs / l;
    rv.posterior_ctr = true;
    rv.posterior_lvr = true;
  }
  return rv;
}

double fused_prior_score(const Slate& slate, const Context& ctx,
                         const CandidateList& cands, const RewardNet& net,
                         const std::vector<double>& relevance,
                         const std::array<double, kNumObjectives>& alpha) {
  const RewardVector rv = hybrid_reward(slate, ctx, cands, net, relevance, nullptr);
  double s = 0.0;
  for (std::size_t m = 0; m < kNumObjectives; ++m) s += alpha[m] * rv.values[m];
  return s;
}

AdvantageMatrix double_decouple(
    const std::vector<std::vector<RewardVector>>& rewards, double eps,
    NormMode mode) {
  if (rewards.empty()) throw Error("double_decouple: empty batch");
  const std::size_t b_n = rewards.size();
  const std::size_t g_n = rewards[0].size();
  if (g_n < 2) throw Error("double_decouple: groups need at least two members");
  for (const auto& group : rewards)
    if (group.size() != g_n) throw Error("double_decouple: ragged group sizes");

  AdvantageMatrix m;
  m.n_batch = b_n;
  m.n_group = g_n;
  m.n_obj = kNumObjectives;
  m.group_stage.assign(b_n * g_n * kNumObjectives, 0.0);

  // Stage one: standardize each objective within its group.
  for (std::size_t b = 0; b < b_n; ++b) {
    for (std::size_t obj = 0; obj < kNumObjectives; ++obj) {
      double mu = 0.0;
      for (std::size_t g = 0; g < g_n; ++g) mu += rewards[b][g].values[obj];
      mu /= static_cast<double>(g_n);
      double var = 0.0;
      for (std::size_t g = 0; g < g_n; ++g) {
        const double d = rewards[b][g].values[obj] - mu;
        var += d * d;
      }
      var /= static_cast<double>(g_n);
      const double denom = std::sqrt(var) + eps;
      for (std::size_t g = 0; g < g_n; ++g)
        m.group_stage[m.idx(b, g, obj)] =
            (rewards[b][g].values[obj] - mu) / denom;
    }
  }

  if (mode == NormMode::kGrpo) {
    m.batch_stage = m.group_stage;
    return m;
  }

  // Stage two: standardize each objective across every group in the batch.
  m.batch_stage.assign(m.group_stage.size(), 0.0);
  const double count = static_cast<double>(b_n * g_n);
  for (std::size_t obj = 0; obj < kNumObjectives; ++obj) {
    double mu = 0.0;
    for (std::size_t b = 0; b < b_n; ++b)
      for (std::size_t g = 0; g < g_n; ++g) mu += m.group_stage[m.idx(b, g, obj)];
    mu /= count;
    double var = 0.0;
    for (std::size_t b = 0; b < b_n; ++b)
      for (std::size_t g = 0; g < g_n; ++g) {
        const double d = m.group_stage[m.idx(b, g, obj)] - mu;
        var += d * d;
      }
    var /= count;
    const double denom = std::sqrt(var) + eps;
    for (std::size_t b = 0; b < b_n; ++b)
      for (std::size_t g = 0; g < g_n; ++g)
        m.batch_stage[m.idx(b, g, obj)] =
            (m.group_stage[m.idx(b, g, obj)] - mu) / denom;
  }
  return m;
}

const std::vector<double>& fuse(AdvantageMatrix& matrix,
                                const std::array<double, kNumObjectives>& alpha) {
  if (matrix.batch_stage.size() != matrix.n_batch * matrix.n_group * matrix.n_obj)
    throw Error("fuse: normalize before fusing");
  matrix.fused.assign(matrix.n_batch * matrix.n_group, 0.0);
  for (std::size_t b = 0; b < matrix.n_batch; ++b)
    for (std::size_t g = 0; g < matrix.n_group; ++g) {
      double s = 0.0;
      for (std::size_t obj = 0; obj < matrix.n_obj; ++obj)
        s += alpha[obj] * matrix.batch_stage[matrix.idx(b, g, obj)];
      matrix.fused[b * matrix.n_group + g] = s;
    }
  return matrix.fused;
}

}  // namespace dualrr
