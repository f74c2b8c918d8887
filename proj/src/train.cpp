#include "dualrr/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "dualrr/checkpoint.hpp"
#include "dualrr/sampler.hpp"
#include "json.hpp"

namespace dualrr {

namespace {

// ---- flat key=value config format ----

std::string fmt_double(double v) { return nlohmann::json(v).dump(); }

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* b = v.data();
  const char* e = b + v.size();
  auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc{} || r.ptr != e)
    throw UserError("config: bad integer for '" + key + "': " + v);
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* b = v.data();
  const char* e = b + v.size();
  auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc{} || r.ptr != e)
    throw UserError("config: bad number for '" + key + "': " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UserError("config: bad boolean for '" + key + "': " + v);
}

struct Field {
  const char* key;
  std::string (*get)(const TrainConfig&);
  void (*set)(TrainConfig&, const std::string&);
};

#define DRR_U64_FIELD(KEY, EXPR)                                           \
  Field{KEY, [](const TrainConfig& c) { return std::to_string(c.EXPR); },  \
        [](TrainConfig& c, const std::string& v) {                         \
          c.EXPR = static_cast<std::size_t>(parse_u64(KEY, v));            \
        }}
#define DRR_SEED_FIELD(KEY, EXPR)                                          \
  Field{KEY, [](const TrainConfig& c) { return std::to_string(c.EXPR); },  \
        [](TrainConfig& c, const std::string& v) { c.EXPR = parse_u64(KEY, v); }}
#define DRR_F64_FIELD(KEY, EXPR)                                          \
  Field{KEY, [](const TrainConfig& c) { return fmt_double(c.EXPR); },     \
        [](TrainConfig& c, const std::string& v) { c.EXPR = parse_f64(KEY, v); }}
#define DRR_BOOL_FIELD(KEY, EXPR)                                            \
  Field{KEY,                                                                 \
        [](const TrainConfig& c) -> std::string {                            \
          return c.EXPR ? "true" : "false";                                  \
        },                                                                   \
        [](TrainConfig& c, const std::string& v) { c.EXPR = parse_bool(KEY, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      DRR_U64_FIELD("model.d_model", model.d_model),
      DRR_U64_FIELD("model.n_heads", model.n_heads),
      DRR_U64_FIELD("model.d_ffn", model.d_ffn),
      DRR_U64_FIELD("model.enc_layers", model.enc_layers),
      DRR_U64_FIELD("model.teacher_layers", model.teacher_layers),
      DRR_U64_FIELD("model.l_out", model.l_out),
      DRR_U64_FIELD("model.d_item", model.d_item),
      DRR_U64_FIELD("model.d_user", model.d_user),
      DRR_U64_FIELD("model.d_query", model.d_query),
      DRR_U64_FIELD("model.d_hist", model.d_hist),
      DRR_U64_FIELD("env.n_cand", env.n_cand),
      DRR_U64_FIELD("env.l_out", env.l_out),
      DRR_U64_FIELD("env.latent_dim", env.latent_dim),
      DRR_U64_FIELD("env.d_query", env.d_query),
      DRR_F64_FIELD("env.base_rate", env.base_rate),
      DRR_F64_FIELD("env.drift_amplitude", env.drift_amplitude),
      DRR_F64_FIELD("env.drift_period", env.drift_period),
      DRR_F64_FIELD("env.examination_decay", env.examination_decay),
      DRR_F64_FIELD("env.utility_scale", env.utility_scale),
      DRR_SEED_FIELD("env.seed", env.seed),
      DRR_U64_FIELD("group_size", group_size),
      DRR_U64_FIELD("batch", batch),
      DRR_F64_FIELD("lambda_bpr", lambda_bpr),
      DRR_F64_FIELD("lambda_kd", lambda_kd),
      DRR_F64_FIELD("lambda_rl", lambda_rl),
      DRR_F64_FIELD("beta_kl", beta_kl),
      DRR_F64_FIELD("beta_entropy", beta_entropy),
      DRR_F64_FIELD("tau_sample", tau_sample),
      DRR_F64_FIELD("tau_distill", tau_distill),
      DRR_U64_FIELD("viewport", viewport),
      DRR_F64_FIELD("delta_score", delta_score),
      DRR_F64_FIELD("lr_dense", lr_dense),
      DRR_F64_FIELD("lr_embed", lr_embed),
      DRR_F64_FIELD("lr_reward", lr_reward),
      DRR_U64_FIELD("reward_hidden", reward_hidden),
      DRR_F64_FIELD("adv_eps", adv_eps),
      DRR_F64_FIELD("warmup_frac", warmup_frac),
      DRR_U64_FIELD("total_steps", total_steps),
      DRR_SEED_FIELD("seed", seed),
      DRR_U64_FIELD("eval_every", eval_every),
      DRR_U64_FIELD("eval_records", eval_records),
      DRR_U64_FIELD("checkpoint_every", checkpoint_every),
      DRR_BOOL_FIELD("no_kd", no_kd),
      DRR_BOOL_FIELD("grpo_mode", grpo_mode),
      DRR_BOOL_FIELD("no_rank_weight", no_rank_weight),
      DRR_BOOL_FIELD("no_batch_decouple", no_batch_decouple),
      DRR_F64_FIELD("alpha_ctr", alpha[kObjCtr]),
      DRR_F64_FIELD("alpha_lvr", alpha[kObjLvr]),
      DRR_F64_FIELD("alpha_ndcg4", alpha[kObjNdcg4]),
      DRR_F64_FIELD("alpha_ndcg8", alpha[kObjNdcg8]),
  };
  return f;
}

#undef DRR_U64_FIELD
#undef DRR_SEED_FIELD
#undef DRR_F64_FIELD
#undef DRR_BOOL_FIELD

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t meta_u64(const Checkpoint& ck, const std::string& key) {
  return parse_u64(key, ck.meta_at(key));
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  env.validate();
  if (model.l_out != env.l_out)
    throw UserError("config: model.l_out and env.l_out must match");
  if (model.d_item != env.latent_dim)
    throw UserError("config: model.d_item must equal env.latent_dim");
  if (model.d_user != env.latent_dim)
    throw UserError("config: model.d_user must equal env.latent_dim");
  if (model.d_hist != env.latent_dim)
    throw UserError("config: model.d_hist must equal env.latent_dim");
  if (model.d_query != env.d_query)
    throw UserError("config: model.d_query must equal env.d_query");
  if (group_size < 2) throw UserError("config: group_size must be at least 2");
  if (batch == 0) throw UserError("config: batch must be positive");
  for (double w : {lambda_bpr, lambda_kd, lambda_rl, beta_kl, beta_entropy})
    if (!(w >= 0.0)) throw UserError("config: loss weights must be non-negative");
  if (!(tau_sample > 0.0) || !(tau_distill > 0.0))
    throw UserError("config: temperatures must be positive");
  if (viewport == 0) throw UserError("config: viewport must be positive");
  if (!(delta_score > 0.0))
    throw UserError("config: delta_score must be positive");
  for (double lr : {lr_dense, lr_embed, lr_reward})
    if (!(lr > 0.0)) throw UserError("config: learning rates must be positive");
  if (reward_hidden == 0)
    throw UserError("config: reward_hidden must be positive");
  if (!(adv_eps > 0.0)) throw UserError("config: adv_eps must be positive");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0))
    throw UserError("config: warmup_frac must lie in [0,1]");
  if (eval_records == 0)
    throw UserError("config: eval_records must be positive");
  for (double a : alpha)
    if (!(a >= 0.0)) throw UserError("config: fusion weights must be non-negative");
}

std::string serialize_train_config(const TrainConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key;
    out += '=';
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

TrainConfig parse_train_config(const std::string& text) {
  static const std::map<std::string, const Field*> index = [] {
    std::map<std::string, const Field*> m;
    for (const Field& f : fields()) m[f.key] = &f;
    return m;
  }();
  TrainConfig cfg;
  std::map<std::string, bool> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UserError("config line " + std::to_string(line_no) +
                      ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end())
      throw UserError("config line " + std::to_string(line_no) +
                      ": unknown key '" + key + "'");
    if (seen[key])
      throw UserError("config line " + std::to_string(line_no) +
                      ": duplicate key '" + key + "'");
    seen[key] = true;
    it->second->set(cfg, val);
  }
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_train_config(text);
}

std::string metrics_to_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["mle"] = m.losses.mle;
  j["bpr"] = m.losses.bpr;
  j["kd"] = m.losses.kd;
  j["ldro"] = m.losses.ldro;
  j["kl_penalty"] = m.losses.kl_penalty;
  j["entropy_bonus"] = m.losses.entropy_bonus;
  j["total"] = m.losses.total;
  j["rnet"] = m.rnet_loss;
  j["group_reward"] = m.group_reward;
  j["lambda_rl"] = m.lambda_rl;
  j["rl_active"] = m.rl_active;
  j["base_rate"] = m.base_rate;
  return j.dump();
}

// ---- trainer ----

namespace {

constexpr std::size_t kRingFields = 13;
constexpr double kAdamBeta1 = 0.99;
constexpr double kAdamBeta2 = 0.9999;
constexpr double kAdamEps = 1e-8;
constexpr double kAdagradInitAccum = 3.0;

struct DerivedSeeds {
  std::uint64_t model, rnet, behavior, sample, eval_env, eval_policy, eval_sample;
};

DerivedSeeds derive_seeds(std::uint64_t seed) {
  Rng r(seed);
  DerivedSeeds s;
  s.model = r.next_u64();
  s.rnet = r.next_u64();
  s.behavior = r.next_u64();
  s.sample = r.next_u64();
  s.eval_env = r.next_u64();
  s.eval_policy = r.next_u64();
  s.eval_sample = r.next_u64();
  return s;
}

}  // namespace

struct Trainer::Impl {
  TrainConfig cfg;
  DerivedSeeds seeds;
  RankerModel model;
  RewardNet rnet;
  StreamSim sim;
  std::vector<ParamRef> params;
  std::map<std::string, std::vector<double>> acc;  // accumulator method (lookup params)
  std::map<std::string, std::vector<double>> m1;   // first moment (dense params)
  std::map<std::string, std::vector<double>> m2;   // second moment (dense params)
  std::uint64_t step = 0;
  std::uint64_t adam_t = 0;
  std::deque<StepMetrics> ring;

  Impl(const TrainConfig& c, const DerivedSeeds& s)
      : cfg(c),
        seeds(s),
        model(c.model, s.model),
        rnet(c.model, c.reward_hidden, s.rnet),
        sim(c.env) {
    for (ParamRef& p : model.params()) params.push_back(p);
    for (ParamRef& p : rnet.params()) params.push_back(p);
    for (const ParamRef& p : params) {
      if (p.embedding)
        acc[p.name].assign(p.tensor.size(), kAdagradInitAccum);
      else {
        m1[p.name].assign(p.tensor.size(), 0.0);
        m2[p.name].assign(p.tensor.size(), 0.0);
      }
    }
  }

  std::uint64_t warmup_steps() const {
    return static_cast<std::uint64_t>(
        cfg.warmup_frac * static_cast<double>(cfg.total_steps) + 1e-9);
  }

  // One simultaneous update of every parameter that received a gradient.
  void apply_updates() {
    adam_t += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_t));
    for (ParamRef& p : params) {
      if (!p.tensor.has_grad()) continue;  // untouched branch: no state decay
      const double* g = p.tensor.grad();
      double* x = p.tensor.data();
      const std::size_t n = p.tensor.size();
      if (p.embedding) {
        std::vector<double>& a = acc.at(p.name);
        for (std::size_t i = 0; i < n; ++i) {
          a[i] += g[i] * g[i];
          x[i] -= cfg.lr_embed * g[i] / std::sqrt(a[i]);
        }
      } else {
        const bool is_rnet = p.name.rfind("rnet.", 0) == 0;
        const double lr = is_rnet ? cfg.lr_reward : cfg.lr_dense;
        std::vector<double>& m = m1.at(p.name);
        std::vector<double>& v = m2.at(p.name);
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
          v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
          x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
        }
      }
    }
  }

  // Live serving behavior: sample a group around the current student and
  // expose the slate the prior reward ranks highest (no relevance or
  // posterior access at decision time).
  StreamSim::Policy behavior_policy() {
    return [this](const Context& ctx, const CandidateList& cands) -> Slate {
      EncoderOutput enc = model.encode(ctx, cands);
      Tensor cube = model.student_forward(enc);
      SampledGroup g = gumbel_sample_group(cube, cfg.group_size, cfg.tau_sample,
                                           seeds.behavior, sim.step());
      std::size_t best = 0;
      double best_score = 0.0;
      for (std::size_t j = 0; j < g.slates.size(); ++j) {
        const double s =
            fused_prior_score(g.slates[j], ctx, cands, rnet, {}, cfg.alpha);
        if (j == 0 || s > best_score) {
          best = j;
          best_score = s;
        }
      }
      return g.slates[best];
    };
  }

  void check_record(const InteractionRecord& rec) const {
    if (rec.exposed.size() != cfg.model.l_out)
      throw Error("train: record slate length does not match the model");
    if (rec.cands.size() < cfg.model.l_out)
      throw Error("train: record has fewer candidates than slate positions");
  }
};

Trainer::Trainer(const TrainConfig& cfg) {
  cfg.validate();
  impl_ = std::make_shared<Impl>(cfg, derive_seeds(cfg.seed));
}

Trainer::Trainer(const TrainConfig& cfg, const std::string& checkpoint_path)
    : Trainer(cfg) {
  Impl& im = *impl_;
  Checkpoint ck = Checkpoint::load(checkpoint_path);
  if (!ck.has_meta("kind") || ck.meta_at("kind") != "trainer")
    throw UserError("checkpoint: not a trainer state file");
  TrainConfig stored = parse_train_config(ck.meta_at("config"));
  TrainConfig a = cfg;
  TrainConfig b = stored;
  a.total_steps = 0;  // run length may be extended on resume
  b.total_steps = 0;
  if (serialize_train_config(a) != serialize_train_config(b))
    throw UserError("checkpoint: config does not match the run it came from");

  im.step = meta_u64(ck, "step");
  im.adam_t = meta_u64(ck, "adam_t");
  im.sim.restore(meta_u64(ck, "env_step"), meta_u64(ck, "env_rng"));

  for (ParamRef& p : im.params) {
    const Checkpoint::Array& arr = ck.array_at(p.name);
    if (arr.rows != p.tensor.rows() || arr.cols != p.tensor.cols())
      throw UserError("checkpoint: shape mismatch for " + p.name);
    std::copy(arr.data.begin(), arr.data.end(), p.tensor.data());
    if (p.embedding) {
      const Checkpoint::Array& a_arr = ck.array_at("opt.acc." + p.name);
      if (a_arr.data.size() != p.tensor.size())
        throw UserError("checkpoint: accumulator size mismatch for " + p.name);
      im.acc.at(p.name) = a_arr.data;
    } else {
      const Checkpoint::Array& m_arr = ck.array_at("opt.m." + p.name);
      const Checkpoint::Array& v_arr = ck.array_at("opt.v." + p.name);
      if (m_arr.data.size() != p.tensor.size() ||
          v_arr.data.size() != p.tensor.size())
        throw UserError("checkpoint: moment size mismatch for " + p.name);
      im.m1.at(p.name) = m_arr.data;
      im.m2.at(p.name) = v_arr.data;
    }
  }

  const Checkpoint::Array& ring_arr = ck.array_at("ring");
  if (ring_arr.rows > 0 && ring_arr.cols != kRingFields)
    throw UserError("checkpoint: unexpected metric ring layout");
  im.ring.clear();
  for (std::uint64_t r = 0; r < ring_arr.rows; ++r) {
    const double* row = ring_arr.data.data() + r * kRingFields;
    StepMetrics sm;
    sm.step = static_cast<std::uint64_t>(row[0]);
    sm.losses.mle = row[1];
    sm.losses.bpr = row[2];
    sm.losses.kd = row[3];
    sm.losses.ldro = row[4];
    sm.losses.kl_penalty = row[5];
    sm.losses.entropy_bonus = row[6];
    sm.losses.total = row[7];
    sm.rnet_loss = row[8];
    sm.group_reward = row[9];
    sm.lambda_rl = row[10];
    sm.rl_active = row[11] != 0.0;
    sm.base_rate = row[12];
    im.ring.push_back(sm);
  }
}

const TrainConfig& Trainer::config() const { return impl_->cfg; }
std::uint64_t Trainer::step_count() const { return impl_->step; }
const RankerModel& Trainer::model() const { return impl_->model; }
const RewardNet& Trainer::reward_net() const { return impl_->rnet; }
const std::deque<StepMetrics>& Trainer::ring() const { return impl_->ring; }

double Trainer::effective_lambda_rl() const {
  const Impl& im = *impl_;
  return im.step < im.warmup_steps() ? 0.0 : im.cfg.lambda_rl;
}

GroupPlan Trainer::plan_groups(const std::vector<InteractionRecord>& batch) const {
  const Impl& im = *impl_;
  const std::size_t b_n = batch.size();
  const std::size_t g_n = im.cfg.group_size;
  if (b_n == 0) throw Error("train: empty batch");

  GroupPlan plan;
  plan.groups.resize(b_n);
  std::vector<std::vector<RewardVector>> rewards(b_n);
  double raw_sum = 0.0;
  for (std::size_t b = 0; b < b_n; ++b) {
    const InteractionRecord& rec = batch[b];
    im.check_record(rec);
    EncoderOutput enc = im.model.encode(rec.ctx, rec.cands);
    Tensor cube = im.model.student_forward(enc);
    std::vector<Slate>& grp = plan.groups[b];
    grp.reserve(g_n);
    grp.push_back(rec.exposed);
    SampledGroup sg = gumbel_sample_group(cube, g_n - 1, im.cfg.tau_sample,
                                          im.seeds.sample, rec.step);
    for (Slate& s : sg.slates) grp.push_back(std::move(s));
    rewards[b].reserve(g_n);
    for (std::size_t g = 0; g < g_n; ++g) {
      RewardVector rv =
          hybrid_reward(grp[g], rec.ctx, rec.cands, im.rnet, rec.true_relevance,
                        g == 0 ? &rec.feedback : nullptr);
      for (std::size_t m = 0; m < kNumObjectives; ++m)
        raw_sum += im.cfg.alpha[m] * rv.values[m];
      rewards[b].push_back(rv);
    }
  }
  const NormMode mode = (im.cfg.grpo_mode || im.cfg.no_batch_decouple)
                            ? NormMode::kGrpo
                            : NormMode::kLdro;
  AdvantageMatrix adv = double_decouple(rewards, im.cfg.adv_eps, mode);
  plan.advantages = fuse(adv, im.cfg.alpha);
  plan.mean_raw_reward = raw_sum / static_cast<double>(b_n * g_n);
  return plan;
}

Tensor Trainer::combined_loss(const std::vector<InteractionRecord>& batch,
                              const GroupPlan& plan, double lambda_rl,
                              LossBreakdown* breakdown_out, double* rnet_out,
                              const std::vector<Tensor>* frozen_targets) const {
  const Impl& im = *impl_;
  const std::size_t b_n = batch.size();
  const std::size_t g_n = im.cfg.group_size;
  if (b_n == 0) throw Error("train: empty batch");
  const bool rl = !plan.groups.empty();
  if (rl && plan.groups.size() != b_n)
    throw Error("train: group plan does not match the batch");
  if (rl && plan.advantages.size() != b_n * g_n)
    throw Error("train: advantage vector does not match the batch");
  if (frozen_targets && frozen_targets->size() != b_n)
    throw Error("train: frozen target count does not match the batch");

  auto add_to = [](Tensor& acc, const Tensor& t) {
    acc = acc.defined() ? add(acc, t) : t;
  };
  Tensor mle_acc, bpr_acc, kd_acc, ldro_acc, kl_acc, ent_acc, rn_acc;
  for (std::size_t b = 0; b < b_n; ++b) {
    const InteractionRecord& rec = batch[b];
    im.check_record(rec);
    EncoderOutput enc = im.model.encode(rec.ctx, rec.cands);
    Tensor forced = im.model.teacher_forced_logits(enc, rec.exposed);
    add_to(mle_acc, mle_loss(forced, rec.exposed));
    const std::vector<PreferencePair> pairs =
        build_pairs(rec.exposed, rec.feedback, im.cfg.delta_score);
    add_to(bpr_acc, bpr_loss(slice_rows(forced, 0, 1), pairs));
    // Gradient-blocked side of distillation and of the divergence penalty.
    const Tensor& target = frozen_targets ? (*frozen_targets)[b] : forced;
    Tensor cube;
    if (!im.cfg.no_kd || rl) cube = im.model.student_forward(enc);
    if (!im.cfg.no_kd) add_to(kd_acc, kd_loss(target, cube, im.cfg.tau_distill));
    if (rl) {
      std::vector<double> adv(plan.advantages.begin() + b * g_n,
                              plan.advantages.begin() + (b + 1) * g_n);
      const std::size_t viewport =
          im.cfg.no_rank_weight ? im.cfg.model.l_out : im.cfg.viewport;
      add_to(ldro_acc, ldro_loss(cube, plan.groups[b], adv, viewport));
      RegularizerTerms reg = regularizers(cube, target, rec.exposed);
      add_to(kl_acc, reg.kl_penalty);
      add_to(ent_acc, reg.entropy_bonus);
    }
    add_to(rn_acc, im.rnet.feedback_loss(rec.ctx, rec.cands, rec.exposed,
                                         rec.feedback));
  }

  const double inv = 1.0 / static_cast<double>(b_n);
  auto finish = [&](Tensor& t) {
    return t.defined() ? scale(t, inv) : Tensor::scalar(0.0);
  };
  LossTerms terms{finish(mle_acc), finish(bpr_acc), finish(kd_acc),
                  finish(ldro_acc), finish(kl_acc), finish(ent_acc)};
  LossWeights w{im.cfg.lambda_bpr, im.cfg.lambda_kd, lambda_rl, im.cfg.beta_kl,
                im.cfg.beta_entropy};
  Tensor total = total_loss(terms, w);
  Tensor rnet_term = finish(rn_acc);
  Tensor combined = add(total, rnet_term);

  const LossBreakdown bd = breakdown(terms, w);
  const double rn_val = rnet_term.item();
  if (!std::isfinite(bd.total) || !std::isfinite(rn_val)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "train: non-finite loss (mle=%g bpr=%g kd=%g ldro=%g kl=%g "
                  "ent=%g rnet=%g)",
                  bd.mle, bd.bpr, bd.kd, bd.ldro, bd.kl_penalty,
                  bd.entropy_bonus, rn_val);
    throw Error(buf);
  }
  if (breakdown_out) *breakdown_out = bd;
  if (rnet_out) *rnet_out = rn_val;
  return combined;
}

std::vector<Tensor> Trainer::teacher_targets(
    const std::vector<InteractionRecord>& batch) const {
  const Impl& im = *impl_;
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (const InteractionRecord& rec : batch) {
    im.check_record(rec);
    EncoderOutput enc = im.model.encode(rec.ctx, rec.cands);
    out.push_back(im.model.teacher_forced_logits(enc, rec.exposed).detach());
  }
  return out;
}

StepMetrics Trainer::step_on_batch(const std::vector<InteractionRecord>& batch) {
  Impl& im = *impl_;
  if (batch.empty()) throw Error("train: empty batch");
  const double lam = effective_lambda_rl();
  const bool rl = lam > 0.0;
  GroupPlan plan;
  if (rl) plan = plan_groups(batch);

  StepMetrics sm;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor combined =
        combined_loss(batch, plan, lam, &sm.losses, &sm.rnet_loss);
    tape.backward(combined);
  }
  im.apply_updates();
  for (ParamRef& p : im.params) p.tensor.zero_grad();

  sm.step = im.step;
  sm.group_reward = rl ? plan.mean_raw_reward : 0.0;
  sm.lambda_rl = lam;
  sm.rl_active = rl;
  sm.base_rate = im.sim.base_rate_at(batch.front().step);
  im.step += 1;
  im.ring.push_back(sm);
  if (im.ring.size() > kRingCapacity) im.ring.pop_front();
  return sm;
}

StepMetrics Trainer::train_step() {
  Impl& im = *impl_;
  const std::vector<InteractionRecord> batch =
      im.sim.next_batch(im.behavior_policy(), im.cfg.batch);
  return step_on_batch(batch);
}

MetricReport Trainer::evaluate() const {
  const Impl& im = *impl_;
  EnvConfig ec = im.cfg.env;
  ec.seed = im.seeds.eval_env;
  StreamSim es(ec);
  const StreamSim::Policy pol =
      StreamSim::uniform_policy(im.seeds.eval_policy, ec.l_out);
  const std::vector<InteractionRecord> records =
      es.next_batch(pol, im.cfg.eval_records);

  const double ptar_v = ptar(im.model, records);
  double rfr_sum = 0.0, ndcg_sum = 0.0, reward_sum = 0.0;
  std::size_t rfr_n = 0, reward_n = 0;
  for (const InteractionRecord& rec : records) {
    EncoderOutput enc = im.model.encode(rec.ctx, rec.cands);
    Tensor first = im.model.teacher_step(enc, {});
    Tensor cube = im.model.student_forward(enc);
    std::vector<double> svals;
    svals.reserve(cube.cols());
    for (std::size_t i = 0; i < cube.cols(); ++i) svals.push_back(cube.at(0, i));
    try {
      rfr_sum += rfr(first.values(), svals);
      ++rfr_n;
    } catch (const Error&) {
      // fully tied teacher row carries no ordering signal for this record
    }
    const Slate greedy = greedy_slate(cube);
    ndcg_sum += prior_ndcg(greedy, rec.true_relevance,
                           std::min<std::size_t>(4, ec.l_out));
    SampledGroup sg =
        gumbel_sample_group(cube, im.cfg.group_size, im.cfg.tau_sample,
                            im.seeds.eval_sample, rec.step);
    for (const Slate& s : sg.slates) {
      reward_sum += fused_prior_score(s, rec.ctx, rec.cands, im.rnet,
                                      rec.true_relevance, im.cfg.alpha);
      ++reward_n;
    }
  }

  MetricReport rep;
  rep.window_start = im.step;
  rep.window_end = im.step;
  rep.samples = records.size();
  rep.add("ptar", ptar_v);
  rep.add("rfr", rfr_n > 0 ? rfr_sum / static_cast<double>(rfr_n) : 0.5);
  rep.add("ndcg_vs_oracle", ndcg_sum / static_cast<double>(records.size()));
  rep.add("group_reward", reward_sum / static_cast<double>(reward_n));
  return rep;
}

void Trainer::save_checkpoint(const std::string& path) const {
  const Impl& im = *impl_;
  Checkpoint ck;
  ck.set_meta("kind", "trainer");
  ck.set_meta("config", serialize_train_config(im.cfg));
  ck.set_meta("step", std::to_string(im.step));
  ck.set_meta("adam_t", std::to_string(im.adam_t));
  ck.set_meta("env_step", std::to_string(im.sim.step()));
  ck.set_meta("env_rng", std::to_string(im.sim.rng_state()));
  for (const ParamRef& p : im.params) {
    ck.add_array(p.name, p.tensor.rows(), p.tensor.cols(), p.tensor.values());
    if (p.embedding) {
      ck.add_array("opt.acc." + p.name, 1, p.tensor.size(), im.acc.at(p.name));
    } else {
      ck.add_array("opt.m." + p.name, 1, p.tensor.size(), im.m1.at(p.name));
      ck.add_array("opt.v." + p.name, 1, p.tensor.size(), im.m2.at(p.name));
    }
  }
  std::vector<double> ring_data;
  ring_data.reserve(im.ring.size() * kRingFields);
  for (const StepMetrics& sm : im.ring) {
    ring_data.push_back(static_cast<double>(sm.step));
    ring_data.push_back(sm.losses.mle);
    ring_data.push_back(sm.losses.bpr);
    ring_data.push_back(sm.losses.kd);
    ring_data.push_back(sm.losses.ldro);
    ring_data.push_back(sm.losses.kl_penalty);
    ring_data.push_back(sm.losses.entropy_bonus);
    ring_data.push_back(sm.losses.total);
    ring_data.push_back(sm.rnet_loss);
    ring_data.push_back(sm.group_reward);
    ring_data.push_back(sm.lambda_rl);
    ring_data.push_back(sm.rl_active ? 1.0 : 0.0);
    ring_data.push_back(sm.base_rate);
  }
  ck.add_array("ring", im.ring.size(), kRingFields, std::move(ring_data));
  ck.save(path);
}

std::string run_training(const TrainConfig& cfg, const std::string& out_dir,
                         const std::string& resume_checkpoint) {
  cfg.validate();
  std::error_code fs_err;
  std::filesystem::create_directories(out_dir, fs_err);
  if (fs_err) throw Error("train: cannot create output directory " + out_dir);

  Trainer trainer = resume_checkpoint.empty()
                        ? Trainer(cfg)
                        : Trainer(cfg, resume_checkpoint);
  const std::ios_base::openmode mode =
      resume_checkpoint.empty() ? std::ios::trunc : std::ios::app;
  std::ofstream metrics_out(out_dir + "/metrics.jsonl", mode);
  std::ofstream eval_out(out_dir + "/eval.jsonl", mode);
  if (!metrics_out || !eval_out)
    throw Error("train: cannot open log files under " + out_dir);

  while (trainer.step_count() < cfg.total_steps) {
    const StepMetrics sm = trainer.train_step();
    metrics_out << metrics_to_json(sm) << '\n';
    if (!metrics_out) throw Error("train: metrics write failed");
    if (cfg.eval_every != 0 && trainer.step_count() % cfg.eval_every == 0) {
      eval_out << trainer.evaluate().to_json() << '\n';
      if (!eval_out) throw Error("train: eval write failed");
    }
    if (cfg.checkpoint_every != 0 &&
        trainer.step_count() % cfg.checkpoint_every == 0 &&
        trainer.step_count() < cfg.total_steps) {
      trainer.save_checkpoint(out_dir + "/checkpoint_" +
                              std::to_string(trainer.step_count()) + ".ckpt");
    }
  }
  metrics_out.flush();
  eval_out.flush();
  const std::string final_path = out_dir + "/checkpoint_final.ckpt";
  trainer.save_checkpoint(final_path);
  return final_path;
}

}  // namespace dualrr
