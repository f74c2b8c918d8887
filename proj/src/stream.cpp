#include "dualrr/stream.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"

namespace dualrr {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sigmoid_d(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_slate(const Slate& slate, std::size_t l_out, std::size_t n_cand) {
  if (slate.size() != l_out) throw Error("policy produced a slate of the wrong length");
  std::vector<bool> used(n_cand, false);
  for (std::size_t idx : slate) {
    if (idx >= n_cand) throw Error("policy produced an out-of-range index");
    if (used[idx]) throw Error("policy produced a repeated index");
    used[idx] = true;
  }
}

}  // namespace

void EnvConfig::validate() const {
  if (l_out == 0) throw UserError("env: slate length must be positive");
  if (n_cand < l_out) throw UserError("env: need at least as many candidates as slate positions");
  if (latent_dim == 0) throw UserError("env: latent width must be positive");
  if (d_query == 0) throw UserError("env: query width must be positive");
  if (!(drift_amplitude >= 0.0 && drift_amplitude < 1.0))
    throw UserError("env: drift amplitude must lie in [0,1)");
  if (!(drift_period > 0.0)) throw UserError("env: drift period must be positive");
  if (!(examination_decay >= 0.0 && examination_decay <= 1.0))
    throw UserError("env: examination decay must lie in [0,1]");
  if (!(base_rate > 0.0)) throw UserError("env: base rate must be positive");
  if (!(base_rate * (1.0 + drift_amplitude) < 1.0))
    throw UserError("env: drifting base rate must stay below 1");
  if (!(utility_scale > 0.0)) throw UserError("env: utility scale must be positive");
}

std::vector<double> latent_utilities(const Context& ctx,
                                     const CandidateList& cands,
                                     const EnvConfig& env) {
  if (ctx.user.size() != env.latent_dim)
    throw Error("latent utilities: user width does not match the environment");
  const double norm = env.utility_scale / std::sqrt(static_cast<double>(env.latent_dim));
  std::vector<double> out;
  out.reserve(cands.size());
  for (const Candidate& c : cands) {
    if (c.feat.size() != env.latent_dim)
      throw Error("latent utilities: feature width does not match the environment");
    double dot = 0.0;
    for (std::size_t j = 0; j < env.latent_dim; ++j) dot += ctx.user[j] * c.feat[j];
    out.push_back(norm * dot);
  }
  return out;
}

StreamSim::StreamSim(const EnvConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
}

double StreamSim::base_rate_at(std::uint64_t step) const {
  const double phase = 2.0 * kPi * static_cast<double>(step) / cfg_.drift_period;
  return cfg_.base_rate * (1.0 + cfg_.drift_amplitude * std::sin(phase));
}

void StreamSim::restore(std::uint64_t step, std::uint64_t rng_state) {
  step_ = step;
  rng_.set_state(rng_state);
}

std::vector<InteractionRecord> StreamSim::next_batch(const Policy& policy,
                                                     std::size_t batch) {
  if (!policy) throw Error("stream: null policy");
  std::vector<InteractionRecord> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    InteractionRecord rec;
    rec.step = step_;

    rec.ctx.user.resize(cfg_.latent_dim);
    for (double& v : rec.ctx.user) v = rng_.normal();
    rec.ctx.query.resize(cfg_.d_query);
    for (double& v : rec.ctx.query) v = rng_.normal();
    rec.ctx.hist.resize(cfg_.latent_dim);
    for (std::size_t j = 0; j < cfg_.latent_dim; ++j)
      rec.ctx.hist[j] = 0.5 * rec.ctx.user[j] + 0.5 * rng_.normal();

    rec.cands.resize(cfg_.n_cand);
    for (std::size_t i = 0; i < cfg_.n_cand; ++i) {
      rec.cands[i].id = static_cast<std::int64_t>(step_ * cfg_.n_cand + i);
      rec.cands[i].feat.resize(cfg_.latent_dim);
      for (double& v : rec.cands[i].feat) v = rng_.normal();
    }

    const std::vector<double> u = latent_utilities(rec.ctx, rec.cands, cfg_);
    rec.true_relevance.resize(cfg_.n_cand);
    for (std::size_t i = 0; i < cfg_.n_cand; ++i)
      rec.true_relevance[i] = sigmoid_d(u[i]);

    rec.exposed = policy(rec.ctx, rec.cands);
    check_slate(rec.exposed, cfg_.l_out, cfg_.n_cand);

    const double base = base_rate_at(step_);
    rec.feedback.resize(cfg_.l_out);
    for (std::size_t t = 0; t < cfg_.l_out; ++t) {
      const double exam = std::pow(cfg_.examination_decay, static_cast<double>(t));
      Feedback& f = rec.feedback[t];
      f.exposure = rng_.bernoulli(exam);
      if (f.exposure) {
        const double ui = u[rec.exposed[t]];
        f.click = rng_.bernoulli(base * sigmoid_d(ui));
        if (f.click) f.long_view = rng_.bernoulli(sigmoid_d(ui - 1.0));
      }
    }

    ++step_;
    out.push_back(std::move(rec));
  }
  return out;
}

StreamSim::Policy StreamSim::uniform_policy(std::uint64_t seed,
                                            std::size_t l_out) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng, l_out](const Context&, const CandidateList& cands) {
    if (cands.size() < l_out)
      throw Error("uniform policy: fewer candidates than slate positions");
    // Partial shuffle: each ordered selection is equally likely.
    std::vector<std::size_t> pool(cands.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    Slate slate;
    for (std::size_t t = 0; t < l_out; ++t) {
      const std::size_t j = t + static_cast<std::size_t>(
                                    rng->uniform_int(pool.size() - t));
      std::swap(pool[t], pool[j]);
      slate.push_back(pool[t]);
    }
    return slate;
  };
}

void for_each_slate(std::size_t n, std::size_t l,
                    const std::function<void(const Slate&)>& visitor) {
  if (l == 0 || n < l) throw Error("slate enumeration: need 0 < l <= n");
  Slate slate;
  std::vector<bool> used(n, false);
  // Depth-first in index order yields lexicographic visit order.
  std::function<void()> rec = [&]() {
    if (slate.size() == l) {
      visitor(slate);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      used[i] = true;
      slate.push_back(i);
      rec();
      slate.pop_back();
      used[i] = false;
    }
  };
  rec();
}

double expected_slate_reward(const Slate& slate,
                             const std::vector<double>& utilities,
                             const EnvConfig& env) {
  const UtilityWeights w{};
  double total = 0.0;
  for (std::size_t t = 0; t < slate.size(); ++t) {
    if (slate[t] >= utilities.size())
      throw Error("expected reward: slate index out of range");
    const double exam = std::pow(env.examination_decay, static_cast<double>(t));
    const double su = sigmoid_d(utilities[slate[t]]);
    const double slv = sigmoid_d(utilities[slate[t]] - 1.0);
    total += exam * (w.exposure +
                     env.base_rate * su * (w.click + w.long_view * slv));
  }
  return total;
}

std::pair<Slate, double> oracle_best_slate(const Context& ctx,
                                           const CandidateList& cands,
                                           const EnvConfig& env) {
  if (cands.size() > 10 || env.l_out > 5)
    throw Error("oracle: enumeration bounded to 10 candidates and 5 positions");
  if (cands.size() < env.l_out)
    throw Error("oracle: fewer candidates than slate positions");
  const std::vector<double> u = latent_utilities(ctx, cands, env);
  Slate best;
  double best_reward = 0.0;
  for_each_slate(cands.size(), env.l_out, [&](const Slate& s) {
    const double r = expected_slate_reward(s, u, env);
    // Strict improvement keeps the lexicographically first maximizer.
    if (best.empty() || r > best_reward) {
      best = s;
      best_reward = r;
    }
  });
  return {best, best_reward};
}

namespace {

using ordered_json = nlohmann::ordered_json;

[[noreturn]] void line_error(std::size_t line, const std::string& what) {
  throw UserError("log line " + std::to_string(line) + ": " + what);
}

const ordered_json& need(const ordered_json& obj, const char* key,
                         std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) line_error(line, std::string("missing field '") + key + "'");
  return *it;
}

std::vector<double> need_doubles(const ordered_json& obj, const char* key,
                                 std::size_t line) {
  const ordered_json& j = need(obj, key, line);
  if (!j.is_array()) line_error(line, std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) line_error(line, std::string("field '") + key + "' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

bool need_bool(const ordered_json& obj, const char* key, std::size_t line) {
  const ordered_json& j = need(obj, key, line);
  if (!j.is_boolean()) line_error(line, std::string("field '") + key + "' must be a boolean");
  return j.get<bool>();
}

InteractionRecord parse_record(const ordered_json& j, std::size_t line) {
  if (!j.is_object()) line_error(line, "record must be a JSON object");
  InteractionRecord rec;

  const ordered_json& step = need(j, "step", line);
  if (!step.is_number_unsigned()) line_error(line, "field 'step' must be a non-negative integer");
  rec.step = step.get<std::uint64_t>();

  const ordered_json& ctx = need(j, "ctx", line);
  if (!ctx.is_object()) line_error(line, "field 'ctx' must be an object");
  rec.ctx.user = need_doubles(ctx, "user", line);
  rec.ctx.query = need_doubles(ctx, "query", line);
  rec.ctx.hist = need_doubles(ctx, "hist", line);

  const ordered_json& cands = need(j, "cands", line);
  if (!cands.is_array() || cands.empty())
    line_error(line, "field 'cands' must be a non-empty array");
  std::size_t feat_width = 0;
  for (const auto& cj : cands) {
    if (!cj.is_object()) line_error(line, "candidates must be objects");
    Candidate c;
    const ordered_json& id = need(cj, "id", line);
    if (!id.is_number_integer()) line_error(line, "field 'id' must be an integer");
    c.id = id.get<std::int64_t>();
    c.feat = need_doubles(cj, "feat", line);
    if (rec.cands.empty())
      feat_width = c.feat.size();
    else if (c.feat.size() != feat_width)
      line_error(line, "candidate feature widths differ");
    rec.cands.push_back(std::move(c));
  }

  const ordered_json& exposed = need(j, "exposed", line);
  if (!exposed.is_array() || exposed.empty())
    line_error(line, "field 'exposed' must be a non-empty array");
  std::vector<bool> used(rec.cands.size(), false);
  for (const auto& v : exposed) {
    if (!v.is_number_unsigned()) line_error(line, "slate entries must be non-negative integers");
    const std::size_t idx = v.get<std::size_t>();
    if (idx >= rec.cands.size()) line_error(line, "slate index out of range");
    if (used[idx]) line_error(line, "slate index repeated");
    used[idx] = true;
    rec.exposed.push_back(idx);
  }

  const ordered_json& feedback = need(j, "feedback", line);
  if (!feedback.is_array()) line_error(line, "field 'feedback' must be an array");
  if (feedback.size() != rec.exposed.size())
    line_error(line, "feedback length does not match the exposed slate");
  for (const auto& fj : feedback) {
    if (!fj.is_object()) line_error(line, "feedback entries must be objects");
    Feedback f;
    f.exposure = need_bool(fj, "exposure", line);
    f.click = need_bool(fj, "click", line);
    f.long_view = need_bool(fj, "long_view", line);
    if ((f.click && !f.exposure) || (f.long_view && !f.click))
      line_error(line, "feedback cascade violated");
    rec.feedback.push_back(f);
  }

  rec.true_relevance = need_doubles(j, "relevance", line);
  if (rec.true_relevance.size() != rec.cands.size())
    line_error(line, "relevance length does not match the candidate count");
  return rec;
}

}  // namespace

void write_jsonl(const std::string& path,
                 const std::vector<InteractionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot open '" + path + "' for writing");
  for (const InteractionRecord& rec : records) {
    ordered_json j;
    j["step"] = rec.step;
    j["ctx"] = {{"user", rec.ctx.user},
                {"query", rec.ctx.query},
                {"hist", rec.ctx.hist}};
    ordered_json cands = ordered_json::array();
    for (const Candidate& c : rec.cands)
      cands.push_back({{"id", c.id}, {"feat", c.feat}});
    j["cands"] = std::move(cands);
    j["exposed"] = rec.exposed;
    ordered_json fb = ordered_json::array();
    for (const Feedback& f : rec.feedback)
      fb.push_back({{"exposure", f.exposure},
                    {"click", f.click},
                    {"long_view", f.long_view}});
    j["feedback"] = std::move(fb);
    j["relevance"] = rec.true_relevance;
    out << j.dump() << '\n';
  }
  if (!out) throw UserError("failed writing '" + path + "'");
}

std::vector<InteractionRecord> ingest_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open '" + path + "' for reading");
  std::vector<InteractionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) line_error(line_no, "malformed JSON");
    out.push_back(parse_record(j, line_no));
  }
  return out;
}

}  // namespace dualrr
