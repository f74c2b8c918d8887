#include "dualrr/serve.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "dualrr/log.hpp"
#include "dualrr/rng.hpp"
#include "dualrr/sampler.hpp"
#include "json.hpp"

namespace dualrr {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Index of the q-th percentile in a sorted sample of n (nearest-rank).
std::size_t rank_index(std::size_t n, double q) {
  const auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  return std::min(n - 1, r == 0 ? 0 : r - 1);
}

double median_of_sorted(const std::vector<double>& v) {
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> require_number_array(const nlohmann::json& j,
                                         const char* what) {
  if (!j.is_array())
    throw UserError(std::string("serve request: ") + what +
                    " must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number())
      throw UserError(std::string("serve request: ") + what +
                      " must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

void reject_unknown_keys(const nlohmann::json& obj,
                         const std::vector<std::string>& known,
                         const char* where) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UserError(std::string("serve request: unknown field \"") + key +
                      "\" in " + where);
  }
}

}  // namespace

ServeResult serve(const ServeRequest& req, const RankerModel& model,
                  const RewardNet& rnet,
                  const std::array<double, kNumObjectives>& alpha) {
  const auto t0 = std::chrono::steady_clock::now();
  if (req.n_samples < 1)
    throw UserError("serve: sample count must be at least 1");
  if (!(req.tau > 0.0)) throw UserError("serve: temperature must be positive");
  if (req.cands.size() < model.config().l_out)
    throw UserError("serve: fewer candidates than slate positions");

  const std::uint64_t forwards_before = model.student_decoder_forwards();
  const EncoderOutput enc = model.encode(req.ctx, req.cands);
  const Tensor cube = model.student_forward(enc);
  const SampledGroup group =
      gumbel_sample_group(cube, req.n_samples, req.tau, req.seed, /*step=*/0);

  ServeResult res;
  res.all_scores.reserve(req.n_samples);
  std::size_t best_k = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < group.slates.size(); ++k) {
    // Decision-time scoring only: network rate estimates fused with the
    // (absent) priors. No engagement outcomes exist yet to substitute.
    const double score =
        fused_prior_score(group.slates[k], req.ctx, req.cands, rnet, {}, alpha);
    res.all_scores.push_back(score);
    if (score > best) {
      best = score;
      best_k = k;
    }
  }
  res.best = group.slates[best_k];
  res.best_score = best;
  res.forwards_used = model.student_decoder_forwards() - forwards_before;
  res.wall_time = seconds_since(t0);
  return res;
}

ServeRequest parse_serve_request(const std::string& json_line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_line);
  } catch (const nlohmann::json::exception& e) {
    throw UserError(std::string("serve request: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UserError("serve request: line must be an object");
  reject_unknown_keys(j, {"ctx", "cands", "n", "tau", "seed"}, "the request");
  if (!j.contains("ctx") || !j.contains("cands"))
    throw UserError("serve request: \"ctx\" and \"cands\" are required");

  ServeRequest req;
  const nlohmann::json& ctx = j.at("ctx");
  if (!ctx.is_object())
    throw UserError("serve request: \"ctx\" must be an object");
  reject_unknown_keys(ctx, {"user", "query", "hist"}, "\"ctx\"");
  for (const char* part : {"user", "query", "hist"})
    if (!ctx.contains(part))
      throw UserError(std::string("serve request: \"ctx\" needs \"") + part +
                      "\"");
  req.ctx.user = require_number_array(ctx.at("user"), "ctx.user");
  req.ctx.query = require_number_array(ctx.at("query"), "ctx.query");
  req.ctx.hist = require_number_array(ctx.at("hist"), "ctx.hist");

  const nlohmann::json& cands = j.at("cands");
  if (!cands.is_array() || cands.empty())
    throw UserError("serve request: \"cands\" must be a non-empty array");
  for (const auto& c : cands) {
    if (!c.is_object())
      throw UserError("serve request: each candidate must be an object");
    reject_unknown_keys(c, {"id", "feat"}, "a candidate");
    if (!c.contains("feat"))
      throw UserError("serve request: each candidate needs \"feat\"");
    Candidate cand;
    if (c.contains("id")) {
      if (!c.at("id").is_number_integer())
        throw UserError("serve request: candidate \"id\" must be an integer");
      cand.id = c.at("id").get<std::int64_t>();
    }
    cand.feat = require_number_array(c.at("feat"), "candidate feat");
    req.cands.push_back(std::move(cand));
  }

  if (j.contains("n")) {
    if (!j.at("n").is_number_unsigned() || j.at("n").get<std::uint64_t>() == 0)
      throw UserError("serve request: \"n\" must be a positive integer");
    req.n_samples = j.at("n").get<std::size_t>();
  }
  if (j.contains("tau")) {
    if (!j.at("tau").is_number())
      throw UserError("serve request: \"tau\" must be a number");
    req.tau = j.at("tau").get<double>();
    if (!(req.tau > 0.0))
      throw UserError("serve request: \"tau\" must be positive");
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned())
      throw UserError("serve request: \"seed\" must be a non-negative integer");
    req.seed = j.at("seed").get<std::uint64_t>();
  }
  return req;
}

std::string serve_result_to_json(const ServeResult& r) {
  nlohmann::ordered_json j;
  j["best"] = r.best;
  j["best_score"] = r.best_score;
  j["all_scores"] = r.all_scores;
  j["forwards_used"] = r.forwards_used;
  j["wall_time"] = r.wall_time;
  return j.dump();
}

std::string BenchReport::to_text() const {
  char buf[512];
  std::snprintf(
      buf, sizeof buf,
      "decode benchmark: %zu trials, slate length %zu, serve breadth %zu\n"
      "  sequential greedy: %llu decoder forwards/decode, median %.6f ms, "
      "p99 %.6f ms\n"
      "  parallel serve:    %llu decoder forward(s)/request, median %.6f ms, "
      "p99 %.6f ms\n",
      trials, teacher_l_out, serve_samples,
      static_cast<unsigned long long>(teacher_forwards_per_decode),
      teacher_median_s * 1e3, teacher_p99_s * 1e3,
      static_cast<unsigned long long>(student_forwards_per_serve),
      serve_median_s * 1e3, serve_p99_s * 1e3);
  return buf;
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["trials"] = trials;
  j["teacher_l_out"] = teacher_l_out;
  j["serve_samples"] = serve_samples;
  j["teacher_forwards_per_decode"] = teacher_forwards_per_decode;
  j["student_forwards_per_serve"] = student_forwards_per_serve;
  j["teacher_median_s"] = teacher_median_s;
  j["teacher_p99_s"] = teacher_p99_s;
  j["serve_median_s"] = serve_median_s;
  j["serve_p99_s"] = serve_p99_s;
  return j.dump();
}

BenchReport bench_decoding(const RankerModel& teacher,
                           const RankerModel& student, const RewardNet& rnet,
                           std::size_t trials, std::size_t n_cand,
                           std::uint64_t seed) {
  if (trials == 0) throw UserError("bench: trial count must be positive");
  if (teacher.config().d_model != student.config().d_model)
    throw UserError("bench: models must share d_model");
  const ModelConfig& cfg = student.config();
  if (n_cand < cfg.l_out || n_cand < teacher.config().l_out)
    throw UserError("bench: fewer candidates than slate positions");

  Rng rng(seed);
  auto draw = [&rng](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
  };

  BenchReport rep;
  rep.trials = trials;
  rep.teacher_l_out = teacher.config().l_out;
  rep.serve_samples = 8;
  std::vector<double> t_times, s_times;
  t_times.reserve(trials);
  s_times.reserve(trials);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Context ctx{draw(cfg.d_user), draw(cfg.d_query), draw(cfg.d_hist)};
    CandidateList cands(n_cand);
    for (std::size_t i = 0; i < n_cand; ++i)
      cands[i] = Candidate{static_cast<std::int64_t>(i), draw(cfg.d_item)};

    const std::uint64_t tf0 = teacher.teacher_decoder_forwards();
    const auto t0 = std::chrono::steady_clock::now();
    EncoderOutput enc = teacher.encode(ctx, cands);
    (void)teacher.teacher_decode_greedy(enc);
    t_times.push_back(seconds_since(t0));
    const std::uint64_t t_delta = teacher.teacher_decoder_forwards() - tf0;

    ServeRequest req;
    req.ctx = std::move(ctx);
    req.cands = std::move(cands);
    req.n_samples = rep.serve_samples;
    req.seed = seed + trial;
    ServeResult res = serve(req, student, rnet, {1.0, 1.0, 1.0, 1.0});
    s_times.push_back(res.wall_time);

    if (trial == 0) {
      rep.teacher_forwards_per_decode = t_delta;
      rep.student_forwards_per_serve = res.forwards_used;
    } else if (t_delta != rep.teacher_forwards_per_decode ||
               res.forwards_used != rep.student_forwards_per_serve) {
      throw Error("bench: decoder forward count varied between trials");
    }
  }

  std::sort(t_times.begin(), t_times.end());
  std::sort(s_times.begin(), s_times.end());
  rep.teacher_median_s = median_of_sorted(t_times);
  rep.teacher_p99_s = t_times[rank_index(trials, 0.99)];
  rep.serve_median_s = median_of_sorted(s_times);
  rep.serve_p99_s = s_times[rank_index(trials, 0.99)];
  return rep;
}

}  // namespace dualrr
