#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dualrr/rng.hpp"
#include "dualrr/sampler.hpp"
#include "dualrr/serve.hpp"
#include "json.hpp"

using namespace dualrr;

namespace {

constexpr std::array<double, kNumObjectives> kOnes{1.0, 1.0, 1.0, 1.0};

ModelConfig small_model_cfg() {
  ModelConfig m;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ffn = 32;
  m.enc_layers = 1;
  m.teacher_layers = 1;
  m.l_out = 3;
  m.d_item = 4;
  m.d_user = 4;
  m.d_query = 2;
  m.d_hist = 4;
  return m;
}

std::vector<double> draw_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

ServeRequest make_request(const ModelConfig& m, std::size_t n_cand,
                          std::uint64_t data_seed) {
  Rng rng(data_seed);
  ServeRequest req;
  req.ctx = Context{draw_vec(rng, m.d_user), draw_vec(rng, m.d_query),
                    draw_vec(rng, m.d_hist)};
  for (std::size_t i = 0; i < n_cand; ++i)
    req.cands.push_back(
        Candidate{static_cast<std::int64_t>(i), draw_vec(rng, m.d_item)});
  return req;
}

}  // namespace

TEST_CASE("sample-and-rank serving") {
  const ModelConfig m = small_model_cfg();
  const RankerModel model(m, 301);
  const RewardNet rnet(m, 8, 302);

  SUBCASE("single sample is returned as the best") {
    ServeRequest req = make_request(m, 6, 40);
    req.n_samples = 1;
    ServeResult res = serve(req, model, rnet, kOnes);
    REQUIRE(res.all_scores.size() == 1);
    CHECK(res.best_score == res.all_scores[0]);
    CHECK(res.best.size() == m.l_out);
    CHECK(res.forwards_used == 1);
    CHECK(res.wall_time >= 0.0);
  }

  SUBCASE("deterministic given the request, one decoder pass per call") {
    ServeRequest req = make_request(m, 6, 41);
    req.n_samples = 8;
    req.seed = 99;
    const std::uint64_t before = model.student_decoder_forwards();
    ServeResult a = serve(req, model, rnet, kOnes);
    ServeResult b = serve(req, model, rnet, kOnes);
    CHECK(model.student_decoder_forwards() - before == 2);
    CHECK(a.best == b.best);
    CHECK(a.best_score == b.best_score);
    CHECK(a.all_scores == b.all_scores);
    CHECK(a.forwards_used == 1);
    CHECK(b.forwards_used == 1);
  }

  SUBCASE("scores come from the shared decision-time scorer") {
    ServeRequest req = make_request(m, 6, 42);
    req.n_samples = 12;
    req.seed = 7;
    ServeResult res = serve(req, model, rnet, kOnes);
    // Reconstruct the samples from the same cube and noise key.
    Tensor cube = model.student_forward(model.encode(req.ctx, req.cands));
    SampledGroup group =
        gumbel_sample_group(cube, req.n_samples, req.tau, req.seed, 0);
    REQUIRE(res.all_scores.size() == group.slates.size());
    double best = -1e300;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < group.slates.size(); ++k) {
      const double s = fused_prior_score(group.slates[k], req.ctx, req.cands,
                                         rnet, {}, kOnes);
      CHECK(res.all_scores[k] == s);
      if (s > best) {
        best = s;
        best_k = k;
      }
    }
    CHECK(res.best_score == best);
    CHECK(res.best == group.slates[best_k]);
    CHECK(res.best_score == *std::max_element(res.all_scores.begin(),
                                              res.all_scores.end()));
  }

  SUBCASE("request validation") {
    ServeRequest req = make_request(m, 6, 43);
    req.n_samples = 0;
    CHECK_THROWS_AS(serve(req, model, rnet, kOnes), UserError);
    req.n_samples = 4;
    req.tau = 0.0;
    CHECK_THROWS_AS(serve(req, model, rnet, kOnes), UserError);
    ServeRequest thin = make_request(m, 2, 44);  // fewer candidates than slots
    CHECK_THROWS_AS(serve(thin, model, rnet, kOnes), UserError);
  }

  SUBCASE("earlier samples are a prefix of wider draws") {
    ServeRequest req = make_request(m, 6, 45);
    req.seed = 5;
    req.n_samples = 1;
    ServeResult r1 = serve(req, model, rnet, kOnes);
    req.n_samples = 4;
    ServeResult r4 = serve(req, model, rnet, kOnes);
    req.n_samples = 16;
    ServeResult r16 = serve(req, model, rnet, kOnes);
    CHECK(r4.all_scores[0] == r1.all_scores[0]);
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(r16.all_scores[k] == r4.all_scores[k]);
    CHECK(r4.best_score >= r1.best_score);
    CHECK(r16.best_score >= r4.best_score);
  }

  SUBCASE("wider search never hurts the expected best score") {
    ServeRequest req = make_request(m, 6, 46);
    double mean1 = 0, mean4 = 0, mean16 = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      req.seed = seed;
      req.n_samples = 1;
      const double b1 = serve(req, model, rnet, kOnes).best_score;
      req.n_samples = 4;
      const double b4 = serve(req, model, rnet, kOnes).best_score;
      req.n_samples = 16;
      const double b16 = serve(req, model, rnet, kOnes).best_score;
      CHECK(b4 >= b1);   // exact: maxima over nested sample sets
      CHECK(b16 >= b4);
      mean1 += b1;
      mean4 += b4;
      mean16 += b16;
    }
    CHECK(mean4 / 200 >= mean1 / 200);
    CHECK(mean16 / 200 >= mean4 / 200);
    CHECK(mean16 > mean1);
  }
}

TEST_CASE("full-breadth serving matches slate enumeration") {
  // Reduced serving scale: 8 candidates, 4 positions, so the whole ordered
  // slate space has 8*7*6*5 = 1680 members and can be scored outright.
  ModelConfig m = small_model_cfg();
  m.d_model = 32;
  m.l_out = 4;
  const RankerModel model(m, 2024);
  const RewardNet rnet(m, 32, 7);
  ServeRequest req = make_request(m, 8, 50);

  double oracle_best = -1e300;
  Slate oracle_slate;
  std::size_t enumerated = 0;
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t d = 0; d < 8; ++d) {
          if (a == b || a == c || a == d || b == c || b == d || c == d)
            continue;
          const Slate s{a, b, c, d};
          const double score =
              fused_prior_score(s, req.ctx, req.cands, rnet, {}, kOnes);
          ++enumerated;
          if (score > oracle_best) {
            oracle_best = score;
            oracle_slate = s;
          }
        }
  REQUIRE(enumerated == 1680);

  // Drawing as many samples as the space has members does not guarantee
  // exhaustive coverage, so the agreement below is only meaningful if this
  // noise key's draws actually reach the oracle argmax — assert that it
  // does (verified when the key was pinned; fails loudly if the sampling
  // stream ever changes).
  req.n_samples = 1680;
  req.seed = 0;
  Tensor cube = model.student_forward(model.encode(req.ctx, req.cands));
  SampledGroup draws =
      gumbel_sample_group(cube, req.n_samples, req.tau, req.seed, 0);
  REQUIRE(std::find(draws.slates.begin(), draws.slates.end(), oracle_slate) !=
          draws.slates.end());

  ServeResult res = serve(req, model, rnet, kOnes);
  REQUIRE(res.all_scores.size() == 1680);
  CHECK(res.forwards_used == 1);
  for (double s : res.all_scores) CHECK(s <= oracle_best + 1e-12);
  CHECK(res.best_score == doctest::Approx(oracle_best).epsilon(1e-12));
  CHECK(res.best == oracle_slate);
}

TEST_CASE("serving line protocol") {
  const ModelConfig m = small_model_cfg();
  const RankerModel model(m, 301);
  const RewardNet rnet(m, 8, 302);

  SUBCASE("request parsing with defaults") {
    ServeRequest req = parse_serve_request(
        R"({"ctx":{"user":[1,2,3,4],"query":[0.5,-0.5],"hist":[0,0,1,1]},)"
        R"("cands":[{"id":10,"feat":[1,0,0,0]},{"feat":[0,1,0,0]}]})");
    CHECK(req.ctx.user == std::vector<double>{1, 2, 3, 4});
    CHECK(req.ctx.query == std::vector<double>{0.5, -0.5});
    REQUIRE(req.cands.size() == 2);
    CHECK(req.cands[0].id == 10);
    CHECK(req.cands[1].id == 0);  // id is optional
    CHECK(req.cands[1].feat == std::vector<double>{0, 1, 0, 0});
    CHECK(req.n_samples == 8);  // defaults
    CHECK(req.tau == 0.8);
    CHECK(req.seed == 0);
  }

  SUBCASE("explicit knobs") {
    ServeRequest req = parse_serve_request(
        R"({"ctx":{"user":[1],"query":[1],"hist":[1]},)"
        R"("cands":[{"feat":[1]}],"n":3,"tau":1.5,"seed":42})");
    CHECK(req.n_samples == 3);
    CHECK(req.tau == 1.5);
    CHECK(req.seed == 42);
  }

  SUBCASE("malformed requests are rejected") {
    CHECK_THROWS_AS(parse_serve_request("not json"), UserError);
    CHECK_THROWS_AS(parse_serve_request("[1,2]"), UserError);
    CHECK_THROWS_AS(parse_serve_request(R"({"cands":[{"feat":[1]}]})"),
                    UserError);
    CHECK_THROWS_AS(
        parse_serve_request(
            R"({"ctx":{"user":[1],"query":[1],"hist":[1]},"cands":[]})"),
        UserError);
    CHECK_THROWS_AS(
        parse_serve_request(
            R"({"ctx":{"user":[1],"query":[1]},"cands":[{"feat":[1]}]})"),
        UserError);
    CHECK_THROWS_AS(
        parse_serve_request(R"({"ctx":{"user":[1],"query":[1],"hist":[1]},)"
                            R"("cands":[{"feat":[1]}],"n":0})"),
        UserError);
    CHECK_THROWS_AS(
        parse_serve_request(R"({"ctx":{"user":[1],"query":[1],"hist":[1]},)"
                            R"("cands":[{"feat":[1]}],"tau":-1})"),
        UserError);
    CHECK_THROWS_AS(
        parse_serve_request(R"({"ctx":{"user":[1],"query":["x"],"hist":[1]},)"
                            R"("cands":[{"feat":[1]}]})"),
        UserError);
  }

  SUBCASE("outcome data cannot ride along in a request") {
    // The request schema has no slot for engagement outcomes; any attempt
    // to attach them is rejected outright rather than silently dropped.
    CHECK_THROWS_AS(
        parse_serve_request(R"({"ctx":{"user":[1],"query":[1],"hist":[1]},)"
                            R"("cands":[{"feat":[1]}],"feedback":[[1,1,0]]})"),
        UserError);
    CHECK_THROWS_AS(
        parse_serve_request(R"({"ctx":{"user":[1],"query":[1],"hist":[1]},)"
                            R"("cands":[{"feat":[1],"clicked":true}]})"),
        UserError);
    CHECK_THROWS_AS(
        parse_serve_request(
            R"({"ctx":{"user":[1],"query":[1],"hist":[1],"relevance":[1]},)"
            R"("cands":[{"feat":[1]}]})"),
        UserError);
  }

  SUBCASE("result serialization round-trips through JSON") {
    ServeRequest req = make_request(m, 6, 60);
    req.n_samples = 4;
    ServeResult res = serve(req, model, rnet, kOnes);
    auto j = nlohmann::json::parse(serve_result_to_json(res));
    CHECK(j.at("best").get<Slate>() == res.best);
    CHECK(j.at("best_score").get<double>() == res.best_score);
    CHECK(j.at("all_scores").get<std::vector<double>>() == res.all_scores);
    CHECK(j.at("forwards_used").get<std::uint64_t>() == 1);
    CHECK(j.at("wall_time").get<double>() >= 0.0);
  }
}

TEST_CASE("decoding cost report") {
  const ModelConfig m = small_model_cfg();
  const RankerModel model(m, 301);
  const RewardNet rnet(m, 8, 302);

  SUBCASE("forward counts are exact and reproducible; times are reported") {
    BenchReport rep = bench_decoding(model, model, rnet, 40, 6, 11);
    CHECK(rep.trials == 40);
    CHECK(rep.teacher_l_out == m.l_out);
    CHECK(rep.serve_samples == 8);
    CHECK(rep.teacher_forwards_per_decode == m.l_out);
    CHECK(rep.student_forwards_per_serve == 1);
    CHECK(rep.teacher_median_s >= 0.0);
    CHECK(rep.serve_median_s >= 0.0);
    CHECK(rep.teacher_p99_s >= rep.teacher_median_s);
    CHECK(rep.serve_p99_s >= rep.serve_median_s);
    BenchReport again = bench_decoding(model, model, rnet, 40, 6, 11);
    CHECK(again.teacher_forwards_per_decode == rep.teacher_forwards_per_decode);
    CHECK(again.student_forwards_per_serve == rep.student_forwards_per_serve);

    auto j = nlohmann::json::parse(rep.to_json());
    CHECK(j.at("teacher_forwards_per_decode") == m.l_out);
    CHECK(j.at("student_forwards_per_serve") == 1);
    const std::string text = rep.to_text();
    CHECK(text.find("40 trials") != std::string::npos);
    CHECK(text.find("decoder forward") != std::string::npos);
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(bench_decoding(model, model, rnet, 0, 6, 1), UserError);
    ModelConfig wide = m;
    wide.d_model = 32;
    const RankerModel other(wide, 5);
    CHECK_THROWS_AS(bench_decoding(other, model, rnet, 5, 6, 1), UserError);
    CHECK_THROWS_AS(bench_decoding(model, model, rnet, 5, 2, 1), UserError);
  }
}
