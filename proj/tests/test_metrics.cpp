#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "dualrr/metrics.hpp"

using namespace dualrr;

TEST_CASE("position-wise top-1 agreement") {
  SUBCASE("identical rows agree everywhere") {
    Tensor teacher = Tensor::from(2, 4, {1.0, 5.0, 2.0, 0.0,
                                         -1e9, 0.5, 3.0, 1.0});
    Tensor student = Tensor::from(2, 4, {1.0, 5.0, 2.0, 0.0,
                                         -1e9, 0.5, 3.0, 1.0});
    CHECK(position_agreement(teacher, student, {1, 2}) == 1.0);
  }

  SUBCASE("an adversarial opposite disagrees everywhere") {
    Tensor teacher = Tensor::from(2, 4, {1.0, 5.0, 2.0, 0.0,
                                         -1e9, 0.5, 3.0, 1.0});
    Tensor student = Tensor::from(2, 4, {-1.0, -5.0, -2.0, 0.5,
                                         9.0, -0.5, -3.0, -1.0});
    // Row 0: teacher picks 1, student picks 3. Row 1: after placing item 1
    // the student's candidates are {0,2,3} with values {9,-3,-1} -> 0, while
    // the teacher picks 2.
    CHECK(position_agreement(teacher, student, {1, 2}) == 0.0);
  }

  SUBCASE("duplicate masking redirects the student argmax") {
    Tensor teacher = Tensor::from(2, 3, {4.0, 1.0, 0.0,
                                         -1e9, 1.0, 3.0});
    Tensor student = Tensor::from(2, 3, {5.0, 1.0, 1.0,
                                         9.0, 1.0, 2.0});
    // Row 1 unmasked would pick the already-placed item 0; masked by the
    // reference prefix {0} it picks 2, matching the teacher.
    CHECK(position_agreement(teacher, student, {0, 2}) == 1.0);
  }

  SUBCASE("partial agreement averages over positions") {
    Tensor teacher = Tensor::from(2, 3, {4.0, 1.0, 0.0,
                                         -1e9, 3.0, 1.0});
    Tensor student = Tensor::from(2, 3, {4.0, 1.0, 0.0,
                                         0.0, 1.0, 3.0});
    CHECK(position_agreement(teacher, student, {0, 1}) == 0.5);
  }

  SUBCASE("shape and reference validation") {
    Tensor a = Tensor::from(2, 3, {0, 0, 0, 0, 0, 0});
    Tensor b = Tensor::from(2, 4, {0, 0, 0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(position_agreement(a, b, {0, 1}), Error);
    Tensor c = Tensor::from(2, 3, {0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(position_agreement(a, c, {0}), Error);
    CHECK_THROWS_AS(position_agreement(a, c, {0, 9}), Error);
  }
}

TEST_CASE("agreement over an evaluation stream") {
  ModelConfig mc;
  RankerModel model(mc, 31);
  EnvConfig env;
  env.seed = 5;
  StreamSim sim(env);
  auto eval_set = sim.next_batch(StreamSim::uniform_policy(2, 6), 8);

  SUBCASE("yields a fraction and is deterministic") {
    const double a = ptar(model, eval_set);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    CHECK(ptar(model, eval_set) == a);
  }

  SUBCASE("rejects empty sets and mismatched slates") {
    CHECK_THROWS_AS(ptar(model, {}), Error);
    EnvConfig short_env;
    short_env.l_out = 4;
    short_env.seed = 6;
    StreamSim short_sim(short_env);
    auto short_set = short_sim.next_batch(StreamSim::uniform_policy(2, 4), 2);
    CHECK_THROWS_AS(ptar(model, short_set), Error);
  }
}

TEST_CASE("ranking flip rate") {
  SUBCASE("copying the teacher never flips") {
    CHECK(rfr({3.0, 2.0, 1.0}, {3.0, 2.0, 1.0}) == 0.0);
  }

  SUBCASE("negating the teacher flips every pair") {
    CHECK(rfr({3.0, 2.0, 1.0}, {-3.0, -2.0, -1.0}) == 1.0);
  }

  SUBCASE("one flip among three pairs") {
    CHECK(rfr({3.0, 2.0, 1.0}, {3.0, 1.0, 2.0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  SUBCASE("student ties are half flips") {
    CHECK(rfr({2.0, 1.0}, {5.0, 5.0}) == 0.5);
    CHECK(rfr({3.0, 2.0, 1.0}, {7.0, 7.0, 7.0}) == 0.5);
  }

  SUBCASE("teacher ties only prune the pair set") {
    // Ordered pairs: (0,2), (1,2) — the tied teacher pair (0,1) is skipped.
    CHECK(rfr({2.0, 2.0, 1.0}, {1.0, 5.0, 3.0}) == 0.5);
  }

  SUBCASE("monotone transforms of the teacher never flip") {
    std::vector<double> teacher = {0.3, -1.2, 2.5, 0.0, 1.1};
    std::vector<double> student;
    for (double v : teacher) student.push_back(std::exp(v) * 3.0 + 1.0);
    CHECK(rfr(teacher, student) == 0.0);
  }

  SUBCASE("degenerate inputs are rejected") {
    CHECK_THROWS_AS(rfr({1.0}, {1.0}), Error);
    CHECK_THROWS_AS(rfr({1.0, 2.0}, {1.0}), Error);
    try {
      rfr({4.0, 4.0, 4.0}, {1.0, 2.0, 3.0});
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("no ordered pairs") != std::string::npos);
    }
  }
}

TEST_CASE("pairwise ranking accuracy") {
  SUBCASE("perfect separation") {
    CHECK(auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  }

  SUBCASE("identical scores sit at chance") {
    CHECK(auc({0.5, 0.5, 0.5}, {1, 0, 1}) == 0.5);
  }

  SUBCASE("mixed example averages pair wins") {
    CHECK(auc({0.9, 0.8, 0.1}, {1, 0, 1}) == 0.5);  // (1 + 0) / 2
  }

  SUBCASE("reversed separation scores zero") {
    CHECK(auc({0.1, 0.9}, {1, 0}) == 0.0);
  }

  SUBCASE("rejects degenerate label sets") {
    CHECK_THROWS_AS(auc({0.5, 0.6}, {1, 1}), Error);
    CHECK_THROWS_AS(auc({0.5, 0.6}, {0, 0}), Error);
    CHECK_THROWS_AS(auc({0.5}, {1, 0}), Error);
    CHECK_THROWS_AS(auc({0.5, 0.6}, {0, 2}), Error);
  }
}

TEST_CASE("distribution profile") {
  SUBCASE("one-hot is fully confident with one branch") {
    auto p = distribution_profile({0.0, 1.0, 0.0});
    CHECK(p.top1_confidence == 1.0);
    CHECK(p.branching_factor == 1.0);
  }

  SUBCASE("uniform over four") {
    auto p = distribution_profile({0.25, 0.25, 0.25, 0.25});
    CHECK(p.top1_confidence == 0.25);
    CHECK(p.branching_factor == 4.0);
  }

  SUBCASE("two equal modes give one bit") {
    auto p = distribution_profile({0.5, 0.5, 0.0, 0.0});
    CHECK(p.top1_confidence == 0.5);
    CHECK(p.branching_factor == 2.0);
  }

  SUBCASE("uniform over n branches n ways") {
    for (std::size_t n : {2, 3, 5, 8, 13}) {
      std::vector<double> dist(n, 1.0 / static_cast<double>(n));
      auto p = distribution_profile(dist);
      CHECK(p.branching_factor ==
            doctest::Approx(static_cast<double>(n)).epsilon(1e-12));
    }
  }

  SUBCASE("branching stays within [1, n]") {
    Rng rng(88);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> dist(6);
      double sum = 0.0;
      for (double& v : dist) {
        v = rng.uniform();
        sum += v;
      }
      for (double& v : dist) v /= sum;
      auto p = distribution_profile(dist);
      CHECK(p.branching_factor >= 1.0 - 1e-12);
      CHECK(p.branching_factor <= 6.0 + 1e-12);
      CHECK(p.top1_confidence >= 1.0 / 6.0 - 1e-12);
    }
  }

  SUBCASE("rejects malformed distributions") {
    CHECK_THROWS_AS(distribution_profile({0.5, 0.6}), Error);
    CHECK_THROWS_AS(distribution_profile({0.5, 0.4}), Error);
    CHECK_THROWS_AS(distribution_profile({1.5, -0.5}), Error);
    CHECK_THROWS_AS(distribution_profile({}), Error);
  }
}

TEST_CASE("slate set consistency") {
  SUBCASE("identical slates") {
    CHECK(sequence_consistency({3, 1, 2}, {3, 1, 2}) == 1.0);
  }

  SUBCASE("order does not matter") {
    CHECK(sequence_consistency({3, 1, 2}, {2, 3, 1}) == 1.0);
  }

  SUBCASE("disjoint slates") {
    CHECK(sequence_consistency({0, 1}, {2, 3}) == 0.0);
  }

  SUBCASE("ten-position slates sharing six items") {
    Slate pred = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    Slate truth = {0, 1, 2, 3, 4, 5, 10, 11, 12, 13};
    CHECK(sequence_consistency(pred, truth) ==
          doctest::Approx(6.0 / 14.0).epsilon(1e-15));
  }

  SUBCASE("empty slates are identical") {
    CHECK(sequence_consistency({}, {}) == 1.0);
    CHECK(sequence_consistency({}, {1}) == 0.0);
  }
}

TEST_CASE("metric report serialization") {
  MetricReport report;
  report.window_start = 100;
  report.window_end = 200;
  report.samples = 64;
  report.add("auc", 0.75);
  report.add("flip_rate", 0.125);
  CHECK(report.to_json() ==
        R"({"window_start":100,"window_end":200,"samples":64,)"
        R"("metrics":{"auc":0.75,"flip_rate":0.125}})");
}
