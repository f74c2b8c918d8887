#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "dualrr/theory.hpp"

using namespace dualrr;

TEST_CASE("categorical distributions and divergences") {
  SUBCASE("validation") {
    Categorical ok{{0.25, 0.75}};
    CHECK_NOTHROW(ok.validate());
    Categorical empty{{}};
    Categorical bad_sum{{0.5, 0.6}};
    Categorical negative{{1.5, -0.5}};
    Categorical too_wide;
    too_wide.probs.assign(17, 1.0 / 17.0);
    CHECK_THROWS_AS(empty.validate(), Error);
    CHECK_THROWS_AS(bad_sum.validate(), Error);
    CHECK_THROWS_AS(negative.validate(), Error);
    CHECK_THROWS_AS(too_wide.validate(), Error);
  }

  SUBCASE("known divergence and distance values") {
    Categorical p{{0.5, 0.5}};
    Categorical q{{0.25, 0.75}};
    CHECK(kl_divergence(p, q) ==
          doctest::Approx(0.14384103622589042).epsilon(1e-14));
    CHECK(tv_distance(p, q) == 0.25);
    CHECK(kl_divergence(p, p) == 0.0);
    CHECK(tv_distance(p, p) == 0.0);
  }

  SUBCASE("absolute continuity failures are infinite") {
    Categorical p{{0.5, 0.5, 0.0}};
    Categorical q{{1.0, 0.0, 0.0}};
    CHECK(kl_divergence(p, q) == std::numeric_limits<double>::infinity());
    // The reverse direction ignores the student-only support.
    CHECK(std::isfinite(kl_divergence(q, p)));
  }

  SUBCASE("simplex draws are uniform-ish and valid") {
    Rng rng(99);
    std::vector<double> mean(4, 0.0);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
      Categorical c = random_simplex(rng, 4);
      CHECK_NOTHROW(c.validate());
      for (std::size_t j = 0; j < 4; ++j) mean[j] += c.probs[j];
    }
    for (double m : mean) CHECK(std::abs(m / draws - 0.25) < 0.01);
  }

  SUBCASE("mixtures interpolate and hit divergence targets") {
    Rng rng(7);
    Categorical base = random_simplex(rng, 5);
    Categorical noise = random_simplex(rng, 5);
    CHECK(mix(base, noise, 0.0).probs == base.probs);
    CHECK(mix(base, noise, 1.0).probs == noise.probs);

    Categorical near = perturb_to_kl(base, noise, 0.0);
    CHECK(kl_divergence(base, near) < 1e-12);

    const double full = kl_divergence(base, noise);
    for (double target : {0.001, 0.01, 0.05}) {
      if (target >= full) continue;
      Categorical s = perturb_to_kl(base, noise, target);
      CHECK(kl_divergence(base, s) == doctest::Approx(target).epsilon(1e-9));
    }
    // Unreachable targets return the endpoint.
    Categorical far = perturb_to_kl(base, noise, full + 10.0);
    CHECK(far.probs == noise.probs);
  }

  SUBCASE("pinsker inequality on random pairs") {
    Rng rng(17);
    for (int i = 0; i < 2000; ++i) {
      Categorical p = random_simplex(rng, 6);
      Categorical q = random_simplex(rng, 6);
      CHECK(tv_distance(p, q) <= std::sqrt(kl_divergence(p, q) / 2.0) + 1e-12);
    }
  }
}

TEST_CASE("ranking stability bound") {
  SUBCASE("plugged formula value at eps 0.02, margin 0.5") {
    // sqrt(2 * 0.02) / 0.5 = 0.4.
    Rng rng(23);
    Categorical t = random_simplex(rng, 4);
    Categorical n = random_simplex(rng, 4);
    REQUIRE(kl_divergence(t, n) > 0.02);
    Categorical s = perturb_to_kl(t, n, 0.02);
    const double eps_hat = kl_divergence(t, s);
    CHECK(std::sqrt(2.0 * eps_hat) / 0.5 ==
          doctest::Approx(0.40000000000000002).epsilon(1e-7));
  }

  SUBCASE("sampled verification finds no counterexample") {
    FlipBoundReport report = verify_flip_bound(
        2000, 4, {0.005, 0.02, 0.08}, {0.1, 0.3, 0.5}, 1234);
    CHECK(report.dist_pairs == 6000);
    CHECK(report.sufficient_violations == 0);
    CHECK(report.sufficient_cases > 0);
    CHECK(report.pinsker_max_excess <= 1e-12);
    REQUIRE(report.cells.size() == 9);
    for (const FlipCell& cell : report.cells) {
      CHECK(cell.flips <= cell.margin_pairs);
      if (cell.margin_pairs > 0) CHECK(cell.mean_bound > 0.0);
    }
    // Identical runs produce identical reports.
    FlipBoundReport again = verify_flip_bound(
        2000, 4, {0.005, 0.02, 0.08}, {0.1, 0.3, 0.5}, 1234);
    CHECK(report.to_json() == again.to_json());
  }

  SUBCASE("an unperturbed student never flips") {
    // Target divergence 0 pins the student to the teacher: every margin pair
    // is then a sufficient-condition case and none may flip.
    FlipBoundReport report =
        verify_flip_bound(500, 3, {1e-9}, {0.05, 0.2}, 77);
    CHECK(report.sufficient_violations == 0);
    CHECK(report.sufficient_cases > 0);
  }

  SUBCASE("exhaustive grid at coarse resolution") {
    GridReport report = flip_bound_grid(3, 0.05);
    CHECK(report.points == 231);  // compositions of 20 into 3 parts
    CHECK(report.dist_pairs == 231ull * 231ull);
    CHECK(report.violations == 0);
    CHECK(report.sufficient_cases > 0);
    CHECK(report.pinsker_max_excess <= 1e-12);
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS(verify_flip_bound(0, 4, {0.1}, {0.1}, 1), UserError);
    CHECK_THROWS_AS(verify_flip_bound(10, 1, {0.1}, {0.1}, 1), UserError);
    CHECK_THROWS_AS(verify_flip_bound(10, 4, {}, {0.1}, 1), UserError);
    CHECK_THROWS_AS(verify_flip_bound(10, 4, {0.1}, {-0.1}, 1), UserError);
    CHECK_THROWS_AS(flip_bound_grid(4, 0.03), UserError);  // does not divide 1
    CHECK_THROWS_AS(flip_bound_grid(1, 0.1), UserError);
  }
}

TEST_CASE("conditional sequential dependency") {
  SUBCASE("deterministic outcomes carry no dependency") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      DiscreteEnv env = deterministic_env(4, 4, 2, seed);
      CHECK(cmi_exact(env, 2) == 0.0);
    }
  }

  SUBCASE("factorized outcomes carry no dependency") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      DiscreteEnv env = factorized_env(3, 4, 3, seed);
      CHECK(cmi_exact(env, 2) <= 1e-12);
      CHECK(cmi_exact(env, 3) <= 1e-12);
    }
  }

  SUBCASE("flat softmax carries no dependency") {
    DiscreteEnv env = random_env(4, 4, 2, 0.0, 5);
    CHECK(cmi_exact(env, 2) <= 1e-12);
  }

  SUBCASE("dependency never exceeds either entropy cap") {
    for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull}) {
      DiscreteEnv env = random_env(4, 4, 3, 1.0, seed);
      for (std::size_t t : {std::size_t{2}, std::size_t{3}}) {
        const double c = cmi_exact(env, t);
        CHECK(c >= 0.0);
        CHECK(c <= cond_entropy_position(env, t) + 1e-12);
        CHECK(c <= cond_entropy_prefix(env, t) + 1e-12);
      }
    }
  }

  SUBCASE("sharpening drives dependency monotonically to zero") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      double prev = std::numeric_limits<double>::infinity();
      for (double gamma : {1.0, 2.0, 4.0, 8.0}) {
        DiscreteEnv env = random_env(4, 4, 2, gamma, seed);
        const double c = cmi_exact(env, 2);
        CHECK(c <= prev + 1e-12);
        prev = c;
      }
      DiscreteEnv sharp = random_env(4, 4, 2, 64.0, seed);
      CHECK(cmi_exact(sharp, 2) < 1e-3);
    }
  }

  SUBCASE("position validation") {
    DiscreteEnv env = random_env(2, 3, 2, 1.0, 1);
    CHECK_THROWS_AS(cmi_exact(env, 1), Error);
    CHECK_THROWS_AS(cmi_exact(env, 3), Error);
    CHECK_THROWS_AS(cond_entropy_position(env, 1), Error);
    CHECK_THROWS_AS(cond_entropy_prefix(env, 4), Error);
  }

  SUBCASE("table validation") {
    DiscreteEnv env = random_env(2, 3, 2, 1.0, 1);
    DiscreteEnv bad = env;
    bad.table[0] += 0.5;
    CHECK_THROWS_AS(cmi_exact(bad, 2), Error);
    DiscreteEnv wide = env;
    wide.v = 7;
    CHECK_THROWS_AS(cmi_exact(wide, 2), Error);
  }
}
