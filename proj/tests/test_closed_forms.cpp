#include <cmath>

#include "doctest.h"
#include "dpocov/closed_forms.hpp"
#include "dpocov/numerics.hpp"
#include "dpocov/objectives.hpp"
#include "dpocov/oracles.hpp"
#include "dpocov/rng.hpp"
#include "fixtures.hpp"

using namespace dpocov;

TEST_SUITE("closed_forms") {

TEST_CASE("constant reward returns the reference policy") {
  const Instance inst = make_random_instance(3, 5, 2.0, 1);
  RewardTable r{Table(3, 5, 1.3)};
  const Policy pi = policy_from_reward(r, inst, 0.7, 0.0);
  for (std::size_t k = 0; k < pi.probs.size(); ++k) {
    CHECK(std::abs(pi.probs.data()[k] - inst.ref_policy.probs.data()[k]) <= 1e-15);
  }
}

TEST_CASE("two-point softmax") {
  const Instance inst = fixtures::two_arm(1.0, 0.0);
  const auto r = fixtures::reward(1, 2, {1.0, 0.0});
  const Policy pi = policy_from_reward(r, inst, 1.0, 0.0);
  const double e = std::exp(1.0);
  CHECK(pi(0, 0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-15));
  CHECK(pi(0, 1) == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-15));

  const RewardTable back = reward_from_policy(pi, inst, 1.0, 0.0);
  CHECK(std::abs((back(0, 0) - back(0, 1)) - 1.0) <= 1e-12);
}

TEST_CASE("log policy matches the policy") {
  const Instance inst = make_random_instance(4, 3, 3.0, 2);
  const RewardTable r = inst.true_reward;
  const Policy pi = policy_from_reward(r, inst, 0.2, 0.01);
  const Table lp = log_policy_from_reward(r, inst, 0.2, 0.01);
  for (std::size_t k = 0; k < lp.size(); ++k) {
    CHECK(std::exp(lp.data()[k]) == doctest::Approx(pi.probs.data()[k]).epsilon(1e-13));
  }
  const auto z = partition_table(r, inst, 0.2, 0.01);
  REQUIRE(z.z.size() == 4);
  for (std::size_t x = 0; x < 4; ++x) {
    const double a0 = inst.ref_policy(x, 0) *
                      std::exp((r(x, 0) - 0.01 * inst.length(x, 0)) / 0.2) / z.z[x];
    CHECK(a0 == doctest::Approx(pi(x, 0)).epsilon(1e-12));
  }
}

TEST_CASE("reference policy has zero implicit reward") {
  const Instance inst = make_random_instance(3, 4, 1.0, 3);
  const RewardTable r = reward_from_policy(inst.ref_policy, inst, 0.5, 0.0);
  for (double v : r.values.data()) CHECK(v == 0.0);
}

TEST_CASE("length penalty enters the implicit reward") {
  const Instance inst = make_random_instance(2, 3, 1.0, 4);
  const RewardTable r = reward_from_policy(inst.ref_policy, inst, 0.5, 0.01);
  for (std::size_t x = 0; x < 2; ++x) {
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(r(x, a) == doctest::Approx(0.01 * inst.length(x, a)).epsilon(1e-14));
    }
  }
}

TEST_CASE("policy round trip on random cases") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance inst = make_random_instance(1 + trial % 4, 2 + trial % 5, 2.0, trial);
    const double beta = rng.uniform(0.05, 2.0), omega = rng.uniform(0.0, 0.01);
    RewardTable r = inst.true_reward;
    const Policy pi = policy_from_reward(r, inst, beta, omega);
    const RewardTable rp = reward_from_policy(pi, inst, beta, omega);
    const Policy again = policy_from_reward(rp, inst, beta, omega);
    for (std::size_t k = 0; k < pi.probs.size(); ++k) {
      CHECK(std::abs(again.probs.data()[k] - pi.probs.data()[k]) <= 1e-12);
    }
    for (std::size_t x = 0; x < inst.n_prompts; ++x) {
      for (std::size_t a = 1; a < inst.n_responses; ++a) {
        CHECK(std::abs((rp(x, a) - rp(x, 0)) - (r(x, a) - r(x, 0))) <= 1e-12);
      }
    }
  }
}

TEST_CASE("noise closed form examples") {
  CHECK(noise_closed_form(0.7, 1, 1.0) == 0.0);
  CHECK(noise_closed_form(-5.0, -1, 3.0) == 0.0);
  CHECK(noise_closed_form(-0.3, 1, 0.5) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(noise_closed_form(0.2, -1, 0.25) == doctest::Approx(-0.8986122886681098).epsilon(1e-14));
  CHECK(std::abs(oracles::golden_section_noise(0.2, -1, 0.25) + 0.8986122886681098) < 1e-8);
  CHECK(noise_closed_form(1.0, 1, 0.5) == 0.0);
  CHECK(noise_threshold(0.5) == 0.0);
  CHECK(std::isinf(noise_threshold(1.0)));
  CHECK(noise_threshold(0.25) == doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(noise_closed_form(0.0, 1, 0.0), ValidationError);
}

TEST_CASE("noise closed form against golden section") {
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    const double d = rng.uniform(-6.0, 6.0);
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const double lambda = rng.uniform(0.01, 1.5);
    CHECK(std::abs(noise_closed_form(d, y, lambda) - oracles::golden_section_noise(d, y, lambda)) <
          1e-8);
  }
}

TEST_CASE("margin plus signed noise is the hinge maximum") {
  Rng rng(4);
  for (int k = 0; k < 1000; ++k) {
    const double d = rng.uniform(-5.0, 5.0);
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const double lambda = rng.uniform(0.01, 0.99);
    const double xi = noise_closed_form(d, y, lambda);
    CHECK(d + y * xi == doctest::Approx(std::max(d, noise_threshold(lambda))).epsilon(1e-13));
    CHECK(y * xi >= 0.0);
  }
}

TEST_CASE("noise from policy") {
  const Instance inst = make_random_instance(2, 3, 1.0, 5);
  const auto s = make_sample(1, 2, 0, 1, 0.0);
  CHECK(noise_from_policy(inst.ref_policy, s, inst, {1.0, 0.0, 0.0, 0.5}) == 0.0);
  const Policy pi = policy_from_reward(inst.true_reward, inst, 0.3, 0.0);
  CHECK(noise_from_policy(pi, s, inst, {0.3, 0.0, 0.0, 1.0}) == 0.0);
  CHECK(noise_from_policy(pi, s, inst, {0.3, 0.0, 0.0, 2.0}) == 0.0);
  const double margin = policy_reward_margin(pi, s, inst, 0.3, 0.0);
  CHECK(margin == doctest::Approx(inst.true_reward(1, 2) - inst.true_reward(1, 0)).epsilon(1e-12));
  CHECK(noise_from_policy(pi, s, inst, {0.3, 0.0, 0.0, 0.1}) ==
        doctest::Approx(noise_closed_form(margin, 1, 0.1)).epsilon(1e-13));
}

TEST_CASE("sigmoid band") {
  const auto zero = sigmoid_band(0.0, 0.0, 3.0);
  CHECK(zero.lower == 0.0);
  CHECK(zero.actual == 0.0);
  CHECK(zero.upper == 0.0);

  const auto b = sigmoid_band(0.5, -0.5, 1.0);
  CHECK(b.actual == doctest::Approx(0.24491866240370913).epsilon(1e-14));
  CHECK(b.lower == doctest::Approx(0.17487770452710944).epsilon(1e-14));
  CHECK(b.upper == 0.25);

  Rng rng(6);
  for (double R : {0.5, 1.0, 5.0}) {
    for (int k = 0; k < 20000; ++k) {
      const double z1 = rng.uniform(-R, R), z2 = rng.uniform(-R, R);
      const auto band = sigmoid_band(z1, z2, R);
      CHECK(band.lower <= band.actual + 1e-15);
      CHECK(band.actual <= band.upper + 1e-15);
    }
    const auto edge = sigmoid_band(R, -R, R);
    CHECK(edge.lower <= edge.actual);
  }
  CHECK_THROWS_AS(sigmoid_band(1.5, 0.0, 1.0), ValidationError);
}

TEST_CASE("closed-form maximiser beats random policies") {
  Rng rng(8);
  const Instance inst = make_random_instance(3, 4, 1.0, 9);
  const double beta = 0.4, omega = 0.002;
  const Policy best = policy_from_reward(inst.true_reward, inst, beta, omega);
  const double v_best = relative_value(best, inst.true_reward, inst.ref_policy, inst, beta, omega);
  for (int k = 0; k < 300; ++k) {
    Policy p{Table(3, 4)};
    for (std::size_t x = 0; x < 3; ++x) {
      double s = 0.0;
      for (std::size_t a = 0; a < 4; ++a) s += p.probs(x, a) = rng.uniform(1e-3, 1.0);
      for (std::size_t a = 0; a < 4; ++a) p.probs(x, a) /= s;
    }
    CHECK(relative_value(p, inst.true_reward, inst.ref_policy, inst, beta, omega) <= v_best);
  }
  const auto mirror = oracles::mirror_ascent_value_max(inst, inst.true_reward, beta, omega);
  CHECK(mirror.converged);
  CHECK(relative_value(mirror.policy, inst.true_reward, inst.ref_policy, inst, beta, omega) <=
        v_best + 1e-8);
}

}  // TEST_SUITE
