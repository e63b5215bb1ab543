#include <cmath>

#include "doctest.h"
#include "dpocov/core_types.hpp"
#include "dpocov/numerics.hpp"
#include "fixtures.hpp"

using namespace dpocov;

TEST_SUITE("core_types") {

TEST_CASE("smallest random instance") {
  const Instance inst = make_random_instance(1, 2, 1.0, 0);
  CHECK(inst.n_prompts == 1);
  CHECK(inst.n_responses == 2);
  for (double r : inst.true_reward.values.data()) {
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
  CHECK_NOTHROW(validate_instance(inst));
}

TEST_CASE("random instance is a pure function of its seed") {
  const Instance a = make_random_instance(8, 6, 5.0, 7);
  const Instance b = make_random_instance(8, 6, 5.0, 7);
  const Instance c = make_random_instance(8, 6, 5.0, 8);
  CHECK(a == b);
  CHECK(instance_hash(a) == instance_hash(b));
  CHECK_FALSE(a == c);
  CHECK(instance_hash(a) != instance_hash(c));
}

TEST_CASE("policy rows sum to one") {
  const Instance inst = make_random_instance(4, 4, 2.0, 3);
  for (const Policy* p : {&inst.ref_policy, &inst.behavior_policy}) {
    for (std::size_t x = 0; x < 4; ++x) {
      double s = 0.0;
      for (std::size_t a = 0; a < 4; ++a) {
        CHECK((*p)(x, a) > 0.0);
        s += (*p)(x, a);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  double s = 0.0;
  for (double p : inst.prompt_dist) s += p;
  CHECK(std::abs(s - 1.0) <= 1e-12);
}

TEST_CASE("random instance rejects degenerate shapes") {
  CHECK_THROWS_AS(make_random_instance(0, 2, 1.0, 0), ValidationError);
  CHECK_THROWS_AS(make_random_instance(1, 1, 1.0, 0), ValidationError);
  CHECK_THROWS_AS(make_random_instance(1, 2, 0.0, 0), ValidationError);
}

TEST_CASE("policy validation") {
  Policy p{Table(1, 2, std::vector<double>{0.4, 0.6})};
  CHECK_NOTHROW(validate_policy(p, true));
  p.probs(0, 1) = 0.7;
  CHECK_THROWS_AS(validate_policy(p, false), ValidationError);
  Policy zero{Table(1, 2, std::vector<double>{0.0, 1.0})};
  CHECK_NOTHROW(validate_policy(zero, false));
  CHECK_THROWS_AS(validate_policy(zero, true), ValidationError);
  Policy neg{Table(1, 2, std::vector<double>{-0.1, 1.1})};
  CHECK_THROWS_AS(validate_policy(neg, false), ValidationError);
}

TEST_CASE("instance validation catches each broken field") {
  const Instance good = fixtures::two_arm(1.0, 0.0);
  CHECK_NOTHROW(validate_instance(good));

  Instance bad = good;
  bad.true_reward(0, 0) = 1.5;
  CHECK_THROWS_AS(validate_instance(bad), ValidationError);

  bad = good;
  bad.prompt_dist = {0.5};
  CHECK_THROWS_AS(validate_instance(bad), ValidationError);

  bad = good;
  bad.response_len = {1};
  CHECK_THROWS_AS(validate_instance(bad), ValidationError);

  bad = good;
  bad.response_len = {1, -2};
  CHECK_THROWS_AS(validate_instance(bad), ValidationError);

  bad = good;
  bad.ref_policy.probs = Table(1, 2, std::vector<double>{1.0, 0.0});
  CHECK_THROWS_AS(validate_instance(bad), ValidationError);

  bad = good;
  bad.behavior_policy.probs = Table(2, 2, 0.5);
  CHECK_THROWS_AS(validate_instance(bad), ValidationError);
}

TEST_CASE("hyperparameter validation") {
  CHECK_NOTHROW(validate_hyperparams({0.05, 0.0005, 0.0005, 0.7}));
  CHECK_THROWS_AS(validate_hyperparams({0.0, 0.0, 0.0, 1.0}), ValidationError);
  CHECK_THROWS_AS(validate_hyperparams({1.0, -1e-3, 0.0, 1.0}), ValidationError);
  CHECK_THROWS_AS(validate_hyperparams({1.0, 0.0, -1.0, 1.0}), ValidationError);
  try {
    validate_hyperparams({1.0, 0.0, 0.0, 0.0});
    FAIL("lambda = 0 accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("unbounded") != std::string::npos);
  }
}

TEST_CASE("corruption validation") {
  CHECK_NOTHROW(validate_corruption({0.25, 4.0, NoiseSign::kRandomSign}));
  CHECK_THROWS_AS(validate_corruption({1.5, 1.0, NoiseSign::kRandomSign}), ValidationError);
  CHECK_THROWS_AS(validate_corruption({0.5, -1.0, NoiseSign::kRandomSign}), ValidationError);
}

TEST_CASE("instance json round trip") {
  const Instance inst = make_random_instance(3, 4, 2.5, 11);
  const Instance back = instance_from_json(instance_to_json(inst));
  CHECK(back == inst);
  auto j = instance_to_json(inst);
  j["true_reward"] = std::vector<double>{1.0};
  CHECK_THROWS_AS(instance_from_json(j), ValidationError);
}

TEST_CASE("enum string round trips") {
  for (auto s : {NoiseSign::kFixedPositive, NoiseSign::kFixedNegative, NoiseSign::kRandomSign}) {
    CHECK(noise_sign_from_string(to_string(s)) == s);
  }
  CHECK(setting_from_string("online") == Setting::kOnline);
  CHECK_THROWS(noise_sign_from_string("sideways"));
  const CorruptionSpec c{0.3, 2.0, NoiseSign::kFixedNegative};
  CHECK(corruption_from_json(corruption_to_json(c)) == c);
}

TEST_CASE("stable numerics") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(std::isfinite(log_sigmoid(-800.0)));
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  const std::vector<double> v{1000.0, 1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(2.0)));
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5}) {
    CHECK(std::stod(format_double(x)) == x);
  }
}

}  // TEST_SUITE
