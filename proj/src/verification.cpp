#include "dpocov/verification.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dpocov/closed_forms.hpp"
#include "dpocov/numerics.hpp"
#include "dpocov/objectives.hpp"
#include "dpocov/oracles.hpp"
#include "dpocov/rng.hpp"
#include "dpocov/training.hpp"

namespace dpocov {

namespace {

class Tally {
 public:
  Tally(std::string name, double tol) {
    r_.name = std::move(name);
    r_.tolerance = tol;
  }

  template <typename WitnessFn>
  void record(double err, WitnessFn witness) {
    ++r_.trials;
    if (!(err <= r_.worst)) r_.worst = err;
    if (!(err <= r_.tolerance)) {
      if (r_.violations == 0) r_.witness = witness();
      ++r_.violations;
    }
  }

  std::size_t trials() const { return r_.trials; }

  CheckResult finish() {
    r_.passed = r_.violations == 0 && r_.trials > 0;
    return std::move(r_);
  }

 private:
  CheckResult r_;
};

std::string kv(std::initializer_list<std::pair<const char*, double>> fields) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, v] : fields) {
    os << (first ? "" : " ") << k << '=' << format_double(v);
    first = false;
  }
  return os.str();
}

Policy random_policy_on(Rng& rng, std::size_t nx, std::size_t na) {
  Table t(nx, na);
  for (std::size_t x = 0; x < nx; ++x) {
    double total = 0.0;
    for (double& v : t.row(x)) {
      // Exponential weights reach near-degenerate rows as well as flat ones.
      v = -std::log(1.0 - rng.uniform()) + 1e-300;
      total += v;
    }
    for (double& v : t.row(x)) v /= total;
  }
  return Policy{std::move(t)};
}

RewardTable random_reward_on(Rng& rng, const Instance& inst) {
  RewardTable r{Table(inst.n_prompts, inst.n_responses)};
  for (double& v : r.values.data()) v = rng.uniform(0.0, inst.reward_bound);
  return r;
}

Instance random_instance(Rng& rng, std::size_t max_x, std::size_t max_a) {
  const auto nx = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(max_x)));
  const auto na = static_cast<std::size_t>(rng.uniform_int(2, static_cast<std::int64_t>(max_a)));
  const double R = rng.uniform(0.5, 5.0);
  return make_random_instance(nx, na, R, rng.next_u64());
}

Hyperparams random_hyperparams(Rng& rng) {
  Hyperparams hp;
  hp.beta = rng.uniform(0.1, 2.0);
  hp.eta = rng.bernoulli(0.5) ? 0.0 : rng.uniform(0.0, 0.5);
  hp.omega = rng.bernoulli(0.5) ? 0.0 : rng.uniform(0.0, 0.01);
  hp.lambda = rng.bernoulli(0.25) ? 1.0 : rng.uniform(0.05, 1.0);
  return hp;
}

CorruptionSpec random_corruption(Rng& rng) {
  CorruptionSpec c;
  c.corrupt_fraction = rng.uniform(0.0, 0.5);
  c.noise_magnitude = rng.uniform(0.0, 4.0);
  c.sign_rule = NoiseSign::kRandomSign;
  return c;
}

}  // namespace

nlohmann::json check_to_json(const CheckResult& c) {
  return {{"name", c.name},     {"passed", c.passed}, {"trials", c.trials},
          {"violations", c.violations}, {"worst", c.worst}, {"tolerance", c.tolerance},
          {"witness", c.witness}};
}

CheckResult check_closed_form_maximizer(std::uint64_t seed, std::size_t instances,
                                        std::size_t random_policies, double tol) {
  Rng rng = Rng::derive(seed, 101);
  Tally tally("closed_form_maximizer", tol);
  for (std::size_t k = 0; k < instances; ++k) {
    const Instance inst = random_instance(rng, 8, 6);
    const double beta = rng.uniform(0.1, 2.0);
    const double omega = rng.bernoulli(0.5) ? 0.0 : rng.uniform(0.0, 0.01);
    const RewardTable r = random_reward_on(rng, inst);
    const Policy base = random_policy_on(rng, inst.n_prompts, inst.n_responses);
    const Policy pi_r = policy_from_reward(r, inst, beta, omega);
    const double v_star = relative_value(pi_r, r, base, inst, beta, omega);
    auto witness = [&] {
      return kv({{"instance", static_cast<double>(k)}, {"beta", beta}, {"omega", omega},
                 {"R", inst.reward_bound}});
    };

    double worst_excess = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < random_policies; ++p) {
      const Policy other = random_policy_on(rng, inst.n_prompts, inst.n_responses);
      worst_excess =
          std::max(worst_excess, relative_value(other, r, base, inst, beta, omega) - v_star);
    }
    // A random policy must not beat the closed form (beyond rounding).
    tally.record(worst_excess > 1e-12 ? worst_excess : 0.0, witness);

    const auto ascent = oracles::mirror_ascent_value_max(inst, r, beta, omega);
    double err = std::abs(relative_value(ascent.policy, r, base, inst, beta, omega) - v_star);
    for (std::size_t i = 0; i < pi_r.probs.size(); ++i) {
      err = std::max(err, std::abs(ascent.policy.probs.data()[i] - pi_r.probs.data()[i]));
    }
    tally.record(err, witness);
  }
  return tally.finish();
}

CheckResult check_noise_closed_form(std::uint64_t seed, std::size_t triples, double tol) {
  Rng rng = Rng::derive(seed, 102);
  Tally tally("noise_closed_form", tol);
  for (std::size_t k = 0; k < triples; ++k) {
    const double d = rng.uniform(-6.0, 6.0);
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const double lambda = (k % 4 == 0) ? rng.uniform(1.0, 3.0) : rng.uniform(1e-3, 1.0);
    const double closed = noise_closed_form(d, y, lambda);
    const double numeric = oracles::golden_section_noise(d, y, lambda);
    double err = std::abs(closed - numeric);
    if (lambda >= 1.0 && closed != 0.0) err = std::max(err, std::abs(closed));
    tally.record(err, [&] { return kv({{"r_diff", d}, {"y", y}, {"lambda", lambda}}); });
  }
  return tally.finish();
}

CheckResult check_vanilla_reduction(std::uint64_t seed, std::size_t datasets, double tol) {
  Rng rng = Rng::derive(seed, 103);
  Tally tally("vanilla_reduction", tol);
  for (std::size_t k = 0; k < datasets; ++k) {
    const Instance inst = random_instance(rng, 6, 6);
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 300));
    const auto data = generate_offline_dataset(inst, n, random_corruption(rng), rng.next_u64());
    Hyperparams hp;
    hp.beta = rng.uniform(0.05, 2.0);
    const Policy pi = random_policy_on(rng, inst.n_prompts, inst.n_responses);
    auto witness = [&] { return kv({{"dataset", static_cast<double>(k)}, {"beta", hp.beta}}); };
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };

    const double vanilla = vanilla_dpo_loss(pi, data, inst, hp.beta);
    tally.record(rel(offline_loss(pi, data, inst, hp).total, vanilla), witness);

    const std::size_t prefix = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(n)));
    const double vanilla_prefix = vanilla_dpo_loss(pi, data, inst, hp.beta, prefix);
    tally.record(rel(online_loss(pi, data, prefix, inst, hp).total, vanilla_prefix), witness);
  }
  return tally.finish();
}

CheckResult check_gradient(std::uint64_t seed, std::size_t points, double tol) {
  Rng rng = Rng::derive(seed, 104);
  Tally tally("gradient", tol);
  const double h = 1e-5;
  std::size_t attempts = 0;
  while (attempts < points * 20 && tally.trials() < points) {
    ++attempts;
    const Instance inst = random_instance(rng, 4, 5);
    const auto data = generate_offline_dataset(
        inst, static_cast<std::size_t>(rng.uniform_int(5, 200)), random_corruption(rng),
        rng.next_u64());
    const Hyperparams hp = random_hyperparams(rng);
    const Setting setting = rng.bernoulli(0.5) ? Setting::kOffline : Setting::kOnline;
    std::vector<double> theta(inst.n_prompts * inst.n_responses);
    for (double& v : theta) v = rng.uniform(-3.0, 3.0);

    // Skip points whose margins sit within the differencing window of the kink.
    const RewardTable r = reward_from_params(theta, inst);
    const double tau = noise_threshold(hp.lambda);
    // A step h in theta moves a margin by at most R h / 2.
    bool near_kink = false;
    for (const auto& s : data.samples) {
      const double d = r(s.prompt, s.winner) - r(s.prompt, s.loser);
      if (std::abs(d - tau) < 100.0 * h * inst.reward_bound) near_kink = true;
    }
    if (near_kink) continue;

    auto f = [&](std::span<const double> t) {
      const Policy pi = policy_from_params(t, inst, hp.beta, hp.omega);
      return setting == Setting::kOffline ? offline_loss(pi, data, inst, hp).total
                                          : online_loss(pi, data, data.size(), inst, hp).total;
    };
    const auto analytic = loss_gradient(theta, data, inst, hp, setting);
    const auto numeric = oracles::central_difference(f, theta, h);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      scale += numeric[i] * numeric[i];
    }
    const double err = std::sqrt(diff) / std::max(std::sqrt(scale), 1e-6);
    tally.record(err, [&] {
      return kv({{"beta", hp.beta}, {"eta", hp.eta}, {"omega", hp.omega}, {"lambda", hp.lambda},
                 {"online", setting == Setting::kOnline ? 1.0 : 0.0}});
    });
  }
  return tally.finish();
}

EquivalenceOutcome check_equivalence(std::uint64_t seed, std::size_t n_prompts,
                                     std::size_t grid_resolution, double tv_tol) {
  Instance inst;
  inst.n_prompts = n_prompts;
  inst.n_responses = 2;
  inst.reward_bound = 2.0;
  inst.prompt_dist.assign(n_prompts, 1.0 / static_cast<double>(n_prompts));
  inst.ref_policy.probs = Table(n_prompts, 2, 0.5);
  inst.behavior_policy.probs = Table(n_prompts, 2, 0.5);
  inst.true_reward.values = Table(n_prompts, 2);
  const double rows[][2] = {{1.3, 0.5}, {0.4, 1.0}, {0.9, 1.1}};
  const int lens[][2] = {{3, 7}, {5, 2}, {4, 4}};
  for (std::size_t x = 0; x < n_prompts; ++x) {
    inst.true_reward(x, 0) = rows[x % 3][0];
    inst.true_reward(x, 1) = rows[x % 3][1];
    inst.response_len.push_back(lens[x % 3][0]);
    inst.response_len.push_back(lens[x % 3][1]);
  }
  validate_instance(inst);

  CorruptionSpec corruption{0.2, 1.0, NoiseSign::kRandomSign};
  const auto data = generate_offline_dataset(inst, 400 * n_prompts, corruption, seed);
  Hyperparams hp{1.0, 0.05, 0.01, 0.6};
  const Policy base = base_policy_offline_exact(inst, corruption);

  OptimizerSettings opt;
  opt.tol = 1e-10;
  const auto trained =
      optimize_offline(data, inst, hp, opt, PolicyParams::zeros(inst), PessimismSource::kExactBase, &base);
  const auto oracle = brute_force_rlhfcov_offline(data, inst, hp, grid_resolution, &base);
  const RewardTable r_theta = trained.report.final_params.reward(inst);

  EquivalenceOutcome out;
  out.grid_spacing = oracle.grid_spacing;
  for (std::size_t x = 0; x < n_prompts; ++x) {
    double tv = 0.0;
    for (std::size_t a = 0; a < 2; ++a) tv += 0.5 * std::abs(oracle.policy(x, a) - trained.policy(x, a));
    out.tv = std::max(out.tv, tv);
    const double d_oracle = oracle.reward(x, 0) - oracle.reward(x, 1);
    const double d_trained = r_theta(x, 0) - r_theta(x, 1);
    out.reward_diff_err = std::max(out.reward_diff_err, std::abs(d_oracle - d_trained));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double xi_pi = noise_from_policy(trained.policy, data.samples[i], inst, hp);
    out.noise_err = std::max(out.noise_err, std::abs(xi_pi - oracle.noise[i]));
  }

  CheckResult& c = out.check;
  c.name = "equivalence_" + std::to_string(n_prompts) + "x2";
  c.trials = 1;
  c.tolerance = tv_tol;
  c.worst = out.tv;
  const bool ok = trained.report.converged && out.tv <= tv_tol &&
                  out.reward_diff_err <= out.grid_spacing && out.noise_err <= out.grid_spacing;
  c.violations = ok ? 0 : 1;
  c.passed = ok;
  c.witness = kv({{"tv", out.tv},
                  {"reward_diff_err", out.reward_diff_err},
                  {"noise_err", out.noise_err},
                  {"grid_spacing", out.grid_spacing},
                  {"converged", trained.report.converged ? 1.0 : 0.0}});
  return out;
}

CheckResult check_theorem_eta(double tol) {
  Tally tally("theorem_eta", tol);
  const std::size_t ns[] = {1, 10, 64, 1024, 8192};
  const double bounds[] = {0.5, 1.0, 5.0};
  const double xis[] = {0.0, 3.5, 100.0};
  for (std::size_t n : ns) {
    for (double R : bounds) {
      for (double xi : xis) {
        const double a = theorem_eta_offline(n, R, xi, 0.1, 2, 2);
        const double b = oracles::theorem_eta_offline_reference(n, R, xi, 0.1, 2, 2);
        tally.record(std::abs(a - b) / b, [&] { return kv({{"n", static_cast<double>(n)}, {"R", R}, {"xi_l1", xi}}); });
        const double c = theorem_eta_online(n, R, xi, 0.1, 1.7, 2, 2);
        const double d = oracles::theorem_eta_online_reference(n, R, xi, 0.1, 1.7, 2, 2);
        tally.record(std::abs(c - d) / d, [&] { return kv({{"T", static_cast<double>(n)}, {"R", R}, {"xi_l1", xi}}); });
      }
    }
  }
  return tally.finish();
}

CheckResult lemma_check_result(const LemmaCheck& c) {
  CheckResult r;
  r.name = c.name;
  r.trials = c.trials;
  r.violations = c.violations;
  r.worst = c.worst_excess;
  r.passed = c.violations == 0;
  r.witness = c.witness;
  return r;
}

std::vector<CheckResult> run_verification(std::uint64_t seed, std::size_t trials) {
  if (trials < 1) throw ValidationError("verify: trials must be >= 1");
  std::vector<CheckResult> out;
  for (const auto& c : verify_lemma_suite(seed, trials).checks) out.push_back(lemma_check_result(c));
  out.push_back(check_noise_closed_form(seed, std::min<std::size_t>(trials, 10000)));
  out.push_back(check_closed_form_maximizer(seed, std::clamp<std::size_t>(trials / 500, 1, 200),
                                            std::min<std::size_t>(trials, 1000)));
  out.push_back(check_vanilla_reduction(seed, std::min<std::size_t>(trials, 100)));
  out.push_back(check_gradient(seed, std::min<std::size_t>(trials, 100)));
  out.push_back(check_theorem_eta());
  out.push_back(check_equivalence(seed, 1).check);
  if (trials >= 1000) out.push_back(check_equivalence(seed, 2).check);
  return out;
}

}  // namespace dpocov
