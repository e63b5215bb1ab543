#include "dpocov/closed_forms.hpp"

#include <cmath>
#include <limits>

#include "dpocov/numerics.hpp"

namespace dpocov {

namespace {

void require_beta(double beta) {
  if (!(beta > 0.0)) throw ValidationError("beta must be > 0");
}

void require_shape(const Table& t, const Instance& inst, const char* what) {
  if (t.rows() != inst.n_prompts || t.cols() != inst.n_responses) {
    throw ValidationError(std::string(what) + " does not match the instance shape");
  }
}

// Unnormalised log weights log pi_ref + (r - omega|a|)/beta for one prompt.
std::vector<double> tilted_logits(const RewardTable& r, const Instance& inst, double beta,
                                  double omega, std::size_t x) {
  std::vector<double> logits(inst.n_responses);
  for (std::size_t a = 0; a < inst.n_responses; ++a) {
    logits[a] = std::log(inst.ref_policy(x, a)) + (r(x, a) - omega * inst.length(x, a)) / beta;
  }
  return logits;
}

}  // namespace

PartitionTable partition_table(const RewardTable& r, const Instance& inst, double beta,
                               double omega) {
  require_beta(beta);
  require_shape(r.values, inst, "reward table");
  PartitionTable out;
  out.z.resize(inst.n_prompts);
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    out.z[x] = std::exp(log_sum_exp(tilted_logits(r, inst, beta, omega, x)));
  }
  return out;
}

Table log_policy_from_reward(const RewardTable& r, const Instance& inst, double beta,
                             double omega) {
  require_beta(beta);
  require_shape(r.values, inst, "reward table");
  Table out(inst.n_prompts, inst.n_responses);
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    const auto logits = tilted_logits(r, inst, beta, omega, x);
    const double log_z = log_sum_exp(logits);
    for (std::size_t a = 0; a < inst.n_responses; ++a) out(x, a) = logits[a] - log_z;
  }
  return out;
}

Policy policy_from_reward(const RewardTable& r, const Instance& inst, double beta, double omega) {
  Table logp = log_policy_from_reward(r, inst, beta, omega);
  for (std::size_t x = 0; x < logp.rows(); ++x) {
    double total = 0.0;
    for (double& v : logp.row(x)) {
      v = std::exp(v);
      total += v;
    }
    for (double& v : logp.row(x)) v /= total;
  }
  return Policy{std::move(logp)};
}

RewardTable reward_from_policy(const Policy& pi, const Instance& inst, double beta, double omega) {
  require_beta(beta);
  require_shape(pi.probs, inst, "policy");
  RewardTable out{Table(inst.n_prompts, inst.n_responses)};
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      const double p = pi(x, a);
      if (!(p > 0.0)) {
        throw ValidationError("reward_from_policy: zero policy entry at (" + std::to_string(x) +
                              ", " + std::to_string(a) + ")");
      }
      out(x, a) = omega * inst.length(x, a) + beta * std::log(p / inst.ref_policy(x, a));
    }
  }
  return out;
}

double noise_threshold(double lambda) {
  if (!(lambda > 0.0)) throw ValidationError("lambda must be > 0");
  if (lambda >= 1.0) return -std::numeric_limits<double>::infinity();
  return std::log(1.0 / lambda - 1.0);
}

double noise_closed_form(double r_diff_wl, int label, double lambda) {
  const double tau = noise_threshold(lambda);
  if (lambda >= 1.0) return 0.0;
  const double hinge = tau - r_diff_wl;
  if (!(hinge > 0.0)) return 0.0;
  return label > 0 ? hinge : -hinge;
}

double policy_reward_margin(const Policy& pi, const PreferenceSample& s, const Instance& inst,
                            double beta, double omega) {
  const std::size_t x = s.prompt;
  const double log_ratio = std::log(pi(x, s.winner)) + std::log(inst.ref_policy(x, s.loser)) -
                           std::log(pi(x, s.loser)) - std::log(inst.ref_policy(x, s.winner));
  return omega * (inst.length(x, s.winner) - inst.length(x, s.loser)) + beta * log_ratio;
}

double noise_from_policy(const Policy& pi, const PreferenceSample& sample, const Instance& inst,
                         const Hyperparams& hp) {
  if (!(hp.lambda > 0.0)) throw ValidationError("lambda must be > 0");
  if (hp.lambda >= 1.0) return 0.0;
  return noise_closed_form(policy_reward_margin(pi, sample, inst, hp.beta, hp.omega), sample.label,
                           hp.lambda);
}

SigmoidBand sigmoid_band(double z1, double z2, double reward_bound) {
  if (!(reward_bound > 0.0)) throw ValidationError("sigmoid_band: reward bound must be > 0");
  if (std::abs(z1) > reward_bound || std::abs(z2) > reward_bound) {
    throw ValidationError("sigmoid_band: arguments must lie in [-R, R]");
  }
  const double gap = std::abs(z1 - z2);
  return {gap / (3.0 + std::exp(reward_bound)), std::abs(sigmoid(z1) - sigmoid(z2)), gap / 4.0};
}

}  // namespace dpocov
