#include "dpocov/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "dpocov/numerics.hpp"

namespace dpocov::oracles {

namespace {

struct NoiseObjective {
  double d;
  int y;
  double lambda;

  // f(v1) - f(v2) without cancelling two nearly equal values.
  double difference(double v1, double v2) const {
    const double u1 = -(d + y * v1);
    const double u2 = -(d + y * v2);
    // u1 - u2 taken from the arguments directly; subtracting u2 from u1 would
    // lose the digits that matter when v1 and v2 are close.
    const double du = y * (v2 - v1);
    double sp;
    if (std::abs(du) <= 1.0) {
      sp = std::log1p(sigmoid(u2) * std::expm1(du));
    } else {
      sp = softplus(u1) - softplus(u2);
    }
    return lambda * (std::abs(v1) - std::abs(v2)) + sp;
  }
};

}  // namespace

double golden_section_noise(double r_diff, int label, double lambda) {
  const NoiseObjective f{r_diff, label, lambda};
  // f is convex; grow the bracket until both ends are past the minimiser.
  double hi = 1.0;
  while (hi < 1e6 && !(f.difference(hi, 0.5 * hi) > 0.0)) hi *= 2.0;
  double lo = -1.0;
  while (lo > -1e6 && !(f.difference(lo, 0.5 * lo) > 0.0)) lo *= 2.0;

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double e = a + inv_phi * (b - a);
  for (int k = 0; k < 400 && (b - a) > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++k) {
    if (f.difference(c, e) < 0.0) {
      b = e;
      e = c;
      c = b - inv_phi * (b - a);
    } else {
      a = c;
      c = e;
      e = a + inv_phi * (b - a);
    }
  }
  const double mid = 0.5 * (a + b);
  // The minimiser may sit exactly on the kink at zero.
  return f.difference(0.0, mid) <= 0.0 && std::abs(mid) < 1e-9 ? 0.0 : mid;
}

SimplexMaxResult mirror_ascent_value_max(const Instance& inst, const RewardTable& r, double beta,
                                         double omega, int max_iter) {
  const std::size_t nx = inst.n_prompts, na = inst.n_responses;
  Table log_pi(nx, na, -std::log(static_cast<double>(na)));
  const double step = 0.3 / beta;
  SimplexMaxResult out;
  std::vector<double> next(na);
  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    double change = 0.0;
    for (std::size_t x = 0; x < nx; ++x) {
      auto row = log_pi.row(x);
      for (std::size_t a = 0; a < na; ++a) {
        // Gradient of sum_a pi(a)(r - omega|a|) - beta KL(pi || pi_ref) in pi(a).
        const double grad = r(x, a) - omega * inst.length(x, a) -
                            beta * (row[a] - std::log(inst.ref_policy(x, a)) + 1.0);
        next[a] = row[a] + step * grad;
      }
      const double lse = log_sum_exp(next);
      for (std::size_t a = 0; a < na; ++a) {
        const double v = next[a] - lse;
        change = std::max(change, std::abs(std::exp(v) - std::exp(row[a])));
        row[a] = v;
      }
    }
    if (change <= 4e-16) {
      out.converged = true;
      break;
    }
  }
  out.policy.probs = Table(nx, na);
  for (std::size_t k = 0; k < log_pi.size(); ++k) {
    out.policy.probs.data()[k] = std::exp(log_pi.data()[k]);
  }
  return out;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h) {
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    point[i] = x[i] + h;
    const double up = f(point);
    point[i] = x[i] - h;
    const double down = f(point);
    point[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Policy winner_law_enumeration(const Instance& inst, const CorruptionSpec& corruption) {
  std::vector<std::pair<double, double>> outcomes;  // (probability, noise)
  const double f = corruption.corrupt_fraction, c = corruption.noise_magnitude;
  outcomes.emplace_back(1.0 - f, 0.0);
  switch (corruption.sign_rule) {
    case NoiseSign::kFixedPositive: outcomes.emplace_back(f, c); break;
    case NoiseSign::kFixedNegative: outcomes.emplace_back(f, -c); break;
    case NoiseSign::kRandomSign:
      outcomes.emplace_back(0.5 * f, c);
      outcomes.emplace_back(0.5 * f, -c);
      break;
  }
  Policy law{Table(inst.n_prompts, inst.n_responses, 0.0)};
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    for (std::size_t a1 = 0; a1 < inst.n_responses; ++a1) {
      for (std::size_t a2 = 0; a2 < inst.n_responses; ++a2) {
        const double pair = inst.behavior_policy(x, a1) * inst.behavior_policy(x, a2);
        for (const auto& [p, xi] : outcomes) {
          const double first_wins =
              1.0 / (1.0 + std::exp(-(inst.true_reward(x, a1) - inst.true_reward(x, a2) + xi)));
          law.probs(x, a1) += pair * p * first_wins;
          law.probs(x, a2) += pair * p * (1.0 - first_wins);
        }
      }
    }
  }
  return law;
}

double coverage_ratio_enumeration(const Instance& inst, const Policy& base, const RewardTable& r,
                                  double beta, double omega) {
  double lhs = 0.0, mse = 0.0;
  std::vector<double> best(inst.n_responses);
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    double z = 0.0;
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      best[a] = inst.ref_policy(x, a) *
                std::exp((inst.true_reward(x, a) - omega * inst.length(x, a)) / beta);
      z += best[a];
    }
    for (double& v : best) v /= z;
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      for (std::size_t b = 0; b < inst.n_responses; ++b) {
        const double ga = inst.true_reward(x, a) - r(x, a);
        const double gb = inst.true_reward(x, b) - r(x, b);
        lhs += inst.prompt_dist[x] * best[a] * base(x, b) * (ga - gb);
        mse += inst.prompt_dist[x] * inst.behavior_policy(x, a) * inst.behavior_policy(x, b) *
               (ga - gb) * (ga - gb);
      }
    }
  }
  return lhs / std::sqrt(mse);
}

double theorem_eta_offline_reference(std::size_t n, double reward_bound, double xi_l1,
                                     double delta, std::size_t n_x, std::size_t n_a) {
  const double cover = std::pow(std::max(1.0, reward_bound * static_cast<double>(n)),
                                static_cast<double>(n_x * n_a));
  const double numer = 2.0 * std::sqrt(xi_l1 + 5.0 * std::log(cover / delta));
  return numer / std::sqrt(static_cast<double>(n)) / (3.0 + std::exp(reward_bound));
}

double theorem_eta_online_reference(std::size_t T, double reward_bound, double xi_l1,
                                    double delta, double g_on, std::size_t n_x, std::size_t n_a) {
  const double cover = std::pow(std::max(1.0, reward_bound * static_cast<double>(T)),
                                static_cast<double>(n_x * n_a));
  const double numer = std::sqrt(std::log(4.0 * static_cast<double>(T) * cover / delta) + xi_l1);
  return numer / (3.0 + std::exp(reward_bound)) / std::sqrt(static_cast<double>(T) * g_on);
}

}  // namespace dpocov::oracles
