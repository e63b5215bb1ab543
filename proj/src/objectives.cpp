#include "dpocov/objectives.hpp"

#include <cmath>
#include <limits>

#include "dpocov/closed_forms.hpp"
#include "dpocov/numerics.hpp"

namespace dpocov {

namespace {

std::size_t clamp_prefix(const PreferenceDataset& data, std::size_t prefix) {
  return prefix < data.size() ? prefix : data.size();
}

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw ValidationError(std::string(what) + ": empty dataset");
}

// Shared per-sample evaluation of psi_N / phi_t. `anchor_of` picks the response
// whose log-probability enters the pessimism/optimism term and `anchor_sign`
// its sign (-1 offline, +1 online); a zero sign drops the term (exact base).
template <typename AnchorFn>
LossBreakdown sample_loss(const Policy& pi, const PreferenceDataset& data, std::size_t n,
                          const Instance& inst, const Hyperparams& hp, AnchorFn anchor_of,
                          double anchor_sign, bool keep_per_sample) {
  validate_hyperparams(hp);
  std::vector<double> nll(n), noise(n), anchor(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.samples[i];
    const double margin = policy_reward_margin(pi, s, inst, hp.beta, hp.omega);
    const double xi = hp.lambda < 1.0 ? noise_closed_form(margin, s.label, hp.lambda) : 0.0;
    nll[i] = -log_sigmoid(margin + s.label * xi);
    noise[i] = hp.lambda * std::abs(xi);
    anchor[i] = anchor_sign == 0.0
                    ? 0.0
                    : anchor_sign * hp.beta * hp.eta * std::log(pi(s.prompt, anchor_of(s)));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  LossBreakdown out;
  out.nll_term = pairwise_sum(nll) * inv_n;
  out.noise_penalty = pairwise_sum(noise) * inv_n;
  out.pessimism_term = pairwise_sum(anchor) * inv_n;
  out.total = out.nll_term + out.noise_penalty + out.pessimism_term;
  if (keep_per_sample) {
    out.per_sample.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.per_sample[i] = nll[i] + noise[i] + anchor[i];
  }
  return out;
}

}  // namespace

double penalized_nll(const RewardTable& r, std::span<const double> xi,
                     const PreferenceDataset& data, double lambda) {
  require_nonempty(data.size(), "penalized_nll");
  if (xi.size() != data.size()) {
    throw ValidationError("penalized_nll: noise vector length differs from dataset length");
  }
  if (!(lambda > 0.0)) throw ValidationError("penalized_nll: lambda must be > 0");
  std::vector<double> terms(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.samples[i];
    const double d = r(s.prompt, s.winner) - r(s.prompt, s.loser);
    terms[i] = -log_sigmoid(d + s.label * xi[i]) + lambda * std::abs(xi[i]);
  }
  return pairwise_sum(terms) / static_cast<double>(data.size());
}

double kl_to_ref(const Policy& pi, const Instance& inst, std::size_t x) {
  double kl = 0.0;
  for (std::size_t a = 0; a < inst.n_responses; ++a) {
    const double p = pi(x, a);
    if (p > 0.0) kl += p * std::log(p / inst.ref_policy(x, a));
  }
  return kl;
}

double expected_kl_to_ref(const Policy& pi, const Instance& inst) {
  double out = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) out += inst.prompt_dist[x] * kl_to_ref(pi, inst, x);
  return out;
}

double expected_length(const Policy& pi, const Instance& inst) {
  double out = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    double row = 0.0;
    for (std::size_t a = 0; a < inst.n_responses; ++a) row += pi(x, a) * inst.length(x, a);
    out += inst.prompt_dist[x] * row;
  }
  return out;
}

double relative_value(const Policy& pi, const RewardTable& r, const Policy& base,
                      const Instance& inst, double beta, double omega) {
  return relative_value(pi, r, base, inst, beta, omega, inst.prompt_dist);
}

double relative_value(const Policy& pi, const RewardTable& r, const Policy& base,
                      const Instance& inst, double beta, double omega,
                      std::span<const double> prompt_weights) {
  if (prompt_weights.size() != inst.n_prompts) {
    throw ValidationError("relative_value: prompt weight vector has wrong length");
  }
  double out = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    if (prompt_weights[x] == 0.0) continue;
    double gain = 0.0;
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      const double shaped = r(x, a) - omega * inst.length(x, a);
      gain += (pi(x, a) - base(x, a)) * shaped;
    }
    out += prompt_weights[x] * (gain - beta * kl_to_ref(pi, inst, x));
  }
  return out;
}

double j_value(const Policy& pi, const Instance& inst, double beta, double omega) {
  double out = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    double value = 0.0;
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      value += pi(x, a) * (inst.true_reward(x, a) - omega * inst.length(x, a));
    }
    out += inst.prompt_dist[x] * (value - beta * kl_to_ref(pi, inst, x));
  }
  return out;
}

double vanilla_dpo_loss(const Policy& pi, const PreferenceDataset& data, const Instance& inst,
                        double beta, std::size_t prefix) {
  const std::size_t n = clamp_prefix(data, prefix);
  require_nonempty(n, "vanilla_dpo_loss");
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.samples[i];
    const std::size_t x = s.prompt;
    const double w = beta * std::log(pi(x, s.winner) / inst.ref_policy(x, s.winner));
    const double l = beta * std::log(pi(x, s.loser) / inst.ref_policy(x, s.loser));
    terms[i] = -log_sigmoid(w - l);
  }
  return pairwise_sum(terms) / static_cast<double>(n);
}

LossBreakdown offline_loss(const Policy& pi, const PreferenceDataset& data, const Instance& inst,
                           const Hyperparams& hp, bool keep_per_sample) {
  require_nonempty(data.size(), "offline_loss");
  return sample_loss(
      pi, data, data.size(), inst, hp, [](const PreferenceSample& s) { return s.winner; }, -1.0,
      keep_per_sample);
}

LossBreakdown offline_loss_exact_base(const Policy& pi, const PreferenceDataset& data,
                                      const Instance& inst, const Hyperparams& hp,
                                      const Policy& base, bool keep_per_sample) {
  require_nonempty(data.size(), "offline_loss_exact_base");
  auto out = sample_loss(
      pi, data, data.size(), inst, hp, [](const PreferenceSample& s) { return s.winner; }, 0.0,
      keep_per_sample);
  double expected_log = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      expected_log += inst.prompt_dist[x] * base(x, a) * std::log(pi(x, a));
    }
  }
  out.pessimism_term = -hp.beta * hp.eta * expected_log;
  out.total = out.nll_term + out.noise_penalty + out.pessimism_term;
  return out;
}

LossBreakdown online_loss(const Policy& pi, const PreferenceDataset& data, std::size_t prefix,
                          const Instance& inst, const Hyperparams& hp, bool keep_per_sample) {
  const std::size_t n = clamp_prefix(data, prefix);
  require_nonempty(n, "online_loss");
  // In the online loop a^(-1) is drawn by the learner from pi_ref, so it is
  // observed data rather than hidden ground truth.
  return sample_loss(
      pi, data, n, inst, hp, [](const PreferenceSample& s) { return s.hidden_second; }, 1.0,
      keep_per_sample);
}

RewardTable reward_from_params(std::span<const double> theta, const Instance& inst) {
  if (theta.size() != inst.n_prompts * inst.n_responses) {
    throw ValidationError("parameter vector has wrong length");
  }
  RewardTable r{Table(inst.n_prompts, inst.n_responses)};
  for (std::size_t k = 0; k < theta.size(); ++k) {
    r.values.data()[k] = inst.reward_bound * sigmoid(theta[k]);
  }
  return r;
}

Policy policy_from_params(std::span<const double> theta, const Instance& inst, double beta,
                          double omega) {
  return policy_from_reward(reward_from_params(theta, inst), inst, beta, omega);
}

// ---------------------------------------------------------------------------

CompiledObjective::CompiledObjective(const Instance& inst, const Hyperparams& hp, Setting setting,
                                     PessimismSource source, const Policy* exact_base)
    : inst_(&inst), hp_(hp), setting_(setting), source_(source) {
  validate_hyperparams(hp);
  const std::size_t nx = inst.n_prompts;
  const std::size_t na = inst.n_responses;
  pair_counts_.assign(nx * na * na, 0.0);
  anchor_counts_.assign(nx * na, 0.0);
  if (source == PessimismSource::kExactBase) {
    if (exact_base == nullptr) throw ValidationError("exact pessimism base requires a base policy");
    if (setting != Setting::kOffline) {
      throw ValidationError("exact pessimism base is only defined for the offline objective");
    }
    base_weights_.resize(nx * na);
    for (std::size_t x = 0; x < nx; ++x) {
      for (std::size_t a = 0; a < na; ++a) {
        base_weights_[x * na + a] = inst.prompt_dist[x] * (*exact_base)(x, a);
      }
    }
  }
}

CompiledObjective::CompiledObjective(const PreferenceDataset& data, std::size_t prefix,
                                     const Instance& inst, const Hyperparams& hp, Setting setting,
                                     PessimismSource source, const Policy* exact_base)
    : CompiledObjective(inst, hp, setting, source, exact_base) {
  const std::size_t n = clamp_prefix(data, prefix);
  for (std::size_t i = 0; i < n; ++i) add_sample(data.samples[i]);
}

void CompiledObjective::add_sample(const PreferenceSample& s) {
  const std::size_t na = inst_->n_responses;
  pair_counts_[(s.prompt * na + s.winner) * na + s.loser] += 1.0;
  const std::size_t anchor = setting_ == Setting::kOffline ? s.winner : s.hidden_second;
  anchor_counts_[s.prompt * na + anchor] += 1.0;
  ++n_samples_;
}

double CompiledObjective::value(std::span<const double> theta) const {
  return evaluate(theta, {}, nullptr);
}

double CompiledObjective::value_and_gradient(std::span<const double> theta,
                                             std::span<double> grad) const {
  return evaluate(theta, grad, nullptr);
}

LossBreakdown CompiledObjective::breakdown(std::span<const double> theta) const {
  LossBreakdown parts;
  evaluate(theta, {}, &parts);
  return parts;
}

double CompiledObjective::evaluate(std::span<const double> theta, std::span<double> grad,
                                   LossBreakdown* parts) const {
  if (n_samples_ == 0) throw ValidationError("objective has no samples");
  const Instance& inst = *inst_;
  const std::size_t nx = inst.n_prompts;
  const std::size_t na = inst.n_responses;
  if (theta.size() != nx * na) throw ValidationError("parameter vector has wrong length");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != theta.size()) {
    throw ValidationError("gradient buffer has wrong length");
  }

  const double bound = inst.reward_bound;
  const double inv_n = 1.0 / static_cast<double>(n_samples_);
  const double lambda = hp_.lambda;
  const bool noisy = lambda < 1.0;
  const double tau = noisy ? noise_threshold(lambda) : 0.0;
  const double log_sig_tau = noisy ? log_sigmoid(tau) : 0.0;

  std::vector<double> reward(nx * na), dreward(nx * na, 0.0);
  for (std::size_t k = 0; k < reward.size(); ++k) reward[k] = bound * sigmoid(theta[k]);

  CompensatedSum nll, noise, anchor;
  std::vector<double> logits(na), logp(na), prob(na);
  for (std::size_t x = 0; x < nx; ++x) {
    const double* r = reward.data() + x * na;
    double* dr = dreward.data() + x * na;

    for (std::size_t w = 0; w < na; ++w) {
      for (std::size_t l = 0; l < na; ++l) {
        const double c = pair_counts_[(x * na + w) * na + l];
        if (c == 0.0) continue;
        const double margin = r[w] - r[l];
        double slope;  // d(per-sample loss)/d(margin)
        if (noisy && margin < tau) {
          noise.add(c * lambda * (tau - margin));
          nll.add(-c * log_sig_tau);
          slope = -lambda;
        } else {
          nll.add(-c * log_sigmoid(margin));
          slope = -sigmoid(-margin);
        }
        dr[w] += c * slope * inv_n;
        dr[l] -= c * slope * inv_n;
      }
    }

    // Pessimism (offline, sign -1) or optimism (online, sign +1) anchor:
    //   sign * beta * eta * sum_a weight(x,a) log pi_theta(a|x).
    if (hp_.eta == 0.0) continue;
    const double sign = setting_ == Setting::kOffline ? -1.0 : 1.0;
    const double* weights = source_ == PessimismSource::kExactBase
                                ? base_weights_.data() + x * na
                                : anchor_counts_.data() + x * na;
    const double weight_scale = source_ == PessimismSource::kExactBase ? 1.0 : inv_n;
    double weight_total = 0.0;
    for (std::size_t a = 0; a < na; ++a) weight_total += weights[a] * weight_scale;
    if (weight_total == 0.0) continue;
    for (std::size_t a = 0; a < na; ++a) {
      logits[a] = std::log(inst.ref_policy(x, a)) + (r[a] - hp_.omega * inst.length(x, a)) / hp_.beta;
    }
    const double log_z = log_sum_exp(logits);
    for (std::size_t a = 0; a < na; ++a) {
      logp[a] = logits[a] - log_z;
      prob[a] = std::exp(logp[a]);
    }
    for (std::size_t a = 0; a < na; ++a) {
      const double wa = weights[a] * weight_scale;
      if (wa != 0.0) anchor.add(sign * hp_.beta * hp_.eta * wa * logp[a]);
      // d log pi(a|x) / d r(x,b) = (1{a=b} - pi(b|x)) / beta
      dr[a] += sign * hp_.eta * (wa - weight_total * prob[a]);
    }
  }

  const double nll_mean = nll.value() * inv_n;
  const double noise_mean = noise.value() * inv_n;
  const double anchor_term = anchor.value();
  if (parts != nullptr) {
    parts->nll_term = nll_mean;
    parts->noise_penalty = noise_mean;
    parts->pessimism_term = anchor_term;
    parts->total = nll_mean + noise_mean + anchor_term;
  }
  if (want_grad) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
      grad[k] = dreward[k] * bound * sigmoid(theta[k]) * sigmoid(-theta[k]);
    }
  }
  return nll_mean + noise_mean + anchor_term;
}

std::vector<double> loss_gradient(std::span<const double> theta, const PreferenceDataset& data,
                                  const Instance& inst, const Hyperparams& hp, Setting setting) {
  CompiledObjective objective(data, data.size(), inst, hp, setting);
  std::vector<double> grad(theta.size());
  objective.value_and_gradient(theta, grad);
  return grad;
}

}  // namespace dpocov
