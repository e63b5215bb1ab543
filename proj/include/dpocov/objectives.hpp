#pragma once

#include <span>
#include <vector>

#include "dpocov/core_types.hpp"
#include "dpocov/datagen.hpp"

namespace dpocov {

struct LossBreakdown {
  double total = 0.0;
  double nll_term = 0.0;        // mean of -log sigma(...)
  double noise_penalty = 0.0;   // (lambda/N) ||xi||_1
  double pessimism_term = 0.0;  // -beta*eta*mean log pi(a^w|x) offline, +beta*eta*mean log pi(a^(-1)|x) online
  std::vector<double> per_sample;
};

// L_{N,lambda}(r, xi) = -(1/N) sum log sigma[r(x_i,a^w_i) - r(x_i,a^l_i) + y_i xi_i]
//                       + (lambda/N) ||xi||_1.
double penalized_nll(const RewardTable& r, std::span<const double> xi,
                     const PreferenceDataset& data, double lambda);

// Length-regularised relative value of `pi` against `base`:
//   E_{x,a~pi,a'~base}[r(x,a) - omega|a| - r(x,a') + omega|a'|] - beta E_x KL[pi || pi_ref].
// `prompt_weights` replaces rho when given (e.g. empirical prompt frequencies).
double relative_value(const Policy& pi, const RewardTable& r, const Policy& base,
                      const Instance& inst, double beta, double omega);
double relative_value(const Policy& pi, const RewardTable& r, const Policy& base,
                      const Instance& inst, double beta, double omega,
                      std::span<const double> prompt_weights);

// KL[pi(.|x) || pi_ref(.|x)] for one prompt.
double kl_to_ref(const Policy& pi, const Instance& inst, std::size_t x);

// E_{x~rho} KL[pi || pi_ref].
double expected_kl_to_ref(const Policy& pi, const Instance& inst);

// E_{x~rho, a~pi}|a|.
double expected_length(const Policy& pi, const Instance& inst);

// J_{beta,omega}(pi) = E_{x~rho,a~pi}[r*(x,a) - omega|a|] - beta E_x KL[pi || pi_ref].
double j_value(const Policy& pi, const Instance& inst, double beta, double omega);

// Vanilla DPO objective:
//   -(1/N) sum log sigma[beta log pi(a^w)/pi_ref(a^w) - beta log pi(a^l)/pi_ref(a^l)].
double vanilla_dpo_loss(const Policy& pi, const PreferenceDataset& data, const Instance& inst,
                        double beta, std::size_t prefix = static_cast<std::size_t>(-1));

// Practical offline objective psi_N(pi) (empirical winners as the pessimism
// baseline). The constant C_off is dropped.
LossBreakdown offline_loss(const Policy& pi, const PreferenceDataset& data, const Instance& inst,
                           const Hyperparams& hp, bool keep_per_sample = false);

// Offline objective with the exact pessimism expectation
// -beta*eta E_{x~rho,a~base}[log pi(a|x)] in place of the empirical average.
LossBreakdown offline_loss_exact_base(const Policy& pi, const PreferenceDataset& data,
                                      const Instance& inst, const Hyperparams& hp,
                                      const Policy& base, bool keep_per_sample = false);

// Online objective phi_t(pi) on the first `prefix` samples, with the optimistic
// term +beta*eta log pi(a^(-1)_i|x_i). The constant C_on is dropped.
LossBreakdown online_loss(const Policy& pi, const PreferenceDataset& data, std::size_t prefix,
                          const Instance& inst, const Hyperparams& hp,
                          bool keep_per_sample = false);

// ---------------------------------------------------------------------------
// Parameterisation of the reward-induced policy class: r_theta = R sigma(theta),
// pi_theta = pi_{r_theta}.

RewardTable reward_from_params(std::span<const double> theta, const Instance& inst);
Policy policy_from_params(std::span<const double> theta, const Instance& inst, double beta,
                          double omega);

enum class PessimismSource {
  kEmpirical,  // offline: winners a^w_i; online: reference draws a^(-1)_i
  kExactBase,  // -beta*eta E_{x~rho,a~base} log pi (offline only)
};

// The training objective compiled to aggregated (prompt, winner, loser)
// counts, so one evaluation costs O(|X||A|^2) regardless of N. The per-sample
// loss depends on the sample only through that triple: with xi = xi^pi the
// sum margin + y*xi equals max(margin, log(1/lambda - 1)).
class CompiledObjective {
 public:
  CompiledObjective(const Instance& inst, const Hyperparams& hp, Setting setting,
                    PessimismSource source = PessimismSource::kEmpirical,
                    const Policy* exact_base = nullptr);

  CompiledObjective(const PreferenceDataset& data, std::size_t prefix, const Instance& inst,
                    const Hyperparams& hp, Setting setting,
                    PessimismSource source = PessimismSource::kEmpirical,
                    const Policy* exact_base = nullptr);

  void add_sample(const PreferenceSample& s);

  std::size_t dimension() const { return inst_->n_prompts * inst_->n_responses; }
  std::size_t sample_count() const { return n_samples_; }

  double value(std::span<const double> theta) const;
  double value_and_gradient(std::span<const double> theta, std::span<double> grad) const;
  LossBreakdown breakdown(std::span<const double> theta) const;

 private:
  double evaluate(std::span<const double> theta, std::span<double> grad,
                  LossBreakdown* parts) const;

  const Instance* inst_;
  Hyperparams hp_;
  Setting setting_;
  PessimismSource source_;
  std::vector<double> pair_counts_;    // (x, winner, loser) dense
  std::vector<double> anchor_counts_;  // (x, a) dense
  std::vector<double> base_weights_;   // rho(x) base(a|x), exact-base mode
  std::size_t n_samples_ = 0;
};

// Analytic gradient of the offline (psi_N) or online (phi_t, full dataset)
// objective with respect to the reward parameters theta.
std::vector<double> loss_gradient(std::span<const double> theta, const PreferenceDataset& data,
                                  const Instance& inst, const Hyperparams& hp, Setting setting);

}  // namespace dpocov
