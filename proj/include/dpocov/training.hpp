#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dpocov/core_types.hpp"
#include "dpocov/datagen.hpp"
#include "dpocov/objectives.hpp"

namespace dpocov {

// Point of the reward-induced policy class: r_theta = R sigma(theta) and
// pi_theta = pi_{r_theta}. Any theta gives r_theta in (0, R) and a strictly
// positive policy (up to floating-point underflow at extreme theta).
struct PolicyParams {
  std::vector<double> theta;

  static PolicyParams zeros(const Instance& inst) {
    return PolicyParams{std::vector<double>(inst.n_prompts * inst.n_responses, 0.0)};
  }
  RewardTable reward(const Instance& inst) const { return reward_from_params(theta, inst); }
  Policy policy(const Instance& inst, double beta, double omega) const {
    return policy_from_params(theta, inst, beta, omega);
  }
};

struct TrainReport {
  PolicyParams final_params;
  std::vector<double> loss_trace;       // loss after each accepted iterate, starting at init
  std::vector<double> grad_norm_trace;  // matching gradient norms
  int iterations = 0;
  bool converged = false;
  double wall_time_s = 0.0;
};

struct TrainResult {
  Policy policy;
  TrainReport report;
};

// Smooth objective: returns f(theta) and writes the gradient into `grad`.
using ObjectiveFn = std::function<double(std::span<const double>, std::span<double>)>;

// Monotone descent with Armijo backtracking. L-BFGS directions by default,
// steepest descent when settings.method is kGradientDescent. Converged means
// the gradient 2-norm reached settings.tol.
TrainReport minimize(const ObjectiveFn& f, PolicyParams init, const OptimizerSettings& settings);

// Offline DPO-COV: minimise psi_N over pi_theta. With PessimismSource::kExactBase
// the empirical pessimism average is replaced by the exact expectation under
// `exact_base`.
TrainResult optimize_offline(const PreferenceDataset& data, const Instance& inst,
                             const Hyperparams& hp, const OptimizerSettings& settings,
                             const PolicyParams& init,
                             PessimismSource source = PessimismSource::kEmpirical,
                             const Policy* exact_base = nullptr);

struct OnlineOptions {
  bool warm_start = true;   // refit from pi_t's parameters; false refits from theta = 0
  // Warm starts clip theta to [-clip, clip]. A previous fit may have pushed
  // coordinates far into the flat tails of sigma, where the gradient
  // underflows and the coordinate could never move again.
  double warm_start_clip = 6.0;
  std::size_t batch = 1;    // samples drawn per iteration
};

struct OnlineStep {
  std::size_t t = 0;
  std::size_t prompt = 0;
  std::size_t first = 0;   // a^(1) ~ pi_t
  std::size_t second = 0;  // a^(-1) ~ pi_ref
  int label = 1;
  double noise = 0.0;
  double j_value = 0.0;    // J(pi_t), the policy that generated this sample
  double loss = 0.0;       // phi_t(pi_{t+1})
  double grad_norm = 0.0;
  int inner_iterations = 0;
  bool converged = false;
};

struct OnlineResult {
  Policy output;              // pi_{T_hat}
  PolicyParams output_params;
  std::size_t t_hat = 0;      // uniform on {2, ..., T+1}
  std::vector<OnlineStep> trace;
  PreferenceDataset data;     // online samples in collection order
  double noise_l1 = 0.0;      // realised ||xi*||_1 over the T iterations
  bool all_converged = true;
};

// Pre-draws the T*batch noise values the online loop will use with this seed.
std::vector<double> online_noise_sequence(const CorruptionSpec& corruption, std::size_t count,
                                          std::uint64_t seed);

// Online DPO-COV loop. pi_1 is the policy at theta = 0.
OnlineResult run_online(const Instance& inst, const Hyperparams& hp, std::size_t T,
                        const CorruptionSpec& corruption, const OptimizerSettings& settings,
                        std::uint64_t seed, const OnlineOptions& options = {});

}  // namespace dpocov
