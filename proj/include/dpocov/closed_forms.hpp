#pragma once

#include <vector>

#include "dpocov/core_types.hpp"

namespace dpocov {

// Z_r(x) = sum_a' pi_ref(a'|x) exp[(r(x,a') - omega|a'|)/beta], per prompt.
struct PartitionTable {
  std::vector<double> z;
};

PartitionTable partition_table(const RewardTable& r, const Instance& inst, double beta,
                               double omega);

// Maximiser of V_{beta,omega}(., r):
//   pi_r(a|x) = pi_ref(a|x) exp[(r(x,a) - omega|a|)/beta] / Z_r(x).
// Evaluated in log space, so rows stay strictly positive for moderate ranges.
Policy policy_from_reward(const RewardTable& r, const Instance& inst, double beta, double omega);

// log pi_r(a|x) without exponentiating (row-wise log-softmax).
Table log_policy_from_reward(const RewardTable& r, const Instance& inst, double beta,
                             double omega);

// r^pi(x,a) = omega|a| + beta log[pi(a|x) / pi_ref(a|x)]. Only per-prompt
// differences are identified; the table is not clipped to [0, R].
RewardTable reward_from_policy(const Policy& pi, const Instance& inst, double beta, double omega);

// Minimiser of f(v) = lambda|v| - log sigma(r_diff_wl + label*v):
//   label * 1{lambda<1} * [log(1/lambda - 1) - r_diff_wl]_+.
double noise_closed_form(double r_diff_wl, int label, double lambda);

// Hinge threshold log(1/lambda - 1); -inf when lambda >= 1.
double noise_threshold(double lambda);

// xi_i^pi: noise_closed_form evaluated at r^pi(x_i,a^w) - r^pi(x_i,a^l).
double noise_from_policy(const Policy& pi, const PreferenceSample& sample, const Instance& inst,
                         const Hyperparams& hp);

// r^pi(x,a^w) - r^pi(x,a^l) written through policy log-ratios.
double policy_reward_margin(const Policy& pi, const PreferenceSample& sample,
                            const Instance& inst, double beta, double omega);

struct SigmoidBand {
  double lower;   // |z1 - z2| / (3 + e^R)
  double actual;  // |sigma(z1) - sigma(z2)|
  double upper;   // |z1 - z2| / 4
};

// Two-sided Lipschitz band of the sigmoid on [-R, R].
SigmoidBand sigmoid_band(double z1, double z2, double reward_bound);

}  // namespace dpocov
