#pragma once

// Reference solvers that share no code path with the closed forms they check.
// Slow but simple; meant for verification only.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dpocov/core_types.hpp"

namespace dpocov::oracles {

// argmin_v lambda|v| - log sigma(r_diff + label*v) by golden-section search.
// Function values are compared through an accurate difference formula, so the
// minimiser is resolved well below sqrt(machine epsilon).
double golden_section_noise(double r_diff, int label, double lambda);

struct SimplexMaxResult {
  Policy policy;
  int iterations = 0;
  bool converged = false;
};

// Maximises pi -> V_{beta,omega}(pi, r) over the product of simplices by
// entropic mirror ascent (exponentiated gradient) from the uniform policy.
SimplexMaxResult mirror_ascent_value_max(const Instance& inst, const RewardTable& r, double beta,
                                         double omega, int max_iter = 5000);

// Central differences with step h.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h);

// Law of the winner given the prompt by summing the joint over
// (a1, a2, noise outcome, label). Handles every NoiseSign rule.
Policy winner_law_enumeration(const Instance& inst, const CorruptionSpec& corruption);

// Coverage ratio LHS / E_r computed by explicit enumeration of response pairs.
double coverage_ratio_enumeration(const Instance& inst, const Policy& base, const RewardTable& r,
                                  double beta, double omega);

// eta formulas evaluated through the covering number itself, (R n)^{|X||A|}.
double theorem_eta_offline_reference(std::size_t n, double reward_bound, double xi_l1,
                                     double delta, std::size_t n_x, std::size_t n_a);
double theorem_eta_online_reference(std::size_t T, double reward_bound, double xi_l1,
                                    double delta, double g_on, std::size_t n_x, std::size_t n_a);

}  // namespace dpocov::oracles
