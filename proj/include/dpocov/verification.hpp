#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpocov/analysis.hpp"
#include "json.hpp"

namespace dpocov {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double worst = 0.0;   // largest observed error (or violation margin)
  double tolerance = 0.0;
  std::string witness;  // inputs of the first failure, or a short note
};

nlohmann::json check_to_json(const CheckResult& c);

// pi_r against random policies and against mirror ascent, on random
// instances up to 8x6.
CheckResult check_closed_form_maximizer(std::uint64_t seed, std::size_t instances,
                                        std::size_t random_policies, double tol = 1e-8);

// noise_closed_form against golden-section search; a quarter of the triples
// have lambda >= 1.
CheckResult check_noise_closed_form(std::uint64_t seed, std::size_t triples, double tol = 1e-8);

// Offline objective at lambda = 1, eta = omega = 0 against the vanilla DPO
// loss, and the online analogue on growing prefixes.
CheckResult check_vanilla_reduction(std::uint64_t seed, std::size_t datasets, double tol = 1e-12);

// Analytic theta-gradient against central differences of the per-sample
// objective, offline and online, away from the hinge kink.
CheckResult check_gradient(std::uint64_t seed, std::size_t points, double tol = 1e-5);

struct EquivalenceOutcome {
  CheckResult check;
  double tv = 0.0;             // max over prompts of TV(oracle pi, trained pi)
  double reward_diff_err = 0.0;
  double noise_err = 0.0;
  double grid_spacing = 0.0;
};

// Brute-force RLHF-COV oracle against the trained DPO-COV policy on an
// n_prompts x 2 instance.
EquivalenceOutcome check_equivalence(std::uint64_t seed, std::size_t n_prompts,
                                     std::size_t grid_resolution = 21, double tv_tol = 0.02);

// theorem_eta_* against the reference implementations.
CheckResult check_theorem_eta(double tol = 1e-12);

CheckResult lemma_check_result(const LemmaCheck& c);

// The suite run by the verify command; `trials` scales every check.
std::vector<CheckResult> run_verification(std::uint64_t seed, std::size_t trials);

}  // namespace dpocov
