#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpocov/core_types.hpp"
#include "dpocov/datagen.hpp"
#include "dpocov/training.hpp"

namespace dpocov {

struct GapReport {
  double j_opt = 0.0;  // J(pi_{r*}) = max_pi J
  double j_hat = 0.0;
  double gap = 0.0;    // j_opt - j_hat
  double kl_to_ref = 0.0;
  double expected_len = 0.0;
};

GapReport generalization_gap(const Policy& pi_hat, const Instance& inst, double beta, double omega);

// ---------------------------------------------------------------------------
// Coverage

// Left side of the offline coverage inequality for reward r:
//   E_{x~rho, a~pi_{r*}, a'~base}[r*(x,a) - r*(x,a') - r(x,a) + r(x,a')].
double offline_coverage_lhs(const Instance& inst, const Policy& base, const RewardTable& r,
                            double beta, double omega);

// E_r: root-mean-square error of the reward margin over one data sample,
// summed exactly over x ~ rho and a^(1), a^(-1) ~ pi_b (the squared error is
// symmetric in winner/loser, so the label law drops out).
double offline_coverage_error(const Instance& inst, const RewardTable& r);

struct CoverageEstimate {
  std::optional<double> value;  // empty when every E_r was below threshold
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  std::optional<RewardTable> witness;
};

inline constexpr double kCoverageErrorFloor = 1e-12;

// sup over `family` of lhs / E_r with the given base policy.
CoverageEstimate offline_coverage_over_family(const Instance& inst, const Policy& base,
                                              std::span<const RewardTable> family, double beta,
                                              double omega);

// Sampled estimate of the offline coverage coefficient G_D, using the exact
// winner law as the base policy. Families are nested in `family_size` for a
// fixed seed, so the estimate is non-decreasing in it.
CoverageEstimate estimate_offline_coverage(const Instance& inst, const CorruptionSpec& corruption,
                                           std::size_t family_size, std::uint64_t seed,
                                           double beta, double omega);

// `count` reward tables drawn uniformly from [0, R]^{|X||A|}.
std::vector<RewardTable> sample_reward_family(const Instance& inst, std::size_t count,
                                              std::uint64_t seed);

struct CoverabilityEstimate {
  double g_on = 1.0;
  Policy envelope;  // nu*(a|x) proportional to max_r pi_r(a|x)
};

// Envelope bound on the coverability coefficient of {pi_r : r in family}.
CoverabilityEstimate estimate_online_coverability(const Instance& inst,
                                                  std::span<const RewardTable> family,
                                                  double beta, double omega);

// ---------------------------------------------------------------------------
// Theorem-guided hyperparameters. The log covering number of the reward
// family is taken as |X||A| log(R n), floored at zero.

double log_cover_size(double reward_bound, std::size_t n, std::size_t n_x, std::size_t n_a);

// eta = 2 sqrt(||xi*||_1 + 5 log(N_cover / delta)) / (sqrt(n) (3 + e^R)).
double theorem_eta_offline(std::size_t n, double reward_bound, double xi_l1, double delta,
                           std::size_t n_x, std::size_t n_a);

// eta = sqrt(log(4 T N_cover / delta) + ||xi*||_1) / ((3 + e^R) sqrt(T G_on)).
double theorem_eta_online(std::size_t T, double reward_bound, double xi_l1, double delta,
                          double g_on, std::size_t n_x, std::size_t n_a);

// ---------------------------------------------------------------------------
// Brute-force reward-space oracle for the offline RLHF-COV objective.

struct BruteForceResult {
  RewardTable reward;
  std::vector<double> noise;  // xi_r per sample
  Policy policy;              // pi_r
  double objective = 0.0;     // L(r, xi_r) + eta V(pi_r, r)
  double grid_spacing = 0.0;
};

inline constexpr std::size_t kBruteForceMaxEntries = 6;
inline constexpr std::size_t kBruteForceMaxResolution = 21;

// Exhaustive search over a uniform grid of `grid_resolution` points per entry
// on [0, R]^{|X||A|}. The pessimism baseline is `base` when given, otherwise
// the exact winner law of the data model.
BruteForceResult brute_force_rlhfcov_offline(const PreferenceDataset& data, const Instance& inst,
                                             const Hyperparams& hp, std::size_t grid_resolution,
                                             const Policy* base = nullptr);

// ---------------------------------------------------------------------------
// Randomised checks of the supporting inequalities and identities.

struct LemmaCheck {
  std::string name;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double worst_excess = 0.0;  // largest observed violation margin
  std::string witness;        // inputs of the first violation
};

struct LemmaReport {
  std::vector<LemmaCheck> checks;
  bool all_passed() const;
};

using SigmoidFn = double (*)(double);

// Runs every check `trials` times per reward bound in {0.5, 1, 5}, plus the
// boundary points z = +-R. `sig` replaces the logistic function in the
// checks that use it directly (for mutation testing).
LemmaReport verify_lemma_suite(std::uint64_t seed, std::size_t trials, SigmoidFn sig = nullptr);

// ---------------------------------------------------------------------------
// Rate experiments

struct RateTemplate {
  Hyperparams hp;               // eta is replaced when theorem_eta is set
  bool theorem_eta = true;
  double delta = 0.1;
  CorruptionSpec corruption;
  OptimizerSettings optimizer;
  OnlineOptions online;
  std::size_t coverability_family = 256;  // reward samples for the G_on estimate (online)
  std::uint64_t coverability_seed = 0;
};

struct RateRow {
  Setting setting = Setting::kOffline;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double eta = 0.0;
  double omega = 0.0;
  double beta = 0.0;
  double corrupt_frac = 0.0;
  double noise_mag = 0.0;
  double xi_l1 = 0.0;
  double gap = 0.0;
  double j_opt = 0.0;
  double j_hat = 0.0;
  double kl_to_ref = 0.0;
  double avg_len = 0.0;
  bool converged = false;
};

struct RatePoint {
  std::size_t n = 0;
  std::size_t count = 0;  // converged runs
  double mean_gap = 0.0;
  double se_gap = 0.0;    // sample standard deviation / sqrt(count)
};

struct RateResult {
  std::vector<RateRow> rows;
  std::vector<RatePoint> points;
  double slope = 0.0;  // least squares fit of log(mean gap) against log n
  double intercept = 0.0;
  bool fitted = false;
  std::size_t nonconverged = 0;
};

// Coverability coefficient used by the online theorem-guided eta.
double template_coverability(const Instance& inst, const RateTemplate& tmpl);

// One (n, seed) cell: generate data, train, measure the gap.
RateRow run_rate_cell(const Instance& inst, const RateTemplate& tmpl, std::size_t n,
                      std::uint64_t seed, Setting setting, double g_on = 1.0);

// All cells over n_values x seeds, executed on `threads` workers. Rows are
// returned in (n, seed) order whatever the worker count.
std::vector<RateRow> run_rate_cells(const Instance& inst, const RateTemplate& tmpl,
                                    std::span<const std::size_t> n_values,
                                    std::span<const std::uint64_t> seeds, Setting setting,
                                    unsigned threads = 1);

// Per-n mean and standard error over converged rows, and the log-log fit.
RateResult summarize_rates(std::vector<RateRow> rows);

// Full rate experiment; requires at least 4 distinct n values and 10 seeds.
RateResult rate_experiment(const Instance& inst, const RateTemplate& tmpl,
                           std::span<const std::size_t> n_values,
                           std::span<const std::uint64_t> seeds, Setting setting,
                           unsigned threads = 1);

}  // namespace dpocov
