#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dpocov/core_types.hpp"
#include "dpocov/rng.hpp"

namespace dpocov {

// Preference samples in generation order together with the generator
// settings. The hidden_* fields of each sample are ground truth for analysis.
struct PreferenceDataset {
  std::vector<PreferenceSample> samples;
  CorruptionSpec corruption;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  bool operator==(const PreferenceDataset&) const = default;

  // Sum of |xi*_i| over the first `count` samples (all when count exceeds size).
  double noise_l1(std::size_t count = static_cast<std::size_t>(-1)) const;
};

// Probability that a^(1) beats a^(-1) under the corrupted Bradley-Terry model,
// sigma(r_diff + noise) with r_diff = r*(x,a^(1)) - r*(x,a^(-1)).
double bt_label_prob(double r_diff, double noise);

// One draw of the per-sample noise xi* according to `spec`.
double draw_noise(const CorruptionSpec& spec, Rng& rng);

// Offline data: x ~ rho, a^(1), a^(-1) iid ~ pi_b(.|x), xi* per `corruption`,
// y = +1 with probability sigma[r*(x,a^(1)) - r*(x,a^(-1)) + xi*].
PreferenceDataset generate_offline_dataset(const Instance& inst, std::size_t n,
                                           const CorruptionSpec& corruption, std::uint64_t seed);

// Same model with an explicit per-sample noise vector in place of the
// generative corruption spec. The returned dataset's corruption is zeroed.
PreferenceDataset generate_offline_dataset_with_noise(const Instance& inst,
                                                      std::span<const double> noise,
                                                      std::uint64_t seed);

// Assigns winner/loser from the label rule: y = +1 makes a^(1) the winner.
PreferenceSample make_sample(std::size_t prompt, std::size_t first, std::size_t second,
                             int label, double noise);

// Stochastic preference oracle for the online loop: a single Bernoulli draw
// with bt_label_prob(r*(x,a1) - r*(x,a_minus1), noise). Returns +1 or -1.
int oracle_label(const Instance& inst, std::size_t prompt, std::size_t a1,
                 std::size_t a_minus1, double noise, Rng& stream);

// Exact law of the winner a^w given x under the offline data model,
// marginalising over a^(1), a^(-1) ~ pi_b x pi_b and the noise distribution.
Policy base_policy_offline_exact(const Instance& inst, const CorruptionSpec& corruption);

// Empirical conditional law of the winners in `data`; prompts that never occur
// fall back to `fallback`'s row.
Policy empirical_winner_policy(const PreferenceDataset& data, const Policy& fallback);

}  // namespace dpocov
