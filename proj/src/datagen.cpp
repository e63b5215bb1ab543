#include "dpocov/datagen.hpp"

#include <cmath>
#include <functional>

#include "dpocov/numerics.hpp"

namespace dpocov {

namespace {

// Stream tags keep the prompt/response/label draws independent of the noise
// draws, so a corruption change does not reshuffle the sampled pairs.
constexpr std::uint64_t kPairStream = 1;
constexpr std::uint64_t kNoiseStream = 2;

}  // namespace

double PreferenceDataset::noise_l1(std::size_t count) const {
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size() && i < count; ++i) {
    total += std::abs(samples[i].hidden_noise);
  }
  return total;
}

double bt_label_prob(double r_diff, double noise) { return sigmoid(r_diff + noise); }

double draw_noise(const CorruptionSpec& spec, Rng& rng) {
  // Two variates per sample regardless of outcome keeps the stream aligned.
  const double u_corrupt = rng.uniform();
  const double u_sign = rng.uniform();
  if (!(u_corrupt < spec.corrupt_fraction)) return 0.0;
  switch (spec.sign_rule) {
    case NoiseSign::kFixedPositive: return spec.noise_magnitude;
    case NoiseSign::kFixedNegative: return -spec.noise_magnitude;
    case NoiseSign::kRandomSign: return u_sign < 0.5 ? spec.noise_magnitude : -spec.noise_magnitude;
  }
  return 0.0;
}

PreferenceSample make_sample(std::size_t prompt, std::size_t first, std::size_t second,
                             int label, double noise) {
  PreferenceSample s;
  s.prompt = prompt;
  s.label = label;
  s.hidden_first = first;
  s.hidden_second = second;
  s.hidden_noise = noise;
  s.winner = label > 0 ? first : second;
  s.loser = label > 0 ? second : first;
  return s;
}

int oracle_label(const Instance& inst, std::size_t prompt, std::size_t a1, std::size_t a_minus1,
                 double noise, Rng& stream) {
  const double r_diff = inst.true_reward(prompt, a1) - inst.true_reward(prompt, a_minus1);
  return stream.bernoulli(bt_label_prob(r_diff, noise)) ? 1 : -1;
}

namespace {

PreferenceDataset generate(const Instance& inst, std::size_t n, std::uint64_t seed,
                           const std::function<double(std::size_t, Rng&)>& noise_for) {
  Rng pairs = Rng::derive(seed, kPairStream);
  Rng noise_rng = Rng::derive(seed, kNoiseStream);
  PreferenceDataset data;
  data.seed = seed;
  data.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = pairs.categorical(inst.prompt_dist);
    const std::size_t a1 = pairs.categorical(inst.behavior_policy.probs.row(x));
    const std::size_t a2 = pairs.categorical(inst.behavior_policy.probs.row(x));
    const double xi = noise_for(i, noise_rng);
    const int y = oracle_label(inst, x, a1, a2, xi, pairs);
    data.samples.push_back(make_sample(x, a1, a2, y, xi));
  }
  return data;
}

}  // namespace

PreferenceDataset generate_offline_dataset(const Instance& inst, std::size_t n,
                                           const CorruptionSpec& corruption, std::uint64_t seed) {
  validate_corruption(corruption);
  if (n < 1) throw ValidationError("generate_offline_dataset: n must be >= 1");
  auto data = generate(inst, n, seed,
                       [&](std::size_t, Rng& rng) { return draw_noise(corruption, rng); });
  data.corruption = corruption;
  return data;
}

PreferenceDataset generate_offline_dataset_with_noise(const Instance& inst,
                                                      std::span<const double> noise,
                                                      std::uint64_t seed) {
  if (noise.empty()) throw ValidationError("generate_offline_dataset_with_noise: empty noise");
  return generate(inst, noise.size(), seed, [&](std::size_t i, Rng&) { return noise[i]; });
}

Policy base_policy_offline_exact(const Instance& inst, const CorruptionSpec& corruption) {
  validate_corruption(corruption);
  // Noise support with probabilities.
  struct Atom {
    double value;
    double prob;
  };
  std::vector<Atom> atoms{{0.0, 1.0 - corruption.corrupt_fraction}};
  const double c = corruption.noise_magnitude;
  const double f = corruption.corrupt_fraction;
  switch (corruption.sign_rule) {
    case NoiseSign::kFixedPositive: atoms.push_back({c, f}); break;
    case NoiseSign::kFixedNegative: atoms.push_back({-c, f}); break;
    case NoiseSign::kRandomSign:
      atoms.push_back({c, 0.5 * f});
      atoms.push_back({-c, 0.5 * f});
      break;
  }

  const std::size_t nx = inst.n_prompts;
  const std::size_t na = inst.n_responses;
  Table out(nx, na);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t a = 0; a < na; ++a) {
      // a wins either as a^(1) (prob sigma(d + xi)) or as a^(-1) against
      // a^(1) = a' (prob 1 - sigma(-d + xi) = sigma(d - xi)).
      double acc = 0.0;
      for (std::size_t b = 0; b < na; ++b) {
        const double d = inst.true_reward(x, a) - inst.true_reward(x, b);
        double win = 0.0;
        for (const auto& atom : atoms) {
          win += atom.prob * (sigmoid(d + atom.value) + sigmoid(d - atom.value));
        }
        acc += inst.behavior_policy(x, b) * win;
      }
      out(x, a) = inst.behavior_policy(x, a) * acc;
    }
    // Exact in real arithmetic; renormalise away rounding.
    double total = 0.0;
    for (double v : out.row(x)) total += v;
    for (double& v : out.row(x)) v /= total;
  }
  return Policy{std::move(out)};
}

Policy empirical_winner_policy(const PreferenceDataset& data, const Policy& fallback) {
  Table counts(fallback.n_prompts(), fallback.n_responses());
  for (const auto& s : data.samples) counts(s.prompt, s.winner) += 1.0;
  for (std::size_t x = 0; x < counts.rows(); ++x) {
    double total = 0.0;
    for (double v : counts.row(x)) total += v;
    for (std::size_t a = 0; a < counts.cols(); ++a) {
      counts(x, a) = total > 0.0 ? counts(x, a) / total : fallback(x, a);
    }
  }
  return Policy{std::move(counts)};
}

}  // namespace dpocov
