#include "dpocov/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "dpocov/closed_forms.hpp"
#include "dpocov/numerics.hpp"
#include "dpocov/objectives.hpp"
#include "dpocov/rng.hpp"

namespace dpocov {

GapReport generalization_gap(const Policy& pi_hat, const Instance& inst, double beta,
                             double omega) {
  const Policy best = policy_from_reward(inst.true_reward, inst, beta, omega);
  GapReport out;
  out.j_opt = j_value(best, inst, beta, omega);
  out.j_hat = j_value(pi_hat, inst, beta, omega);
  out.gap = out.j_opt - out.j_hat;
  out.kl_to_ref = expected_kl_to_ref(pi_hat, inst);
  out.expected_len = expected_length(pi_hat, inst);
  return out;
}

// ---------------------------------------------------------------------------

double offline_coverage_lhs(const Instance& inst, const Policy& base, const RewardTable& r,
                            double beta, double omega) {
  const Policy best = policy_from_reward(inst.true_reward, inst, beta, omega);
  double out = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    double row = 0.0;
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      const double g = inst.true_reward(x, a) - r(x, a);
      row += (best(x, a) - base(x, a)) * g;
    }
    out += inst.prompt_dist[x] * row;
  }
  return out;
}

double offline_coverage_error(const Instance& inst, const RewardTable& r) {
  double mse = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    double row = 0.0;
    for (std::size_t a = 0; a < inst.n_responses; ++a) {
      for (std::size_t b = 0; b < inst.n_responses; ++b) {
        const double d = (inst.true_reward(x, a) - r(x, a)) - (inst.true_reward(x, b) - r(x, b));
        row += inst.behavior_policy(x, a) * inst.behavior_policy(x, b) * d * d;
      }
    }
    mse += inst.prompt_dist[x] * row;
  }
  return std::sqrt(mse);
}

CoverageEstimate offline_coverage_over_family(const Instance& inst, const Policy& base,
                                              std::span<const RewardTable> family, double beta,
                                              double omega) {
  CoverageEstimate out;
  for (const auto& r : family) {
    const double err = offline_coverage_error(inst, r);
    if (err < kCoverageErrorFloor) {
      ++out.skipped;
      continue;
    }
    ++out.evaluated;
    const double ratio = offline_coverage_lhs(inst, base, r, beta, omega) / err;
    if (!out.value || ratio > *out.value) {
      out.value = ratio;
      out.witness = r;
    }
  }
  return out;
}

std::vector<RewardTable> sample_reward_family(const Instance& inst, std::size_t count,
                                              std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RewardTable> family;
  family.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    RewardTable r{Table(inst.n_prompts, inst.n_responses)};
    for (double& v : r.values.data()) v = rng.uniform(0.0, inst.reward_bound);
    family.push_back(std::move(r));
  }
  return family;
}

CoverageEstimate estimate_offline_coverage(const Instance& inst, const CorruptionSpec& corruption,
                                           std::size_t family_size, std::uint64_t seed,
                                           double beta, double omega) {
  if (family_size < 1) throw ValidationError("estimate_offline_coverage: empty family");
  const Policy base = base_policy_offline_exact(inst, corruption);
  const auto family = sample_reward_family(inst, family_size, seed);
  return offline_coverage_over_family(inst, base, family, beta, omega);
}

CoverabilityEstimate estimate_online_coverability(const Instance& inst,
                                                  std::span<const RewardTable> family,
                                                  double beta, double omega) {
  if (family.empty()) throw ValidationError("estimate_online_coverability: empty family");
  Table envelope(inst.n_prompts, inst.n_responses, 0.0);
  for (const auto& r : family) {
    const Policy pi = policy_from_reward(r, inst, beta, omega);
    for (std::size_t k = 0; k < envelope.size(); ++k) {
      envelope.data()[k] = std::max(envelope.data()[k], pi.probs.data()[k]);
    }
  }
  // With nu = envelope / M(x), sup_{r,a} pi_r(a|x) / nu(a|x) = M(x).
  CoverabilityEstimate out;
  out.g_on = 0.0;
  for (std::size_t x = 0; x < inst.n_prompts; ++x) {
    double mass = 0.0;
    for (double v : envelope.row(x)) mass += v;
    out.g_on = std::max(out.g_on, mass);
    for (double& v : envelope.row(x)) v /= mass;
  }
  out.envelope = Policy{std::move(envelope)};
  return out;
}

// ---------------------------------------------------------------------------

double log_cover_size(double reward_bound, std::size_t n, std::size_t n_x, std::size_t n_a) {
  const double per_entry = std::max(0.0, std::log(reward_bound * static_cast<double>(n)));
  return static_cast<double>(n_x * n_a) * per_entry;
}

namespace {

void require_eta_args(double reward_bound, double xi_l1, double delta, std::size_t n) {
  if (n < 1) throw ValidationError("theorem eta: sample count must be >= 1");
  if (!(reward_bound > 0.0)) throw ValidationError("theorem eta: reward bound must be > 0");
  if (!(xi_l1 >= 0.0)) throw ValidationError("theorem eta: ||xi*||_1 must be >= 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("theorem eta: delta must be in (0, 1)");
}

}  // namespace

double theorem_eta_offline(std::size_t n, double reward_bound, double xi_l1, double delta,
                           std::size_t n_x, std::size_t n_a) {
  require_eta_args(reward_bound, xi_l1, delta, n);
  const double log_cover = log_cover_size(reward_bound, n, n_x, n_a) - std::log(delta);
  return 2.0 * std::sqrt(xi_l1 + 5.0 * log_cover) /
         (std::sqrt(static_cast<double>(n)) * (3.0 + std::exp(reward_bound)));
}

double theorem_eta_online(std::size_t T, double reward_bound, double xi_l1, double delta,
                          double g_on, std::size_t n_x, std::size_t n_a) {
  require_eta_args(reward_bound, xi_l1, delta, T);
  if (!(g_on > 0.0)) throw ValidationError("theorem eta: coverability must be > 0");
  const double log_term = std::log(4.0 * static_cast<double>(T)) +
                          log_cover_size(reward_bound, T, n_x, n_a) - std::log(delta);
  return std::sqrt(log_term + xi_l1) /
         ((3.0 + std::exp(reward_bound)) * std::sqrt(static_cast<double>(T) * g_on));
}

// ---------------------------------------------------------------------------

BruteForceResult brute_force_rlhfcov_offline(const PreferenceDataset& data, const Instance& inst,
                                             const Hyperparams& hp, std::size_t grid_resolution,
                                             const Policy* base) {
  validate_hyperparams(hp);
  const std::size_t entries = inst.n_prompts * inst.n_responses;
  if (entries > kBruteForceMaxEntries) {
    throw ValidationError("brute force oracle: |X||A| exceeds " +
                          std::to_string(kBruteForceMaxEntries));
  }
  if (grid_resolution < 2 || grid_resolution > kBruteForceMaxResolution) {
    throw ValidationError("brute force oracle: grid resolution must be in [2, 21]");
  }
  if (data.empty()) throw ValidationError("brute force oracle: empty dataset");

  const Policy exact = base ? *base : base_policy_offline_exact(inst, data.corruption);
  const double spacing = inst.reward_bound / static_cast<double>(grid_resolution - 1);

  // Samples grouped by (prompt, winner, loser, label); xi_r is per sample but
  // identical within a group.
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, int>, double> groups;
  for (const auto& s : data.samples) groups[{s.prompt, s.winner, s.loser, s.label}] += 1.0;
  const double inv_n = 1.0 / static_cast<double>(data.size());

  std::vector<std::size_t> idx(entries, 0);
  RewardTable r{Table(inst.n_prompts, inst.n_responses)};
  BruteForceResult best;
  best.objective = std::numeric_limits<double>::infinity();
  while (true) {
    for (std::size_t k = 0; k < entries; ++k) {
      r.values.data()[k] = spacing * static_cast<double>(idx[k]);
    }
    double nll = 0.0;
    for (const auto& [key, count] : groups) {
      const auto& [x, w, l, y] = key;
      const double d = r(x, w) - r(x, l);
      const double xi = noise_closed_form(d, y, hp.lambda);
      nll += count * (-log_sigmoid(d + y * xi) + hp.lambda * std::abs(xi));
    }
    double objective = nll * inv_n;
    if (hp.eta != 0.0) {
      const Policy pi_r = policy_from_reward(r, inst, hp.beta, hp.omega);
      objective += hp.eta * relative_value(pi_r, r, exact, inst, hp.beta, hp.omega);
    }
    if (objective < best.objective) {
      best.objective = objective;
      best.reward = r;
    }
    std::size_t k = 0;
    while (k < entries && ++idx[k] == grid_resolution) idx[k++] = 0;
    if (k == entries) break;
  }

  best.grid_spacing = spacing;
  best.policy = policy_from_reward(best.reward, inst, hp.beta, hp.omega);
  best.noise.reserve(data.size());
  for (const auto& s : data.samples) {
    const double d = best.reward(s.prompt, s.winner) - best.reward(s.prompt, s.loser);
    best.noise.push_back(noise_closed_form(d, s.label, hp.lambda));
  }
  return best;
}

// ---------------------------------------------------------------------------

bool LemmaReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const LemmaCheck& c) { return c.violations == 0; });
}

namespace {

// Slack for floating-point evaluation of inequalities that are tight (or
// hold with equality) in exact arithmetic.
constexpr double kIneqSlack = 1e-14;
constexpr double kIdentityTol = 1e-12;

class CheckRecorder {
 public:
  explicit CheckRecorder(std::string name) { check_.name = std::move(name); }

  // Records one trial; `excess` > 0 means the property failed by that margin.
  template <typename WitnessFn>
  void record(double excess, double tol, WitnessFn witness) {
    ++check_.trials;
    if (excess > tol || std::isnan(excess)) {
      if (check_.violations == 0) check_.witness = witness();
      ++check_.violations;
      if (!(excess <= check_.worst_excess)) check_.worst_excess = excess;
    }
  }

  LemmaCheck take() { return std::move(check_); }

 private:
  LemmaCheck check_;
};

std::string fmt(std::initializer_list<std::pair<const char*, double>> fields) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, v] : fields) {
    if (!first) os << ' ';
    os << k << '=' << format_double(v);
    first = false;
  }
  return os.str();
}

Instance random_small_instance(Rng& rng, double reward_bound) {
  const auto nx = static_cast<std::size_t>(rng.uniform_int(1, 3));
  const auto na = static_cast<std::size_t>(rng.uniform_int(2, 5));
  return make_random_instance(nx, na, reward_bound, rng.next_u64());
}

RewardTable random_reward(Rng& rng, const Instance& inst) {
  RewardTable r{Table(inst.n_prompts, inst.n_responses)};
  for (double& v : r.values.data()) v = rng.uniform(0.0, inst.reward_bound);
  return r;
}

Policy random_positive_policy(Rng& rng, std::size_t nx, std::size_t na) {
  Table t(nx, na);
  for (std::size_t x = 0; x < nx; ++x) {
    double total = 0.0;
    for (double& v : t.row(x)) {
      v = rng.uniform(0.01, 1.0);
      total += v;
    }
    for (double& v : t.row(x)) v /= total;
  }
  return Policy{std::move(t)};
}

}  // namespace

LemmaReport verify_lemma_suite(std::uint64_t seed, std::size_t trials, SigmoidFn sig) {
  if (trials < 1) throw ValidationError("verify_lemma_suite: trials must be >= 1");
  if (sig == nullptr) sig = &sigmoid;
  const double bounds[] = {0.5, 1.0, 5.0};
  Rng rng(seed);

  CheckRecorder band("sigmoid_band");
  CheckRecorder rdiff("reward_difference");
  CheckRecorder round_trip("policy_round_trip");
  CheckRecorder shift("log_sigmoid_shift");
  CheckRecorder squared("squared_gap");
  CheckRecorder ratio("policy_ratio");
  CheckRecorder sign_law("noise_sign_law");
  CheckRecorder optimality("noise_optimality");

  for (double R : bounds) {
    const double lower_rate = 1.0 / (3.0 + std::exp(R));

    auto band_trial = [&](double z1, double z2) {
      const double gap = std::abs(z1 - z2);
      const double actual = std::abs(sig(z1) - sig(z2));
      const double excess = std::max(gap * lower_rate - actual, actual - 0.25 * gap);
      band.record(excess, kIneqSlack, [&] { return fmt({{"z1", z1}, {"z2", z2}, {"R", R}}); });
    };
    for (double z1 : {-R, 0.0, R}) {
      for (double z2 : {-R, 0.0, R}) band_trial(z1, z2);
    }

    for (std::size_t t = 0; t < trials; ++t) {
      band_trial(rng.uniform(-R, R), rng.uniform(-R, R));

      // log sigma(d + y xi_r) <= log sigma(d) + sigma(R) |xi_r|.
      {
        const double d = t == 0 ? -R : rng.uniform(-R, R);
        const int y = rng.bernoulli(0.5) ? 1 : -1;
        const double lam = (t % 2 == 0) ? rng.uniform(sigmoid(R), 1.0) : rng.uniform(1e-6, 1.0);
        const double xi = noise_closed_form(d, y, lam);
        const double lhs = std::log(sig(d + y * xi));
        const double rhs = std::log(sig(d)) + sig(R) * std::abs(xi);
        shift.record(lhs - rhs, kIneqSlack,
                     [&] { return fmt({{"d", d}, {"y", y}, {"lambda", lam}, {"R", R}}); });

        sign_law.record(-(y * xi), 0.0,
                        [&] { return fmt({{"d", d}, {"y", y}, {"lambda", lam}}); });

        // xi_r minimises f(v) = lambda|v| - log sigma(d + y v).
        auto f = [&](double v) { return lam * std::abs(v) - std::log(sig(d + y * v)); };
        const double fx = f(xi);
        for (double scale : {1e-6, 1e-3, 1e-1, 1.0}) {
          const double v = xi + scale * rng.uniform(-1.0, 1.0);
          optimality.record(fx - f(v), kIdentityTol, [&] {
            return fmt({{"d", d}, {"y", y}, {"lambda", lam}, {"xi", xi}, {"v", v}});
          });
        }
      }

      // Squared sigmoid gap; holds for arbitrary margins and noise.
      {
        const double dp = rng.uniform(-R - 2.0, R + 2.0);
        const double d = rng.uniform(-R - 2.0, R + 2.0);
        const double xi = rng.uniform(-3.0 * R, 3.0 * R);
        const int y = rng.bernoulli(0.5) ? 1 : -1;
        const double lhs = std::pow(sig(dp + y * xi) - sig(d), 2);
        const double rhs = std::pow(sig(dp) - sig(d), 2) - 0.5 * std::abs(xi);
        squared.record(rhs - lhs, kIneqSlack, [&] {
          return fmt({{"d_prime", dp}, {"d", d}, {"xi", xi}, {"y", y}});
        });
      }

      // Reward/policy identities and the log-ratio bound on a random small instance.
      {
        const Instance inst = random_small_instance(rng, R);
        const double beta = rng.uniform(0.1, 2.0);
        const double omega = rng.uniform(0.0, 0.01);
        const RewardTable r = random_reward(rng, inst);
        const Policy pi_r = policy_from_reward(r, inst, beta, omega);
        const RewardTable back = reward_from_policy(pi_r, inst, beta, omega);
        double worst = 0.0, range_excess = -R;
        for (std::size_t x = 0; x < inst.n_prompts; ++x) {
          for (std::size_t a = 0; a < inst.n_responses; ++a) {
            for (std::size_t b = 0; b < inst.n_responses; ++b) {
              const double lhs = back(x, a) - back(x, b);
              worst = std::max(worst, std::abs(lhs - (r(x, a) - r(x, b))));
              range_excess = std::max(range_excess, std::abs(lhs) - R);
            }
          }
        }
        rdiff.record(std::max(worst, range_excess), kIdentityTol,
                     [&] { return fmt({{"beta", beta}, {"omega", omega}, {"R", R}}); });

        const Policy pi = random_positive_policy(rng, inst.n_prompts, inst.n_responses);
        const RewardTable r_pi = reward_from_policy(pi, inst, beta, omega);
        const Policy again = policy_from_reward(r_pi, inst, beta, omega);
        const PartitionTable z = partition_table(r_pi, inst, beta, omega);
        double rt = 0.0;
        for (std::size_t k = 0; k < pi.probs.size(); ++k) {
          rt = std::max(rt, std::abs(again.probs.data()[k] - pi.probs.data()[k]));
        }
        for (double zx : z.z) rt = std::max(rt, std::abs(zx - 1.0));
        round_trip.record(rt, kIdentityTol,
                          [&] { return fmt({{"beta", beta}, {"omega", omega}}); });

        const RewardTable r2 = random_reward(rng, inst);
        const Policy pi_r2 = policy_from_reward(r2, inst, beta, omega);
        double sup = 0.0;
        for (std::size_t k = 0; k < r.values.size(); ++k) {
          sup = std::max(sup, std::abs(r2.values.data()[k] - r.values.data()[k]));
        }
        double excess = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < pi_r.probs.size(); ++k) {
          const double lr = std::abs(std::log(pi_r2.probs.data()[k] / pi_r.probs.data()[k]));
          excess = std::max(excess, lr - 2.0 * sup / beta);
        }
        ratio.record(excess, kIdentityTol,
                     [&] { return fmt({{"beta", beta}, {"omega", omega}, {"sup_diff", sup}}); });
      }
    }
  }

  LemmaReport report;
  for (auto* c : {&band, &rdiff, &round_trip, &shift, &squared, &ratio, &sign_law, &optimality}) {
    report.checks.push_back(c->take());
  }
  return report;
}

// ---------------------------------------------------------------------------

double template_coverability(const Instance& inst, const RateTemplate& tmpl) {
  const auto family = sample_reward_family(inst, std::max<std::size_t>(tmpl.coverability_family, 1),
                                           tmpl.coverability_seed);
  return estimate_online_coverability(inst, family, tmpl.hp.beta, tmpl.hp.omega).g_on;
}

RateRow run_rate_cell(const Instance& inst, const RateTemplate& tmpl, std::size_t n,
                      std::uint64_t seed, Setting setting, double g_on) {
  Hyperparams hp = tmpl.hp;
  RateRow row;
  row.setting = setting;
  row.n = n;
  row.seed = seed;
  row.corrupt_frac = tmpl.corruption.corrupt_fraction;
  row.noise_mag = tmpl.corruption.noise_magnitude;

  Policy pi_hat;
  if (setting == Setting::kOffline) {
    const auto data = generate_offline_dataset(inst, n, tmpl.corruption, seed);
    row.xi_l1 = data.noise_l1();
    if (tmpl.theorem_eta) {
      hp.eta = theorem_eta_offline(n, inst.reward_bound, row.xi_l1, tmpl.delta, inst.n_prompts,
                                   inst.n_responses);
    }
    auto result = optimize_offline(data, inst, hp, tmpl.optimizer, PolicyParams::zeros(inst));
    row.converged = result.report.converged;
    pi_hat = std::move(result.policy);
  } else {
    // The online noise stream is drawn independently of the policies, so
    // ||xi*||_1 is known before the run (generator-side knowledge).
    const auto noise = online_noise_sequence(tmpl.corruption, n * tmpl.online.batch, seed);
    for (double v : noise) row.xi_l1 += std::abs(v);
    if (tmpl.theorem_eta) {
      hp.eta = theorem_eta_online(n, inst.reward_bound, row.xi_l1, tmpl.delta, g_on,
                                  inst.n_prompts, inst.n_responses);
    }
    auto result = run_online(inst, hp, n, tmpl.corruption, tmpl.optimizer, seed, tmpl.online);
    row.converged = result.all_converged;
    pi_hat = std::move(result.output);
  }
  row.lambda = hp.lambda;
  row.eta = hp.eta;
  row.omega = hp.omega;
  row.beta = hp.beta;
  const GapReport gap = generalization_gap(pi_hat, inst, hp.beta, hp.omega);
  row.gap = gap.gap;
  row.j_opt = gap.j_opt;
  row.j_hat = gap.j_hat;
  row.kl_to_ref = gap.kl_to_ref;
  row.avg_len = gap.expected_len;
  return row;
}

std::vector<RateRow> run_rate_cells(const Instance& inst, const RateTemplate& tmpl,
                                    std::span<const std::size_t> n_values,
                                    std::span<const std::uint64_t> seeds, Setting setting,
                                    unsigned threads) {
  const double g_on =
      (setting == Setting::kOnline && tmpl.theorem_eta) ? template_coverability(inst, tmpl) : 1.0;
  std::vector<std::pair<std::size_t, std::uint64_t>> cells;
  for (std::size_t n : n_values) {
    for (std::uint64_t s : seeds) cells.emplace_back(n, s);
  }
  std::vector<RateRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      rows[k] = run_rate_cell(inst, tmpl, cells[k].first, cells[k].second, setting, g_on);
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cells.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

RateResult summarize_rates(std::vector<RateRow> rows) {
  RateResult out;
  std::map<std::size_t, std::vector<double>> by_n;
  for (const auto& row : rows) {
    if (!row.converged) {
      ++out.nonconverged;
      continue;
    }
    by_n[row.n].push_back(row.gap);
  }
  for (const auto& [n, gaps] : by_n) {
    RatePoint p;
    p.n = n;
    p.count = gaps.size();
    p.mean_gap = pairwise_sum(gaps) / static_cast<double>(gaps.size());
    if (gaps.size() > 1) {
      double ss = 0.0;
      for (double g : gaps) ss += (g - p.mean_gap) * (g - p.mean_gap);
      p.se_gap = std::sqrt(ss / static_cast<double>(gaps.size() - 1)) /
                 std::sqrt(static_cast<double>(gaps.size()));
    }
    out.points.push_back(p);
  }
  std::vector<double> lx, ly;
  for (const auto& p : out.points) {
    if (p.mean_gap > 0.0) {
      lx.push_back(std::log(static_cast<double>(p.n)));
      ly.push_back(std::log(p.mean_gap));
    }
  }
  if (lx.size() >= 2) {
    const double k = static_cast<double>(lx.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i];
      my += ly[i];
    }
    mx /= k;
    my /= k;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    out.fitted = true;
  }
  out.rows = std::move(rows);
  return out;
}

RateResult rate_experiment(const Instance& inst, const RateTemplate& tmpl,
                           std::span<const std::size_t> n_values,
                           std::span<const std::uint64_t> seeds, Setting setting,
                           unsigned threads) {
  std::vector<std::size_t> distinct(n_values.begin(), n_values.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 4) throw ValidationError("rate_experiment: need at least 4 distinct n values");
  if (seeds.size() < 10) throw ValidationError("rate_experiment: need at least 10 seeds");
  return summarize_rates(run_rate_cells(inst, tmpl, distinct, seeds, setting, threads));
}

}  // namespace dpocov
