#include "dpocov/core_types.hpp"

#include <cmath>
#include <sstream>

#include "dpocov/numerics.hpp"
#include "dpocov/rng.hpp"

namespace dpocov {

namespace {

constexpr double kSimplexTol = 1e-12;

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

std::vector<double> random_simplex_row(Rng& rng, std::size_t n) {
  // Bounded away from zero so log-ratios against this row stay moderate.
  std::vector<double> row(n);
  double total = 0.0;
  for (auto& v : row) {
    v = rng.uniform(0.05, 1.0);
    total += v;
  }
  for (auto& v : row) v /= total;
  return row;
}

Policy random_policy(Rng& rng, std::size_t nx, std::size_t na) {
  Table t(nx, na);
  for (std::size_t x = 0; x < nx; ++x) {
    auto row = random_simplex_row(rng, na);
    std::copy(row.begin(), row.end(), t.row(x).begin());
  }
  return Policy{std::move(t)};
}

Table table_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                      const char* key) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != rows * cols) {
    fail(std::string(key) + ": expected a row-major array of " +
         std::to_string(rows * cols) + " numbers");
  }
  std::vector<double> data;
  data.reserve(arr.size());
  for (const auto& v : arr) data.push_back(v.get<double>());
  return Table(rows, cols, std::move(data));
}

}  // namespace

Table::Table(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail("table data size does not match its shape");
  }
}

std::string to_string(NoiseSign s) {
  switch (s) {
    case NoiseSign::kFixedPositive: return "fixed-positive";
    case NoiseSign::kFixedNegative: return "fixed-negative";
    case NoiseSign::kRandomSign: return "random-sign";
  }
  return "random-sign";
}

NoiseSign noise_sign_from_string(const std::string& s) {
  if (s == "fixed-positive") return NoiseSign::kFixedPositive;
  if (s == "fixed-negative") return NoiseSign::kFixedNegative;
  if (s == "random-sign") return NoiseSign::kRandomSign;
  fail("unknown noise sign rule '" + s +
       "' (expected fixed-positive, fixed-negative or random-sign)");
}

std::string to_string(Setting s) { return s == Setting::kOffline ? "offline" : "online"; }

Setting setting_from_string(const std::string& s) {
  if (s == "offline") return Setting::kOffline;
  if (s == "online") return Setting::kOnline;
  fail("unknown setting '" + s + "' (expected offline or online)");
}

void validate_policy(const Policy& p, bool strictly_positive, const char* what) {
  for (std::size_t x = 0; x < p.n_prompts(); ++x) {
    double total = 0.0;
    for (std::size_t a = 0; a < p.n_responses(); ++a) {
      const double v = p(x, a);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        fail(std::string(what) + ": entry out of [0,1] at prompt " + std::to_string(x));
      }
      if (strictly_positive && v <= 0.0) {
        fail(std::string(what) + ": zero probability at (" + std::to_string(x) + ", " +
             std::to_string(a) + ")");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kSimplexTol) {
      std::ostringstream os;
      os << what << ": row " << x << " sums to " << format_double(total);
      fail(os.str());
    }
  }
}

void validate_instance(const Instance& inst) {
  if (inst.n_prompts < 1) fail("instance: n_prompts must be >= 1");
  if (inst.n_responses < 1) fail("instance: n_responses must be >= 1");
  if (!(inst.reward_bound > 0.0) || !std::isfinite(inst.reward_bound)) {
    fail("instance: reward_bound must be positive and finite");
  }
  const std::size_t nx = inst.n_prompts;
  const std::size_t na = inst.n_responses;
  if (inst.prompt_dist.size() != nx) fail("instance: prompt_dist has wrong length");
  double total = 0.0;
  for (double p : inst.prompt_dist) {
    if (!(p >= 0.0)) fail("instance: prompt_dist has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > kSimplexTol) fail("instance: prompt_dist does not sum to 1");
  auto check_shape = [&](const Table& t, const char* what) {
    if (t.rows() != nx || t.cols() != na) fail(std::string("instance: ") + what + " has wrong shape");
  };
  check_shape(inst.ref_policy.probs, "ref_policy");
  check_shape(inst.behavior_policy.probs, "behavior_policy");
  check_shape(inst.true_reward.values, "true_reward");
  validate_policy(inst.ref_policy, true, "ref_policy");
  validate_policy(inst.behavior_policy, true, "behavior_policy");
  for (double r : inst.true_reward.values.data()) {
    if (!(r >= 0.0 && r <= inst.reward_bound)) {
      fail("instance: true_reward entry outside [0, reward_bound]");
    }
  }
  if (inst.response_len.size() != nx * na) fail("instance: response_len has wrong length");
  for (int len : inst.response_len) {
    if (len < 0) fail("instance: negative response length");
  }
}

void validate_hyperparams(const Hyperparams& hp) {
  if (!(hp.beta > 0.0) || !std::isfinite(hp.beta)) fail("hyperparams.beta must be > 0");
  if (!(hp.eta >= 0.0) || !std::isfinite(hp.eta)) fail("hyperparams.eta must be >= 0");
  if (!(hp.omega >= 0.0) || !std::isfinite(hp.omega)) fail("hyperparams.omega must be >= 0");
  if (!(hp.lambda > 0.0) || !std::isfinite(hp.lambda)) {
    fail("hyperparams.lambda must be > 0 (lambda = 0 leaves the noise minimisation unbounded)");
  }
}

void validate_corruption(const CorruptionSpec& c) {
  if (!(c.corrupt_fraction >= 0.0 && c.corrupt_fraction <= 1.0)) {
    fail("corruption.corrupt_fraction must be in [0, 1]");
  }
  if (!(c.noise_magnitude >= 0.0) || !std::isfinite(c.noise_magnitude)) {
    fail("corruption.noise_magnitude must be >= 0");
  }
}

Instance make_random_instance(std::size_t n_prompts, std::size_t n_responses,
                              double reward_bound, std::uint64_t seed) {
  if (n_prompts < 1) fail("make_random_instance: n_prompts must be >= 1");
  if (n_responses < 2) {
    fail("make_random_instance: n_responses must be >= 2 (a preference needs two responses)");
  }
  if (!(reward_bound > 0.0)) fail("make_random_instance: reward_bound must be > 0");

  Rng rng(seed);
  Instance inst;
  inst.n_prompts = n_prompts;
  inst.n_responses = n_responses;
  inst.reward_bound = reward_bound;
  inst.prompt_dist = random_simplex_row(rng, n_prompts);
  inst.ref_policy = random_policy(rng, n_prompts, n_responses);
  inst.behavior_policy = random_policy(rng, n_prompts, n_responses);
  inst.true_reward.values = Table(n_prompts, n_responses);
  for (auto& r : inst.true_reward.values.data()) r = rng.uniform(0.0, reward_bound);
  inst.response_len.resize(n_prompts * n_responses);
  for (auto& len : inst.response_len) len = static_cast<int>(rng.uniform_int(1, 100));
  validate_instance(inst);
  return inst;
}

nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json j;
  j["n_prompts"] = inst.n_prompts;
  j["n_responses"] = inst.n_responses;
  j["reward_bound"] = inst.reward_bound;
  j["prompt_dist"] = inst.prompt_dist;
  j["ref_policy"] = inst.ref_policy.probs.data();
  j["behavior_policy"] = inst.behavior_policy.probs.data();
  j["true_reward"] = inst.true_reward.values.data();
  j["response_len"] = inst.response_len;
  return j;
}

Instance instance_from_json(const nlohmann::json& j) {
  Instance inst;
  try {
    inst.n_prompts = j.at("n_prompts").get<std::size_t>();
    inst.n_responses = j.at("n_responses").get<std::size_t>();
    inst.reward_bound = j.at("reward_bound").get<double>();
    inst.prompt_dist = j.at("prompt_dist").get<std::vector<double>>();
    inst.ref_policy.probs = table_from_json(j, inst.n_prompts, inst.n_responses, "ref_policy");
    inst.behavior_policy.probs =
        table_from_json(j, inst.n_prompts, inst.n_responses, "behavior_policy");
    inst.true_reward.values = table_from_json(j, inst.n_prompts, inst.n_responses, "true_reward");
    inst.response_len = j.at("response_len").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("instance json: ") + e.what());
  }
  validate_instance(inst);
  return inst;
}

nlohmann::json corruption_to_json(const CorruptionSpec& c) {
  return {{"corrupt_fraction", c.corrupt_fraction},
          {"noise_magnitude", c.noise_magnitude},
          {"noise_sign_rule", to_string(c.sign_rule)}};
}

CorruptionSpec corruption_from_json(const nlohmann::json& j) {
  CorruptionSpec c;
  c.corrupt_fraction = j.value("corrupt_fraction", 0.0);
  c.noise_magnitude = j.value("noise_magnitude", 0.0);
  c.sign_rule = noise_sign_from_string(j.value("noise_sign_rule", std::string("random-sign")));
  validate_corruption(c);
  return c;
}

nlohmann::json hyperparams_to_json(const Hyperparams& hp) {
  return {{"beta", hp.beta}, {"eta", hp.eta}, {"omega", hp.omega}, {"lambda", hp.lambda}};
}

std::string instance_hash(const Instance& inst) {
  return hex64(fnv1a64(instance_to_json(inst).dump()));
}

}  // namespace dpocov
