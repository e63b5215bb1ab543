#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace dpocov {

// Dense row-major matrix indexed (prompt, response).
class Table {
 public:
  Table() = default;
  Table(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Table(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const Table&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Conditional distribution pi(a|x). Rows are probability vectors.
struct Policy {
  Table probs;

  double operator()(std::size_t x, std::size_t a) const { return probs(x, a); }
  std::size_t n_prompts() const { return probs.rows(); }
  std::size_t n_responses() const { return probs.cols(); }
  bool operator==(const Policy&) const = default;
};

// Reward model r(x, a).
struct RewardTable {
  Table values;

  double operator()(std::size_t x, std::size_t a) const { return values(x, a); }
  double& operator()(std::size_t x, std::size_t a) { return values(x, a); }
  bool operator==(const RewardTable&) const = default;
};

// Finite tabular world: prompts, responses with lengths, prompt distribution,
// reference and behaviour policies, and the true reward r*.
struct Instance {
  std::size_t n_prompts = 0;
  std::size_t n_responses = 0;
  double reward_bound = 1.0;
  std::vector<double> prompt_dist;
  Policy ref_policy;
  Policy behavior_policy;
  RewardTable true_reward;
  std::vector<int> response_len;  // row-major (prompt, response)

  int length(std::size_t x, std::size_t a) const {
    return response_len[x * n_responses + a];
  }
  bool operator==(const Instance&) const = default;
};

enum class NoiseSign { kFixedPositive, kFixedNegative, kRandomSign };

std::string to_string(NoiseSign s);
NoiseSign noise_sign_from_string(const std::string& s);

struct CorruptionSpec {
  double corrupt_fraction = 0.0;
  double noise_magnitude = 0.0;
  NoiseSign sign_rule = NoiseSign::kRandomSign;

  bool operator==(const CorruptionSpec&) const = default;
};

struct PreferenceSample {
  std::size_t prompt = 0;
  std::size_t winner = 0;
  std::size_t loser = 0;
  int label = 1;  // +1 when hidden_first won
  std::size_t hidden_first = 0;   // a^(1)
  std::size_t hidden_second = 0;  // a^(-1)
  double hidden_noise = 0.0;      // xi*_i

  bool operator==(const PreferenceSample&) const = default;
};

struct Hyperparams {
  double beta = 1.0;
  double eta = 0.0;
  double omega = 0.0;
  double lambda = 1.0;

  bool operator==(const Hyperparams&) const = default;
};

enum class Setting { kOffline, kOnline };

std::string to_string(Setting s);
Setting setting_from_string(const std::string& s);

enum class DescentMethod { kLbfgs, kGradientDescent };

struct OptimizerSettings {
  DescentMethod method = DescentMethod::kLbfgs;
  double step = 1.0;       // initial trial step
  double shrink = 0.5;     // backtracking factor
  double armijo_c = 1e-4;  // sufficient-decrease constant
  double tol = 1e-8;       // gradient-norm stopping tolerance
  int max_iter = 5000;
  int history = 10;        // L-BFGS memory
  double grow = 2.0;       // gradient descent: next trial step = grow * accepted step
};

struct RunConfig {
  std::uint64_t seed = 0;
  Setting setting = Setting::kOffline;
  std::size_t sample_count = 0;
  Hyperparams hyperparams;
  CorruptionSpec corruption;
  OptimizerSettings optimizer;
  std::string output_dir = ".";
};

// Thrown for any violated precondition or type invariant.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void validate_policy(const Policy& p, bool strictly_positive, const char* what = "policy");
void validate_instance(const Instance& inst);
void validate_hyperparams(const Hyperparams& hp);
void validate_corruption(const CorruptionSpec& c);

Instance make_random_instance(std::size_t n_prompts, std::size_t n_responses,
                              double reward_bound, std::uint64_t seed);

nlohmann::json instance_to_json(const Instance& inst);
Instance instance_from_json(const nlohmann::json& j);

nlohmann::json corruption_to_json(const CorruptionSpec& c);
CorruptionSpec corruption_from_json(const nlohmann::json& j);

nlohmann::json hyperparams_to_json(const Hyperparams& hp);

// Stable identifier of an instance: FNV-1a of its canonical JSON dump.
std::string instance_hash(const Instance& inst);

}  // namespace dpocov
