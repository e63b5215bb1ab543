#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "dpocov/core_types.hpp"

namespace fixtures {

// One prompt, two responses, uniform reference and behaviour policies.
inline dpocov::Instance two_arm(double r0, double r1, double bound = 1.0, int len0 = 1,
                                int len1 = 1) {
  dpocov::Instance inst;
  inst.n_prompts = 1;
  inst.n_responses = 2;
  inst.reward_bound = bound;
  inst.prompt_dist = {1.0};
  inst.ref_policy.probs = dpocov::Table(1, 2, 0.5);
  inst.behavior_policy.probs = dpocov::Table(1, 2, 0.5);
  inst.true_reward.values = dpocov::Table(1, 2, std::vector<double>{r0, r1});
  inst.response_len = {len0, len1};
  return inst;
}

inline dpocov::RewardTable reward(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return dpocov::RewardTable{dpocov::Table(rows, cols, std::move(v))};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir = std::filesystem::temp_directory_path() /
             ("dpocov_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
