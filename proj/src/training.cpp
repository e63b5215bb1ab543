#include "dpocov/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>

#include "dpocov/rng.hpp"

namespace dpocov {

namespace {

constexpr std::uint64_t kOnlineSampleStream = 11;
constexpr std::uint64_t kOnlineNoiseStream = 12;
constexpr std::uint64_t kOnlineOutputStream = 13;
constexpr double kCurvature = 0.9;

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct Correction {
  std::vector<double> s;  // theta_{k+1} - theta_k
  std::vector<double> y;  // grad_{k+1} - grad_k
  double rho;             // 1 / (y.s)
};

// Two-loop recursion: returns -H_k grad.
std::vector<double> lbfgs_direction(const std::deque<Correction>& memory,
                                    std::span<const double> grad) {
  std::vector<double> q(grad.begin(), grad.end());
  std::vector<double> alpha(memory.size());
  for (std::size_t k = memory.size(); k-- > 0;) {
    const auto& m = memory[k];
    alpha[k] = m.rho * dot(m.s, q);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * m.y[i];
  }
  if (!memory.empty()) {
    const auto& last = memory.back();
    const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
    for (double& v : q) v *= gamma;
  }
  for (std::size_t k = 0; k < memory.size(); ++k) {
    const auto& m = memory[k];
    const double b = m.rho * dot(m.y, q);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += m.s[i] * (alpha[k] - b);
  }
  for (double& v : q) v = -v;
  return q;
}

}  // namespace

TrainReport minimize(const ObjectiveFn& f, PolicyParams init, const OptimizerSettings& settings) {
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  std::vector<double> theta = std::move(init.theta);
  const std::size_t dim = theta.size();
  std::vector<double> grad(dim), trial(dim), trial_grad(dim);
  double value = f(theta, grad);
  double gnorm = norm2(grad);
  report.loss_trace.push_back(value);
  report.grad_norm_trace.push_back(gnorm);

  const bool use_lbfgs = settings.method == DescentMethod::kLbfgs;
  std::deque<Correction> memory;
  double gd_step = settings.step;

  while (true) {
    if (gnorm <= settings.tol) {
      report.converged = true;
      break;
    }
    if (report.iterations >= settings.max_iter || !std::isfinite(value)) break;

    std::vector<double> direction;
    if (use_lbfgs && !memory.empty()) direction = lbfgs_direction(memory, grad);
    double slope = direction.empty() ? 0.0 : dot(grad, direction);
    if (direction.empty() || !(slope < 0.0)) {
      memory.clear();
      direction.assign(grad.size(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) direction[i] = -grad[i];
      slope = -gnorm * gnorm;
    }

    double step = use_lbfgs ? settings.step : gd_step;
    bool accepted = false;
    double trial_value = value;
    for (int k = 0; k < 200; ++k) {
      for (std::size_t i = 0; i < dim; ++i) trial[i] = theta[i] + step * direction[i];
      trial_value = f(trial, trial_grad);
      if (std::isfinite(trial_value) && trial_value <= value + settings.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= settings.shrink;
    }
    // Quasi-Newton directions can be far too short on the flat tails of the
    // sigmoid squash. While the full step still satisfies Armijo but the slope
    // along the direction has barely flattened (weak Wolfe curvature fails),
    // keep doubling.
    if (accepted && use_lbfgs && step == settings.step) {
      std::vector<double> probe(dim), probe_grad(dim);
      for (int k = 0; k < 60 && dot(trial_grad, direction) < kCurvature * slope; ++k) {
        const double longer = 2.0 * step;
        for (std::size_t i = 0; i < dim; ++i) probe[i] = theta[i] + longer * direction[i];
        const double probe_value = f(probe, probe_grad);
        if (!(std::isfinite(probe_value) &&
              probe_value <= value + settings.armijo_c * longer * slope)) {
          break;
        }
        step = longer;
        trial.swap(probe);
        trial_grad.swap(probe_grad);
        trial_value = probe_value;
      }
    }
    if (!accepted) {
      // Restart from steepest descent once before giving up.
      if (use_lbfgs && !memory.empty()) {
        memory.clear();
        continue;
      }
      break;
    }

    if (use_lbfgs) {
      Correction c{std::vector<double>(dim), std::vector<double>(dim), 0.0};
      for (std::size_t i = 0; i < dim; ++i) {
        c.s[i] = trial[i] - theta[i];
        c.y[i] = trial_grad[i] - grad[i];
      }
      const double sy = dot(c.s, c.y);
      if (sy > 1e-12 * norm2(c.s) * norm2(c.y) && sy > 0.0) {
        c.rho = 1.0 / sy;
        memory.push_back(std::move(c));
        if (memory.size() > static_cast<std::size_t>(std::max(settings.history, 1))) {
          memory.pop_front();
        }
      }
    } else {
      gd_step = step * settings.grow;
    }

    theta.swap(trial);
    grad.swap(trial_grad);
    value = trial_value;
    gnorm = norm2(grad);
    ++report.iterations;
    report.loss_trace.push_back(value);
    report.grad_norm_trace.push_back(gnorm);
  }

  report.final_params.theta = std::move(theta);
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainResult optimize_offline(const PreferenceDataset& data, const Instance& inst,
                             const Hyperparams& hp, const OptimizerSettings& settings,
                             const PolicyParams& init, PessimismSource source,
                             const Policy* exact_base) {
  if (data.empty()) throw ValidationError("optimize_offline: empty dataset");
  CompiledObjective objective(data, data.size(), inst, hp, Setting::kOffline, source, exact_base);
  auto report = minimize(
      [&](std::span<const double> theta, std::span<double> grad) {
        return objective.value_and_gradient(theta, grad);
      },
      init, settings);
  Policy pi = report.final_params.policy(inst, hp.beta, hp.omega);
  return {std::move(pi), std::move(report)};
}

std::vector<double> online_noise_sequence(const CorruptionSpec& corruption, std::size_t count,
                                          std::uint64_t seed) {
  validate_corruption(corruption);
  Rng rng = Rng::derive(seed, kOnlineNoiseStream);
  std::vector<double> out(count);
  for (auto& v : out) v = draw_noise(corruption, rng);
  return out;
}

OnlineResult run_online(const Instance& inst, const Hyperparams& hp, std::size_t T,
                        const CorruptionSpec& corruption, const OptimizerSettings& settings,
                        std::uint64_t seed, const OnlineOptions& options) {
  if (T < 1) throw ValidationError("run_online: T must be >= 1");
  if (options.batch < 1) throw ValidationError("run_online: batch must be >= 1");
  validate_hyperparams(hp);

  OnlineResult result;
  const auto noise = online_noise_sequence(corruption, T * options.batch, seed);
  Rng sampler = Rng::derive(seed, kOnlineSampleStream);
  Rng output_rng = Rng::derive(seed, kOnlineOutputStream);
  result.t_hat = static_cast<std::size_t>(output_rng.uniform_int(2, static_cast<std::int64_t>(T) + 1));
  result.data.corruption = corruption;
  result.data.seed = seed;

  CompiledObjective objective(inst, hp, Setting::kOnline);
  PolicyParams params = PolicyParams::zeros(inst);
  std::size_t k = 0;
  for (std::size_t t = 1; t <= T; ++t) {
    const Policy current = params.policy(inst, hp.beta, hp.omega);
    OnlineStep step;
    step.t = t;
    step.j_value = j_value(current, inst, hp.beta, hp.omega);
    for (std::size_t b = 0; b < options.batch; ++b, ++k) {
      const std::size_t x = sampler.categorical(inst.prompt_dist);
      const std::size_t second = sampler.categorical(inst.ref_policy.probs.row(x));
      const std::size_t first = sampler.categorical(current.probs.row(x));
      const int y = oracle_label(inst, x, first, second, noise[k], sampler);
      const auto sample = make_sample(x, first, second, y, noise[k]);
      objective.add_sample(sample);
      result.data.samples.push_back(sample);
      step.prompt = x;
      step.first = first;
      step.second = second;
      step.label = y;
      step.noise = noise[k];
    }

    PolicyParams init = PolicyParams::zeros(inst);
    if (options.warm_start) {
      for (std::size_t i = 0; i < init.theta.size(); ++i) {
        init.theta[i] = std::clamp(params.theta[i], -options.warm_start_clip, options.warm_start_clip);
      }
    }
    auto report = minimize(
        [&](std::span<const double> theta, std::span<double> grad) {
          return objective.value_and_gradient(theta, grad);
        },
        std::move(init), settings);
    params = report.final_params;
    step.loss = report.loss_trace.back();
    step.grad_norm = report.grad_norm_trace.back();
    step.inner_iterations = report.iterations;
    step.converged = report.converged;
    result.all_converged = result.all_converged && report.converged;
    result.trace.push_back(step);
    if (t + 1 == result.t_hat) result.output_params = params;
  }
  result.noise_l1 = result.data.noise_l1();
  result.output = result.output_params.policy(inst, hp.beta, hp.omega);
  return result;
}

}  // namespace dpocov
