#include "dpocov/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "CLI11.hpp"
#include "dpocov/datagen.hpp"
#include "dpocov/io.hpp"
#include "dpocov/numerics.hpp"
#include "dpocov/verification.hpp"

namespace dpocov::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Parsed text yields unsigned integers, documents built in code signed ones.
bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// One JSON object of the config with its dotted path, used for typed reads
// that report the field path on failure.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
    for (const auto& [key, value] : j_.items()) {
      const bool known = std::any_of(allowed.begin(), allowed.end(),
                                     [&](const char* a) { return key == a; });
      if (!known) throw ValidationError(field(key) + ": unknown field");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ValidationError(field(key) + ": expected a number");
    return v.get<double>();
  }

  std::uint64_t count(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!is_count(v)) {
      throw ValidationError(field(key) + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ValidationError(field(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ValidationError(field(key) + ": expected a string");
    return v.get<std::string>();
  }

  const json* child(const char* key) const { return has(key) ? &j_.at(key) : nullptr; }

 private:
  const json& j_;
  std::string path_;
};

template <typename Fn>
auto rethrow_with_path(const std::string& path, Fn fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::vector<std::uint64_t> count_list(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ValidationError(path + ": expected a non-empty array");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!is_count(v[i])) {
      throw ValidationError(path + "[" + std::to_string(i) + "]: expected a non-negative integer");
    }
    out.push_back(v[i].get<std::uint64_t>());
  }
  return out;
}

// Numbers, or the string "sigmoid(R)" standing for sigma(reward_bound).
std::vector<double> number_list(const json& v, const std::string& path, double reward_bound) {
  if (!v.is_array() || v.empty()) throw ValidationError(path + ": expected a non-empty array");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].is_number()) {
      out.push_back(v[i].get<double>());
    } else if (v[i].is_string() && v[i].get<std::string>() == "sigmoid(R)") {
      out.push_back(sigmoid(reward_bound));
    } else {
      throw ValidationError(path + "[" + std::to_string(i) + "]: expected a number");
    }
  }
  return out;
}

Instance parse_instance(const json& j, const fs::path& base_dir) {
  const Section s(j, "instance",
                  {"path", "n_prompts", "n_responses", "reward_bound", "seed", "prompt_dist",
                   "ref_policy", "behavior_policy", "true_reward", "response_len"});
  if (s.has("path")) {
    const fs::path p = base_dir / s.string("path", "");
    json doc;
    try {
      doc = json::parse(read_text_file(p));
    } catch (const json::parse_error& e) {
      throw ValidationError("instance.path: " + p.string() + ": " + e.what());
    }
    return rethrow_with_path("instance.path", [&] { return instance_from_json(doc); });
  }
  if (s.has("prompt_dist")) {
    return rethrow_with_path("instance", [&] { return instance_from_json(j); });
  }
  const auto nx = s.count("n_prompts", 4);
  const auto na = s.count("n_responses", 4);
  const double R = s.number("reward_bound", 1.0);
  const auto seed = s.count("seed", 0);
  return rethrow_with_path("instance", [&] { return make_random_instance(nx, na, R, seed); });
}

Setting parse_setting(const std::string& text, const std::string& path) {
  try {
    return setting_from_string(text);
  } catch (const std::exception&) {
    throw ValidationError(path + ": expected \"offline\" or \"online\"");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"vanilla-dpo", "robust-dpo", "pessimistic-dpo",
                                                 "length-dpo", "dpo-cov"};
  return names;
}

Hyperparams preset(const std::string& name) {
  if (name == "vanilla-dpo") return {0.05, 0.0, 0.0, 1.0};
  if (name == "robust-dpo") return {0.05, 0.0, 0.0, 0.1};
  if (name == "pessimistic-dpo") return {0.05, 0.005, 0.0, 1.0};
  if (name == "length-dpo") return {0.05, 0.0, 0.0005, 1.0};
  if (name == "dpo-cov") return {0.05, 0.0005, 0.0005, 0.7};
  throw ValidationError("unknown preset '" + name + "'");
}

std::string preset_label(const Hyperparams& hp) {
  const bool robust = hp.lambda < 1.0;
  const bool pessimistic = hp.eta > 0.0;
  const bool length = hp.omega > 0.0;
  if (!robust && !pessimistic && !length) return "vanilla-dpo";
  if (robust && !pessimistic && !length) return "robust-dpo";
  if (!robust && pessimistic && !length) return "pessimistic-dpo";
  if (!robust && !pessimistic && length) return "length-dpo";
  if (robust && pessimistic && length) return "dpo-cov";
  return "custom";
}

Config parse_config(const json& doc, const fs::path& base_dir) {
  const Section top(doc, "",
                    {"seed", "setting", "instance", "data", "hyperparams", "optimizer", "online",
                     "sweep"});
  Config cfg;
  cfg.seed = top.count("seed", 0);
  cfg.setting = parse_setting(top.string("setting", "offline"), "setting");

  cfg.instance = parse_instance(top.has("instance") ? top.raw("instance") : json::object(), base_dir);

  if (const json* d = top.child("data")) {
    const Section s(*d, "data",
                    {"n", "corrupt_fraction", "noise_magnitude", "noise_sign_rule", "path"});
    cfg.n = s.count("n", cfg.n);
    cfg.corruption.corrupt_fraction = s.number("corrupt_fraction", 0.0);
    cfg.corruption.noise_magnitude = s.number("noise_magnitude", 0.0);
    cfg.corruption.sign_rule = rethrow_with_path("data.noise_sign_rule", [&] {
      return noise_sign_from_string(s.string("noise_sign_rule", "random-sign"));
    });
    rethrow_with_path("data", [&] {
      validate_corruption(cfg.corruption);
      return 0;
    });
    if (s.has("path")) cfg.dataset_path = (base_dir / s.string("path", "")).string();
    if (cfg.n < 1) throw ValidationError("data.n: must be >= 1");
  }

  if (const json* h = top.child("hyperparams")) {
    const Section s(*h, "hyperparams", {"preset", "beta", "eta", "omega", "lambda"});
    if (s.has("preset")) {
      cfg.preset = s.string("preset", "");
      cfg.hp = rethrow_with_path("hyperparams.preset", [&] { return preset(cfg.preset); });
    }
    cfg.hp.beta = s.number("beta", cfg.hp.beta);
    cfg.hp.eta = s.number("eta", cfg.hp.eta);
    cfg.hp.omega = s.number("omega", cfg.hp.omega);
    cfg.hp.lambda = s.number("lambda", cfg.hp.lambda);
  }
  rethrow_with_path("hyperparams", [&] {
    validate_hyperparams(cfg.hp);
    return 0;
  });

  if (const json* o = top.child("optimizer")) {
    const Section s(*o, "optimizer",
                    {"method", "step", "shrink", "armijo_c", "tol", "max_iter", "history", "grow"});
    auto& opt = cfg.optimizer;
    const std::string method = s.string("method", "lbfgs");
    if (method == "lbfgs") {
      opt.method = DescentMethod::kLbfgs;
    } else if (method == "gd") {
      opt.method = DescentMethod::kGradientDescent;
    } else {
      throw ValidationError("optimizer.method: expected \"lbfgs\" or \"gd\"");
    }
    opt.step = s.number("step", opt.step);
    opt.shrink = s.number("shrink", opt.shrink);
    opt.armijo_c = s.number("armijo_c", opt.armijo_c);
    opt.tol = s.number("tol", opt.tol);
    opt.max_iter = static_cast<int>(s.count("max_iter", static_cast<std::uint64_t>(opt.max_iter)));
    opt.history = static_cast<int>(s.count("history", static_cast<std::uint64_t>(opt.history)));
    opt.grow = s.number("grow", opt.grow);
    if (!(opt.step > 0.0)) throw ValidationError("optimizer.step: must be > 0");
    if (!(opt.shrink > 0.0 && opt.shrink < 1.0)) throw ValidationError("optimizer.shrink: must be in (0, 1)");
    if (!(opt.armijo_c > 0.0 && opt.armijo_c < 1.0)) throw ValidationError("optimizer.armijo_c: must be in (0, 1)");
    if (!(opt.tol > 0.0)) throw ValidationError("optimizer.tol: must be > 0");
    if (!(opt.grow >= 1.0)) throw ValidationError("optimizer.grow: must be >= 1");
  }

  if (const json* o = top.child("online")) {
    const Section s(*o, "online", {"T", "warm_start", "batch"});
    cfg.T = s.count("T", cfg.T);
    cfg.online.warm_start = s.boolean("warm_start", true);
    cfg.online.batch = s.count("batch", 1);
    if (cfg.T < 1) throw ValidationError("online.T: must be >= 1");
    if (cfg.online.batch < 1) throw ValidationError("online.batch: must be >= 1");
  }

  if (const json* w = top.child("sweep")) {
    const Section s(*w, "sweep",
                    {"setting", "n_values", "t_values", "seeds", "n_seeds", "lambda", "eta",
                     "omega", "delta", "coverability_family"});
    auto& sw = cfg.sweep;
    if (s.has("setting")) {
      const json& v = s.raw("setting");
      sw.settings.clear();
      if (v.is_string()) {
        sw.settings.push_back(parse_setting(v.get<std::string>(), "sweep.setting"));
      } else if (v.is_array() && !v.empty()) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          const std::string p = "sweep.setting[" + std::to_string(i) + "]";
          if (!v[i].is_string()) throw ValidationError(p + ": expected a string");
          sw.settings.push_back(parse_setting(v[i].get<std::string>(), p));
        }
      } else {
        throw ValidationError("sweep.setting: expected a string or a non-empty array");
      }
    }
    for (const char* key : {"n_values", "t_values"}) {
      if (s.has(key)) {
        for (auto n : count_list(s.raw(key), s.field(key))) {
          if (n < 1) throw ValidationError(s.field(key) + ": values must be >= 1");
          sw.n_values.push_back(n);
        }
      }
    }
    std::sort(sw.n_values.begin(), sw.n_values.end());
    sw.n_values.erase(std::unique(sw.n_values.begin(), sw.n_values.end()), sw.n_values.end());
    if (s.has("seeds")) sw.seeds = count_list(s.raw("seeds"), "sweep.seeds");
    if (s.has("n_seeds")) {
      if (s.has("seeds")) throw ValidationError("sweep.n_seeds: conflicts with sweep.seeds");
      const auto k = s.count("n_seeds", 0);
      for (std::uint64_t i = 0; i < k; ++i) sw.seeds.push_back(cfg.seed + i);
    }
    const double R = cfg.instance.reward_bound;
    if (s.has("lambda")) sw.lambdas = number_list(s.raw("lambda"), "sweep.lambda", R);
    if (s.has("omega")) sw.omegas = number_list(s.raw("omega"), "sweep.omega", R);
    if (s.has("eta")) {
      const json& v = s.raw("eta");
      if (v.is_string() && v.get<std::string>() == "theorem") {
        sw.theorem_eta = true;
      } else {
        sw.theorem_eta = false;
        sw.etas = number_list(v, "sweep.eta", R);
      }
    }
    sw.delta = s.number("delta", sw.delta);
    sw.coverability_family = s.count("coverability_family", sw.coverability_family);
    if (!(sw.delta > 0.0 && sw.delta < 1.0)) throw ValidationError("sweep.delta: must be in (0, 1)");
    for (double l : sw.lambdas) {
      if (!(l > 0.0)) throw ValidationError("sweep.lambda: values must be > 0");
    }
    for (double o : sw.omegas) {
      if (!(o >= 0.0)) throw ValidationError("sweep.omega: values must be >= 0");
    }
    for (double e : sw.etas) {
      if (!(e >= 0.0)) throw ValidationError("sweep.eta: values must be >= 0");
    }
  }
  return cfg;
}

Config load_config(const GlobalOptions& opts) {
  json doc = json::object();
  fs::path base_dir = ".";
  if (!opts.config_path.empty()) {
    const fs::path path(opts.config_path);
    base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    try {
      doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
  }
  Config cfg = parse_config(doc, base_dir);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.setting) cfg.setting = *opts.setting;
  return cfg;
}

// ---------------------------------------------------------------------------

namespace {

class Artifacts {
 public:
  Artifacts(const fs::path& dir, CommandResult& result) : dir_(dir), result_(result) {}

  void text(const std::string& name, const std::string& body) {
    const fs::path p = dir_ / name;
    write_text_file(p, body);
    result_.artifacts.push_back(p);
  }
  void json_file(const std::string& name, const json& body) { text(name, body.dump(2) + "\n"); }

 private:
  fs::path dir_;
  CommandResult& result_;
};

json hyperparams_record(const Config& cfg) {
  json j = hyperparams_to_json(cfg.hp);
  j["label"] = cfg.preset.empty() ? preset_label(cfg.hp) : cfg.preset;
  j["preset"] = cfg.preset.empty() ? json(nullptr) : json(cfg.preset);
  return j;
}

std::string gap_csv(const GapReport& g) {
  return "j_opt,j_hat,gap,kl_to_ref,expected_len\n" + format_double(g.j_opt) + "," +
         format_double(g.j_hat) + "," + format_double(g.gap) + "," +
         format_double(g.kl_to_ref) + "," + format_double(g.expected_len) + "\n";
}

json theta_json(const PolicyParams& p) { return p.theta; }

void say(const GlobalOptions& opts, const std::string& line) {
  if (!opts.quiet) std::cout << line << '\n';
}

}  // namespace

CommandResult cmd_gen(const GlobalOptions& opts) {
  const Config cfg = load_config(opts);
  CommandResult result;
  const auto data = generate_offline_dataset(cfg.instance, cfg.n, cfg.corruption, cfg.seed);
  Artifacts out(opts.out_dir, result);
  out.text("dataset.csv", dataset_csv(data));
  const json sidecar = dataset_sidecar(data, cfg.instance);
  out.json_file("dataset.json", sidecar);
  out.json_file("instance.json", instance_to_json(cfg.instance));
  result.message = "dataset_hash " + sidecar["dataset_hash"].get<std::string>();
  say(opts, result.message);
  return result;
}

CommandResult cmd_train(const GlobalOptions& opts) {
  const Config cfg = load_config(opts);
  CommandResult result;
  Artifacts out(opts.out_dir, result);
  const Instance& inst = cfg.instance;
  json summary;
  summary["setting"] = to_string(cfg.setting);
  summary["seed"] = cfg.seed;
  summary["instance_hash"] = instance_hash(inst);
  summary["hyperparams"] = hyperparams_record(cfg);
  summary["corruption"] = corruption_to_json(cfg.corruption);
  json checkpoint;
  checkpoint["setting"] = to_string(cfg.setting);
  checkpoint["hyperparams"] = hyperparams_record(cfg);
  checkpoint["instance_hash"] = instance_hash(inst);

  bool converged = false;
  Policy pi_hat;
  double wall = 0.0;
  if (cfg.setting == Setting::kOffline) {
    PreferenceDataset data;
    if (!cfg.dataset_path.empty()) {
      std::ifstream in(cfg.dataset_path);
      if (!in) throw ValidationError("data.path: cannot read " + cfg.dataset_path);
      data = rethrow_with_path("data.path", [&] { return read_dataset_csv(in, inst); });
      data.corruption = cfg.corruption;
      data.seed = cfg.seed;
      if (data.empty()) throw ValidationError("data.path: dataset has no rows");
    } else {
      data = generate_offline_dataset(inst, cfg.n, cfg.corruption, cfg.seed);
    }
    const auto trained =
        optimize_offline(data, inst, cfg.hp, cfg.optimizer, PolicyParams::zeros(inst));
    converged = trained.report.converged;
    pi_hat = trained.policy;
    wall = trained.report.wall_time_s;
    out.text("dataset.csv", dataset_csv(data));
    out.text("trace.csv", offline_trace_csv(trained.report));
    summary["n"] = data.size();
    summary["noise_l1"] = data.noise_l1();
    summary["iterations"] = trained.report.iterations;
    summary["final_loss"] = trained.report.loss_trace.back();
    summary["final_grad_norm"] = trained.report.grad_norm_trace.back();
    checkpoint["theta"] = theta_json(trained.report.final_params);
    checkpoint["iterations"] = trained.report.iterations;
  } else {
    const auto run = run_online(inst, cfg.hp, cfg.T, cfg.corruption, cfg.optimizer, cfg.seed,
                                cfg.online);
    converged = run.all_converged;
    pi_hat = run.output;
    out.text("dataset.csv", dataset_csv(run.data));
    out.text("trace.csv", online_trace_csv(run));
    summary["T"] = cfg.T;
    summary["t_hat"] = run.t_hat;
    summary["warm_start"] = cfg.online.warm_start;
    summary["batch"] = cfg.online.batch;
    summary["noise_l1"] = run.noise_l1;
    checkpoint["theta"] = theta_json(run.output_params);
    checkpoint["t_hat"] = run.t_hat;
  }
  const GapReport gap = generalization_gap(pi_hat, inst, cfg.hp.beta, cfg.hp.omega);
  summary["gap"] = gap_json(gap);
  summary["converged"] = converged;
  summary["wall_time_s"] = wall;
  checkpoint["converged"] = converged;
  checkpoint["wall_time_s"] = wall;

  out.json_file("instance.json", instance_to_json(inst));
  out.text("gap.csv", gap_csv(gap));
  out.json_file("checkpoint.json", checkpoint);
  out.json_file("summary.json", summary);

  std::ostringstream msg;
  msg << summary["hyperparams"]["label"].get<std::string>() << ' ' << to_string(cfg.setting)
      << " gap=" << format_double(gap.gap) << " converged=" << (converged ? "yes" : "no");
  result.message = msg.str();
  say(opts, result.message);
  if (!converged && !opts.allow_nonconverged) {
    result.exit_code = kNonConvergence;
    result.message += " (use --allow-nonconverged to accept)";
  }
  return result;
}

CommandResult cmd_sweep(const GlobalOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const Config cfg = load_config(opts);
  const SweepConfig& sw = cfg.sweep;
  if (sw.n_values.empty()) throw ValidationError("sweep.n_values: required");
  if (sw.seeds.empty()) throw ValidationError("sweep.seeds: required (or sweep.n_seeds)");
  std::vector<Setting> settings = sw.settings;
  if (opts.setting) settings = {*opts.setting};

  const std::vector<double> lambdas = sw.lambdas.empty() ? std::vector<double>{cfg.hp.lambda} : sw.lambdas;
  const std::vector<double> omegas = sw.omegas.empty() ? std::vector<double>{cfg.hp.omega} : sw.omegas;
  const std::vector<double> etas = sw.theorem_eta ? std::vector<double>{0.0}
                                   : (sw.etas.empty() ? std::vector<double>{cfg.hp.eta} : sw.etas);

  struct Group {
    Setting setting;
    RateTemplate tmpl;
    double g_on = 1.0;
  };
  std::vector<Group> groups;
  for (Setting setting : settings) {
    for (double lambda : lambdas) {
      for (double eta : etas) {
        for (double omega : omegas) {
          Group g{setting, {}, 1.0};
          g.tmpl.hp = cfg.hp;
          g.tmpl.hp.lambda = lambda;
          g.tmpl.hp.eta = eta;
          g.tmpl.hp.omega = omega;
          g.tmpl.theorem_eta = sw.theorem_eta;
          g.tmpl.delta = sw.delta;
          g.tmpl.corruption = cfg.corruption;
          g.tmpl.optimizer = cfg.optimizer;
          g.tmpl.online = cfg.online;
          g.tmpl.coverability_family = sw.coverability_family;
          g.tmpl.coverability_seed = cfg.seed;
          validate_hyperparams(g.tmpl.hp);
          if (setting == Setting::kOnline && sw.theorem_eta) {
            g.g_on = template_coverability(cfg.instance, g.tmpl);
          }
          groups.push_back(std::move(g));
        }
      }
    }
  }

  struct Cell {
    std::size_t group;
    std::size_t n;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t n : sw.n_values) {
      for (std::uint64_t seed : sw.seeds) cells.push_back({g, n, seed});
    }
  }
  std::vector<RateRow> rows(cells.size());
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      const Cell& c = cells[k];
      const Group& g = groups[c.group];
      try {
        rows[k] = run_rate_cell(cfg.instance, g.tmpl, c.n, c.seed, g.setting, g.g_on);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const unsigned workers =
      std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(cells.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  json failed = json::array();
  std::vector<std::vector<RateRow>> by_group(groups.size());
  std::vector<RateRow> ok_rows;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (!errors[k].empty()) {
      failed.push_back({{"group", cells[k].group}, {"n", cells[k].n}, {"seed", cells[k].seed},
                        {"error", errors[k]}});
      continue;
    }
    by_group[cells[k].group].push_back(rows[k]);
    ok_rows.push_back(rows[k]);
  }
  auto key = [](const RateRow& r) {
    return std::make_tuple(static_cast<int>(r.setting), r.n, r.seed, r.lambda, r.eta, r.omega);
  };
  std::stable_sort(ok_rows.begin(), ok_rows.end(),
                   [&](const RateRow& a, const RateRow& b) { return key(a) < key(b); });

  CommandResult result;
  Artifacts out(opts.out_dir, result);
  out.text("rates.csv", rates_csv(ok_rows));

  json summary;
  summary["instance_hash"] = instance_hash(cfg.instance);
  summary["corruption"] = corruption_to_json(cfg.corruption);
  summary["theorem_eta"] = sw.theorem_eta;
  summary["delta"] = sw.delta;
  summary["cells"] = cells.size();
  summary["failed_cells"] = failed;
  summary["groups"] = json::array();
  std::size_t nonconverged = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const RateResult rr = summarize_rates(by_group[g]);
    nonconverged += rr.nonconverged;
    json entry = rate_summary_json(rr);
    const Hyperparams& hp = groups[g].tmpl.hp;
    entry["setting"] = to_string(groups[g].setting);
    entry["label"] = preset_label(hp);
    entry["beta"] = hp.beta;
    entry["lambda"] = hp.lambda;
    entry["eta"] = sw.theorem_eta ? json("theorem") : json(hp.eta);
    entry["omega"] = hp.omega;
    if (groups[g].setting == Setting::kOnline && sw.theorem_eta) entry["g_on"] = groups[g].g_on;
    summary["groups"].push_back(entry);
  }
  summary["nonconverged"] = nonconverged;
  summary["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.json_file("summary.json", summary);

  std::ostringstream msg;
  msg << ok_rows.size() << " rows, " << failed.size() << " failed, " << nonconverged
      << " non-converged";
  for (const auto& g : summary["groups"]) {
    if (g["fitted"].get<bool>()) {
      msg << "\n  " << g["setting"].get<std::string>() << " lambda=" << format_double(g["lambda"].get<double>())
          << " omega=" << format_double(g["omega"].get<double>())
          << " slope=" << format_double(g["slope"].get<double>());
    }
  }
  result.message = msg.str();
  say(opts, result.message);
  if (!failed.empty() || (nonconverged > 0 && !opts.allow_nonconverged)) {
    result.exit_code = kNonConvergence;
  }
  return result;
}

CommandResult cmd_verify(const GlobalOptions& opts) {
  std::uint64_t seed = opts.seed.value_or(0);
  if (!opts.config_path.empty()) seed = load_config(opts).seed;
  const auto checks = run_verification(seed, opts.trials);
  bool all = true;
  json report;
  report["seed"] = seed;
  report["trials"] = opts.trials;
  report["checks"] = json::array();
  std::ostringstream table;
  table << std::left << std::setw(26) << "check" << std::setw(10) << "trials" << std::setw(12)
        << "violations" << std::setw(24) << "worst" << "result\n";
  for (const auto& c : checks) {
    all = all && c.passed;
    report["checks"].push_back(check_to_json(c));
    table << std::left << std::setw(26) << c.name << std::setw(10) << c.trials << std::setw(12)
          << c.violations << std::setw(24) << format_double(c.worst)
          << (c.passed ? "PASS" : "FAIL");
    if (!c.passed) table << "  " << c.witness;
    table << '\n';
  }
  report["all_passed"] = all;
  CommandResult result;
  Artifacts out(opts.out_dir, result);
  out.json_file("verify_report.json", report);
  result.message = table.str();
  if (!opts.quiet) std::cout << result.message;
  if (!all) result.exit_code = kVerificationFailure;
  return result;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"Corruption-robust, pessimism-regularised preference optimisation on tabular instances"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions opts;
  opts.threads = std::max(1u, std::thread::hardware_concurrency());
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string setting;
  app.add_option("--config", opts.config_path, "JSON config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed (overrides the config)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", opts.threads, "Worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("--allow-nonconverged", opts.allow_nonconverged,
               "Exit 0 even if an optimisation did not converge");

  auto* gen = app.add_subcommand("gen", "Generate an offline preference dataset");
  auto* train = app.add_subcommand("train", "Train one policy and report its generalization gap");
  train->add_option("--setting", setting, "offline or online")
      ->check(CLI::IsMember({"offline", "online"}));
  auto* sweep = app.add_subcommand("sweep", "Rate experiment over (n, seed) cells and hyperparameter grids");
  sweep->add_option("--setting", setting, "offline or online")
      ->check(CLI::IsMember({"offline", "online"}));
  auto* verify = app.add_subcommand("verify", "Run the closed-form and property checks");
  verify->add_option("--trials", opts.trials, "Randomised trials per check")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  if (*seed_opt) opts.seed = seed;
  opts.out_dir = out_dir;
  if (!setting.empty()) opts.setting = setting_from_string(setting);

  try {
    CommandResult result;
    if (*gen) result = cmd_gen(opts);
    if (*train) result = cmd_train(opts);
    if (*sweep) result = cmd_sweep(opts);
    if (*verify) result = cmd_verify(opts);
    if (result.exit_code != kOk && result.exit_code != kVerificationFailure) {
      std::cerr << "error: " << result.message << '\n';
    }
    return result.exit_code;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
}

}  // namespace dpocov::cli
