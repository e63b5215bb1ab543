#include "dpocov/io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include "dpocov/numerics.hpp"

namespace dpocov {

namespace {

const char* kDatasetHeader = "i,prompt,winner,loser,label,hidden_first,hidden_second,hidden_noise";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_field(const std::string& text, std::size_t line_no, const char* column) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("dataset csv line " + std::to_string(line_no) + ": bad " + column +
                          " '" + text + "'");
  }
  return value;
}

}  // namespace

void write_dataset_csv(std::ostream& os, const PreferenceDataset& data) {
  os << kDatasetHeader << '\n';
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    os << i << ',' << s.prompt << ',' << s.winner << ',' << s.loser << ',' << s.label << ','
       << s.hidden_first << ',' << s.hidden_second << ',' << format_double(s.hidden_noise) << '\n';
  }
}

std::string dataset_csv(const PreferenceDataset& data) {
  std::ostringstream os;
  write_dataset_csv(os, data);
  return os.str();
}

PreferenceDataset read_dataset_csv(std::istream& is, const Instance& inst) {
  PreferenceDataset data;
  std::string line;
  if (!std::getline(is, line) || line != kDatasetHeader) {
    throw ValidationError("dataset csv line 1: expected header '" + std::string(kDatasetHeader) + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) {
      throw ValidationError("dataset csv line " + std::to_string(line_no) + ": expected 8 fields");
    }
    PreferenceSample s;
    s.prompt = parse_field<std::size_t>(f[1], line_no, "prompt");
    s.winner = parse_field<std::size_t>(f[2], line_no, "winner");
    s.loser = parse_field<std::size_t>(f[3], line_no, "loser");
    s.label = parse_field<int>(f[4], line_no, "label");
    s.hidden_first = parse_field<std::size_t>(f[5], line_no, "hidden_first");
    s.hidden_second = parse_field<std::size_t>(f[6], line_no, "hidden_second");
    s.hidden_noise = parse_field<double>(f[7], line_no, "hidden_noise");
    const std::string where = "dataset csv line " + std::to_string(line_no) + ": ";
    if (s.prompt >= inst.n_prompts) throw ValidationError(where + "prompt out of range");
    for (std::size_t a : {s.winner, s.loser, s.hidden_first, s.hidden_second}) {
      if (a >= inst.n_responses) throw ValidationError(where + "response out of range");
    }
    if (s.label != 1 && s.label != -1) throw ValidationError(where + "label must be +1 or -1");
    if (make_sample(s.prompt, s.hidden_first, s.hidden_second, s.label, s.hidden_noise) != s) {
      throw ValidationError(where + "winner/loser inconsistent with label");
    }
    data.samples.push_back(s);
  }
  return data;
}

nlohmann::json dataset_sidecar(const PreferenceDataset& data, const Instance& inst) {
  nlohmann::json j;
  j["instance_hash"] = instance_hash(inst);
  j["seed"] = data.seed;
  j["n"] = data.size();
  j["corruption"] = corruption_to_json(data.corruption);
  j["noise_l1"] = data.noise_l1();
  j["dataset_hash"] = hex64(fnv1a64(dataset_csv(data)));
  return j;
}

std::string offline_trace_csv(const TrainReport& report) {
  std::ostringstream os;
  os << "iteration,loss,grad_norm\n";
  for (std::size_t k = 0; k < report.loss_trace.size(); ++k) {
    os << k << ',' << format_double(report.loss_trace[k]) << ','
       << format_double(report.grad_norm_trace[k]) << '\n';
  }
  return os.str();
}

std::string online_trace_csv(const OnlineResult& result) {
  std::ostringstream os;
  os << "t,prompt,first,second,label,noise,j_value,loss,grad_norm,inner_iterations,converged\n";
  for (const auto& s : result.trace) {
    os << s.t << ',' << s.prompt << ',' << s.first << ',' << s.second << ',' << s.label << ','
       << format_double(s.noise) << ',' << format_double(s.j_value) << ','
       << format_double(s.loss) << ',' << format_double(s.grad_norm) << ','
       << s.inner_iterations << ',' << (s.converged ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string rates_csv(const std::vector<RateRow>& rows) {
  std::ostringstream os;
  os << kRatesHeader << '\n';
  for (const auto& r : rows) {
    os << to_string(r.setting) << ',' << r.n << ',' << r.seed << ',' << format_double(r.lambda)
       << ',' << format_double(r.eta) << ',' << format_double(r.omega) << ','
       << format_double(r.beta) << ',' << format_double(r.corrupt_frac) << ','
       << format_double(r.noise_mag) << ',' << format_double(r.xi_l1) << ','
       << format_double(r.gap) << ',' << format_double(r.j_opt) << ','
       << format_double(r.j_hat) << ',' << format_double(r.kl_to_ref) << ','
       << format_double(r.avg_len) << ',' << (r.converged ? 1 : 0) << '\n';
  }
  return os.str();
}

nlohmann::json gap_json(const GapReport& gap) {
  return {{"j_opt", gap.j_opt},
          {"j_hat", gap.j_hat},
          {"gap", gap.gap},
          {"kl_to_ref", gap.kl_to_ref},
          {"expected_len", gap.expected_len}};
}

nlohmann::json rate_summary_json(const RateResult& result) {
  nlohmann::json j;
  j["fitted"] = result.fitted;
  j["slope"] = result.fitted ? nlohmann::json(result.slope) : nlohmann::json(nullptr);
  j["intercept"] = result.fitted ? nlohmann::json(result.intercept) : nlohmann::json(nullptr);
  j["nonconverged"] = result.nonconverged;
  j["points"] = nlohmann::json::array();
  for (const auto& p : result.points) {
    j["points"].push_back(
        {{"n", p.n}, {"count", p.count}, {"mean_gap", p.mean_gap}, {"se_gap", p.se_gap}});
  }
  return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dpocov
