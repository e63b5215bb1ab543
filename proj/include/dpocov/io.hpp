#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpocov/analysis.hpp"
#include "dpocov/datagen.hpp"
#include "dpocov/training.hpp"
#include "json.hpp"

namespace dpocov {

// All CSV writers emit a header row, a fixed column order and shortest
// round-trip decimal numbers.

void write_dataset_csv(std::ostream& os, const PreferenceDataset& data);
std::string dataset_csv(const PreferenceDataset& data);

// Reads a file written by write_dataset_csv. Generator settings are not in the
// CSV; pass them via `corruption` and `seed` (they live in the sidecar JSON).
PreferenceDataset read_dataset_csv(std::istream& is, const Instance& inst);

// Sidecar metadata: instance hash, seed, corruption settings, row count.
nlohmann::json dataset_sidecar(const PreferenceDataset& data, const Instance& inst);

std::string offline_trace_csv(const TrainReport& report);
std::string online_trace_csv(const OnlineResult& result);

inline constexpr const char* kRatesHeader =
    "setting,n,seed,lambda,eta,omega,beta,corrupt_frac,noise_mag,xi_l1,gap,j_opt,j_hat,"
    "kl_to_ref,avg_len,converged";
std::string rates_csv(const std::vector<RateRow>& rows);

nlohmann::json gap_json(const GapReport& gap);
nlohmann::json rate_summary_json(const RateResult& result);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace dpocov
