#include <sstream>

#include "doctest.h"
#include "dpocov/io.hpp"
#include "dpocov/numerics.hpp"
#include "fixtures.hpp"

using namespace dpocov;

namespace {

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

std::string message_of(const std::string& csv, const Instance& inst) {
  std::istringstream in(csv);
  try {
    read_dataset_csv(in, inst);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("dataset csv round trip") {
  const Instance inst = make_random_instance(2, 3, 1.0, 1);
  const auto data = generate_offline_dataset(inst, 50, {0.3, 1.25, NoiseSign::kRandomSign}, 4);
  const std::string csv = dataset_csv(data);
  CHECK(csv.rfind("i,prompt,winner,loser,label,hidden_first,hidden_second,hidden_noise\n", 0) == 0);
  CHECK(count_lines(csv) == 51);
  std::istringstream in(csv);
  auto back = read_dataset_csv(in, inst);
  back.corruption = data.corruption;
  back.seed = data.seed;
  CHECK(back == data);
}

TEST_CASE("dataset csv rejects malformed rows with the line number") {
  const Instance inst = fixtures::two_arm(1.0, 0.0);
  const std::string header = "i,prompt,winner,loser,label,hidden_first,hidden_second,hidden_noise\n";
  CHECK(message_of("nope\n", inst).find("line 1") != std::string::npos);
  CHECK(message_of(header + "0,0,0,1,1,0,1,0\n0,0,1\n", inst).find("line 3") != std::string::npos);
  CHECK(message_of(header + "0,0,0,5,1,0,5,0\n", inst).find("out of range") != std::string::npos);
  CHECK(message_of(header + "0,0,0,1,2,0,1,0\n", inst).find("label") != std::string::npos);
  CHECK(message_of(header + "0,0,1,0,1,0,1,0\n", inst).find("inconsistent") != std::string::npos);
  CHECK(message_of(header + "0,0,0,1,1,0,1,abc\n", inst).find("line 2") != std::string::npos);
  CHECK(message_of(header + "0,0,0,1,1,0,1,0.5\n", inst).empty());
}

TEST_CASE("sidecar identifies the data") {
  const Instance inst = make_random_instance(2, 3, 1.0, 1);
  const auto a = generate_offline_dataset(inst, 20, {}, 1);
  const auto b = generate_offline_dataset(inst, 20, {}, 2);
  const auto ja = dataset_sidecar(a, inst), jb = dataset_sidecar(b, inst);
  CHECK(ja["n"] == 20);
  CHECK(ja["instance_hash"] == instance_hash(inst));
  CHECK(ja["dataset_hash"] != jb["dataset_hash"]);
  CHECK(ja["dataset_hash"] == dataset_sidecar(a, inst)["dataset_hash"]);
}

TEST_CASE("trace and rate csv headers") {
  TrainReport rep;
  rep.loss_trace = {1.0, 0.5};
  rep.grad_norm_trace = {0.1, 1e-9};
  const std::string trace = offline_trace_csv(rep);
  CHECK(trace.rfind("iteration,loss,grad_norm\n", 0) == 0);
  CHECK(count_lines(trace) == 3);

  RateRow row;
  row.n = 64;
  row.gap = 0.1;
  row.converged = true;
  const std::string rates = rates_csv({row, row});
  CHECK(rates.rfind(std::string(kRatesHeader) + "\n", 0) == 0);
  CHECK(count_lines(rates) == 3);
  CHECK(rates.find(",0.1,") != std::string::npos);
}

TEST_CASE("text files create their directory") {
  const auto dir = fixtures::scratch_dir("io");
  const auto path = dir / "a" / "b" / "x.txt";
  write_text_file(path, "hello\n");
  CHECK(read_text_file(path) == "hello\n");
  CHECK_THROWS_AS(read_text_file(dir / "missing.txt"), ValidationError);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
