#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace dpocov {

// Logistic function 1/(1+e^-z), evaluated without overflow for any finite z.
double sigmoid(double z);

// log sigma(z) = -log(1+e^-z).
double log_sigmoid(double z);

// log(1+e^z).
double softplus(double z);

// log sum_i exp(v_i); returns -inf for an empty span.
double log_sum_exp(std::span<const double> values);

// Pairwise (cascade) summation. The reduction tree depends only on the length
// of the input, so the result is reproducible bit-for-bit.
double pairwise_sum(std::span<const double> values);

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

std::string hex64(std::uint64_t v);

}  // namespace dpocov

namespace dpocov {

// Neumaier compensated accumulator.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace dpocov
