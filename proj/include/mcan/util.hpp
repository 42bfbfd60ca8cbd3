#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace mcan {

// 17 significant digits: exact round-trip for IEEE-754 binary64.
std::string format_real(double v);

std::vector<std::string_view> split_ws(std::string_view line);
double parse_real(std::string_view tok);
std::int64_t parse_int(std::string_view tok);
std::size_t parse_index(std::string_view tok);

// Labeled sub-seed derivation: FNV-1a of the label mixed into the parent via
// splitmix64, so adding a new stage never perturbs the seeds of older ones.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  // Uniform in [0, n).
  std::size_t index(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mcan
