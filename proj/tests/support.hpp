#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "mcan/autograd.hpp"
#include "mcan/data.hpp"
#include "mcan/model.hpp"
#include "mcan/syngen.hpp"

namespace test {

inline mcan::GenConfig small_gen(std::uint64_t seed = 11) {
  mcan::GenConfig g;
  g.num_coarse = 2;
  g.fines_per_coarse = 2;
  g.items_per_fine = 8;
  g.num_outfits = 20;
  g.outfit_len = 3;
  g.style_dim = 2;
  g.d_img = 4;
  g.noise_sigma = 0.1;
  g.seed = seed;
  return g;
}

inline mcan::Dataset small_dataset(std::uint64_t seed = 11) { return mcan::generate(small_gen(seed)).first; }

inline mcan::ModelConfig small_model(const mcan::Dataset& ds, std::uint64_t seed = 5, bool use_cpl = true) {
  mcan::ModelConfig c = mcan::model_config_for(ds, 6);
  c.d_c = 3;
  c.hidden_a = 5;
  c.hidden_f = 5;
  c.hidden_s = 5;
  c.use_cpl = use_cpl;
  c.seed = seed;
  return c;
}

// Model with weights spread wider than the training init so that outputs
// are far from uniform and the oracles are exercised non-trivially.
inline mcan::McanParams random_params(const mcan::ModelConfig& cfg, std::uint64_t seed, double spread = 0.6) {
  mcan::McanParams p = mcan::McanParams::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  for (auto& [name, t] : p.named())
    for (auto& v : t->values()) v = u(rng);
  return p;
}

inline mcan::ag::Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0,
                                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(r * c);
  for (auto& x : v) x = u(rng);
  return mcan::ag::Tensor::matrix(r, c, std::move(v));
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

// Worst relative error between tape gradients and central differences (h =
// 1e-5) of `f` with respect to every entry of every tensor in `inputs`.
inline double max_fd_error(const std::vector<mcan::ag::Tensor*>& inputs,
                           const std::function<mcan::ag::Var(mcan::ag::Tape&)>& f) {
  mcan::ag::GradMap grads;
  {
    mcan::ag::Tape tape;
    grads = tape.backward(f(tape));
  }
  auto eval = [&] {
    mcan::ag::Tape tape;
    return f(tape).value()[0];
  };
  double worst = 0.0;
  const double h = 1e-5;
  for (mcan::ag::Tensor* t : inputs) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double orig = (*t)[i];
      (*t)[i] = orig + h;
      const double up = eval();
      (*t)[i] = orig - h;
      const double down = eval();
      (*t)[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.count(t) ? grads.at(t)[i] : 0.0;
      worst = std::max(worst, rel_error(analytic, numeric));
    }
  }
  return worst;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mcan_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace test
