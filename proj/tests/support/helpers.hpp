#pragma once

// Small fixtures shared by the unit test suites.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "selectfusion/nn.hpp"
#include "selectfusion/random.hpp"
#include "selectfusion/tensor.hpp"

namespace selectfusion::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

/// Fixed pseudo-random linear functional, so gradient checks exercise every
/// output element with a distinct weight.
inline Tensor weighted(const Tensor& t) {
  std::vector<double> w(t.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  return sum(mul(t, Tensor(t.shape(), std::move(w))));
}

/// Store parameters in name order as plain tensors, for use as check inputs.
struct Packed {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
};

inline Packed pack(const ParameterStore& store) {
  Packed p;
  for (const auto& [name, param] : store.entries()) {
    p.names.push_back(name);
    p.tensors.emplace_back(param.shape, param.value);
  }
  return p;
}

inline Bindings unpack(const std::vector<std::string>& names, const std::vector<Tensor>& xs) {
  Bindings b;
  for (std::size_t i = 0; i < names.size(); ++i) b.set(names[i], xs[i]);
  return b;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("selectfusion_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace selectfusion::testing
