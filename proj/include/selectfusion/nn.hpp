#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "selectfusion/random.hpp"
#include "selectfusion/tensor.hpp"

namespace selectfusion {

struct Parameter {
  Shape shape;
  std::vector<double> value;
  // Adam state.
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  /// Fixed statistics (input scales) live in the store but Adam skips them.
  bool trainable = true;
};

/// Parameter tensors for one forward pass, linked to a tape when training.
class Bindings {
 public:
  const Tensor& operator[](const std::string& name) const;
  void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
  const std::map<std::string, Tensor>& all() const { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

using GradientMap = std::map<std::string, std::vector<double>>;

/// Named parameters, iterated in name order so every traversal is
/// deterministic.
class ParameterStore {
 public:
  void add(const std::string& name, Shape shape, std::vector<double> value, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  const std::map<std::string, Parameter>& entries() const { return params_; }
  std::map<std::string, Parameter>& entries() { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Trainable parameters become tape leaves when `tape` is non-null.
  Bindings bind(Tape* tape) const;
  /// Gradients of every trainable parameter bound in `bindings`.
  GradientMap gradients(const Tape& tape, const Bindings& bindings) const;

  /// Sets every trainable value to `value` (zero-init experiments).
  void fill_trainable(double value);

 private:
  std::map<std::string, Parameter> params_;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
std::vector<double> uniform_init(std::size_t count, std::size_t fan_in, Rng& rng);

struct Linear {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;

  void declare(ParameterStore& store, Rng& rng) const;
  /// x: [N, in] -> [N, out]
  Tensor forward(const Bindings& p, const Tensor& x) const;
};

/// Stand-in for a convolutional visual encoder: relu MLP ending in a linear
/// layer of width `output_dim` (optionally relu'd).
struct FeedForwardEncoder {
  std::string name;
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;
  bool relu_output = false;

  std::vector<Linear> layers() const;
  void declare(ParameterStore& store, Rng& rng) const;
  Tensor forward(const Bindings& p, const Tensor& x) const;
};

struct HiddenState {
  Tensor h;
  Tensor c;

  static HiddenState zeros(std::size_t rows, std::size_t hidden);
  HiddenState detach() const { return {h.detach(), c.detach()}; }
};

/// LSTM cell. Gate blocks in the fused weight matrices are ordered
/// (input, forget, cell, output); checkpoints depend on this order.
struct LstmCell {
  std::string name;
  std::size_t input = 0;
  std::size_t hidden = 0;

  void declare(ParameterStore& store, Rng& rng) const;
  HiddenState step(const Bindings& p, const Tensor& x, const HiddenState& state) const;
};

/// Bidirectional LSTM over a window of samples; the final forward and
/// final backward hidden states are concatenated and projected to
/// `output_dim`.
struct BiLstmEncoder {
  std::string name;
  std::size_t input_dim = 6;
  std::size_t hidden = 32;
  std::size_t layers = 1;
  std::size_t output_dim = 64;

  LstmCell forward_cell(std::size_t layer) const;
  LstmCell backward_cell(std::size_t layer) const;
  Linear projection() const;
  void declare(ParameterStore& store, Rng& rng) const;
  /// window[t] is [N, input_dim] for sample t of the window.
  Tensor forward(const Bindings& p, const std::vector<Tensor>& window) const;
};

/// Recurrent temporal model followed by the fully-connected regressor.
struct TemporalModel {
  std::string name;
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::size_t output_dim = 6;

  LstmCell cell() const;
  Linear regressor() const;
  void declare(ParameterStore& store, Rng& rng) const;
  /// Returns the raw output [N, output_dim]; `state` is advanced in place.
  Tensor step(const Bindings& p, const Tensor& z, HiddenState& state) const;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every trainable parameter.
void adam_step(ParameterStore& store, const GradientMap& grads, const AdamConfig& cfg);

// Checkpoint archive, little-endian:
//   8 bytes  magic "SFCKPT\0\0"
//   u32      version (1)
//   u32 n, n bytes   free-form header text (the experiment config)
//   u32      entry count, then per entry in name order:
//     u32 n, n bytes name | u8 trainable | u32 rank | u64 dims[rank]
//     u64 adam step | f64 value[numel] | f64 m[numel] | f64 v[numel]
struct Checkpoint {
  std::string header;
  ParameterStore store;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace selectfusion
