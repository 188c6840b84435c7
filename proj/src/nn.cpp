#include "selectfusion/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace selectfusion {

const Tensor& Bindings::operator[](const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorCode::InvalidConfig, "no parameter named '" + name + "'");
  return it->second;
}

void ParameterStore::add(const std::string& name, Shape shape, std::vector<double> value, bool trainable) {
  if (params_.count(name) != 0) throw Error(ErrorCode::InvalidConfig, "duplicate parameter '" + name + "'");
  if (numel(shape) != value.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter '" + name + "' shape " + shape_str(shape) + " vs " +
                                              std::to_string(value.size()) + " values");
  }
  Parameter p;
  p.m.assign(value.size(), 0.0);
  p.v.assign(value.size(), 0.0);
  p.shape = std::move(shape);
  p.value = std::move(value);
  p.trainable = trainable;
  params_.emplace(name, std::move(p));
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::InvalidConfig, "no parameter named '" + name + "'");
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::InvalidConfig, "no parameter named '" + name + "'");
  return it->second;
}

Bindings ParameterStore::bind(Tape* tape) const {
  Bindings b;
  for (const auto& [name, p] : params_) {
    Tensor t(p.shape, p.value);
    b.set(name, (tape != nullptr && p.trainable) ? tape->watch(t) : t);
  }
  return b;
}

GradientMap ParameterStore::gradients(const Tape& tape, const Bindings& bindings) const {
  GradientMap out;
  for (const auto& [name, p] : params_) {
    if (!p.trainable) continue;
    const Tensor& t = bindings[name];
    if (t.tracked_by(&tape)) out.emplace(name, tape.grad(t));
  }
  return out;
}

void ParameterStore::fill_trainable(double value) {
  for (auto& [name, p] : params_) {
    if (p.trainable) std::fill(p.value.begin(), p.value.end(), value);
  }
}

std::vector<double> uniform_init(std::size_t count, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(count);
  for (auto& x : v) x = dist(rng);
  return v;
}

// --- layers ----------------------------------------------------------------

void Linear::declare(ParameterStore& store, Rng& rng) const {
  store.add(name + ".w", {in, out}, uniform_init(in * out, in, rng));
  store.add(name + ".b", {out}, uniform_init(out, in, rng));
}

Tensor Linear::forward(const Bindings& p, const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in) {
    throw Error(ErrorCode::ShapeMismatch, name + " expects [N, " + std::to_string(in) + "], got " + shape_str(x.shape()));
  }
  return add(matmul(x, p[name + ".w"]), p[name + ".b"]);
}

std::vector<Linear> FeedForwardEncoder::layers() const {
  std::vector<Linear> out;
  std::size_t prev = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    out.push_back({name + ".fc" + std::to_string(i), prev, hidden[i]});
    prev = hidden[i];
  }
  out.push_back({name + ".out", prev, output_dim});
  return out;
}

void FeedForwardEncoder::declare(ParameterStore& store, Rng& rng) const {
  for (const auto& layer : layers()) layer.declare(store, rng);
}

Tensor FeedForwardEncoder::forward(const Bindings& p, const Tensor& x) const {
  const auto ls = layers();
  Tensor h = x;
  for (std::size_t i = 0; i < ls.size(); ++i) {
    h = ls[i].forward(p, h);
    if (i + 1 < ls.size() || relu_output) h = relu(h);
  }
  return h;
}

HiddenState HiddenState::zeros(std::size_t rows, std::size_t hidden) {
  return {Tensor::zeros({rows, hidden}), Tensor::zeros({rows, hidden})};
}

void LstmCell::declare(ParameterStore& store, Rng& rng) const {
  store.add(name + ".wx", {input, 4 * hidden}, uniform_init(input * 4 * hidden, hidden, rng));
  store.add(name + ".wh", {hidden, 4 * hidden}, uniform_init(hidden * 4 * hidden, hidden, rng));
  store.add(name + ".b", {4 * hidden}, uniform_init(4 * hidden, hidden, rng));
}

HiddenState LstmCell::step(const Bindings& p, const Tensor& x, const HiddenState& state) const {
  if (x.rank() != 2 || x.dim(1) != input) {
    throw Error(ErrorCode::ShapeMismatch, name + " expects [N, " + std::to_string(input) + "], got " + shape_str(x.shape()));
  }
  const Tensor gates = add(add(matmul(x, p[name + ".wx"]), matmul(state.h, p[name + ".wh"])), p[name + ".b"]);
  const Tensor i = sigmoid(slice(gates, 0, hidden, 1));
  const Tensor f = sigmoid(slice(gates, hidden, 2 * hidden, 1));
  const Tensor g = tanh(slice(gates, 2 * hidden, 3 * hidden, 1));
  const Tensor o = sigmoid(slice(gates, 3 * hidden, 4 * hidden, 1));
  const Tensor c = add(mul(f, state.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

LstmCell BiLstmEncoder::forward_cell(std::size_t layer) const {
  return {name + ".fw" + std::to_string(layer), layer == 0 ? input_dim : 2 * hidden, hidden};
}

LstmCell BiLstmEncoder::backward_cell(std::size_t layer) const {
  return {name + ".bw" + std::to_string(layer), layer == 0 ? input_dim : 2 * hidden, hidden};
}

Linear BiLstmEncoder::projection() const { return {name + ".proj", 2 * hidden, output_dim}; }

void BiLstmEncoder::declare(ParameterStore& store, Rng& rng) const {
  for (std::size_t l = 0; l < layers; ++l) {
    forward_cell(l).declare(store, rng);
    backward_cell(l).declare(store, rng);
  }
  projection().declare(store, rng);
}

Tensor BiLstmEncoder::forward(const Bindings& p, const std::vector<Tensor>& window) const {
  if (window.empty()) throw Error(ErrorCode::EmptyWindow, name + " received an empty window");
  const std::size_t rows = window.front().dim(0);
  std::vector<Tensor> seq = window;
  Tensor features;
  for (std::size_t l = 0; l < layers; ++l) {
    const LstmCell fw = forward_cell(l);
    const LstmCell bw = backward_cell(l);
    std::vector<Tensor> fw_out(seq.size());
    std::vector<Tensor> bw_out(seq.size());
    HiddenState sf = HiddenState::zeros(rows, hidden);
    HiddenState sb = HiddenState::zeros(rows, hidden);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      sf = fw.step(p, seq[t], sf);
      fw_out[t] = sf.h;
      const std::size_t r = seq.size() - 1 - t;
      sb = bw.step(p, seq[r], sb);
      bw_out[r] = sb.h;
    }
    if (l + 1 == layers) {
      features = concat(sf.h, sb.h, 1);
    } else {
      for (std::size_t t = 0; t < seq.size(); ++t) seq[t] = concat(fw_out[t], bw_out[t], 1);
    }
  }
  return projection().forward(p, features);
}

LstmCell TemporalModel::cell() const { return {name + ".lstm", input_dim, hidden}; }
Linear TemporalModel::regressor() const { return {name + ".regressor", hidden, output_dim}; }

void TemporalModel::declare(ParameterStore& store, Rng& rng) const {
  cell().declare(store, rng);
  regressor().declare(store, rng);
}

Tensor TemporalModel::step(const Bindings& p, const Tensor& z, HiddenState& state) const {
  state = cell().step(p, z, state);
  return regressor().forward(p, state.h);
}

// --- optimizer -------------------------------------------------------------

void adam_step(ParameterStore& store, const GradientMap& grads, const AdamConfig& cfg) {
  for (const auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    auto it = grads.find(name);
    if (it == grads.end()) throw Error(ErrorCode::MissingGradient, "no gradient for '" + name + "'");
    if (it->second.size() != p.value.size()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient for '" + name + "' has " + std::to_string(it->second.size()) +
                                                " values, parameter has " + std::to_string(p.value.size()));
    }
  }
  for (auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    const auto& g = grads.at(name);
    ++p.step;
    const double t = static_cast<double>(p.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = p.m[i] / c1;
      const double v_hat = p.v[i] / c2;
      p.value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

// --- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes() {
    const auto n = u32();
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::BadFormat, "checkpoint truncated");
    std::string_view v(data_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.bytes(ckpt.header);
  w.u32(static_cast<std::uint32_t>(ckpt.store.size()));
  for (const auto& [name, p] : ckpt.store.entries()) {
    w.bytes(name);
    w.u8(p.trainable ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.u64(d);
    w.u64(p.step);
    for (double v : p.value) w.f64(v);
    for (double v : p.m) w.f64(v);
    for (double v : p.v) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write checkpoint " + path.string());
  out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (std::memcmp(r.take(8).data(), kMagic, 8) != 0) throw Error(ErrorCode::BadFormat, path.string() + " is not a checkpoint");
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    throw Error(ErrorCode::BadFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.header = r.bytes();
  const auto count = r.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string name = r.bytes();
    const bool trainable = r.u8() != 0;
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    const std::uint64_t step = r.u64();
    const std::size_t n = numel(shape);
    std::vector<double> value(n);
    for (auto& v : value) v = r.f64();
    ckpt.store.add(name, shape, std::move(value), trainable);
    auto& p = ckpt.store.at(name);
    for (auto& v : p.m) v = r.f64();
    for (auto& v : p.v) v = r.f64();
    p.step = step;
  }
  if (!r.done()) throw Error(ErrorCode::BadFormat, "trailing bytes in checkpoint " + path.string());
  return ckpt;
}

}  // namespace selectfusion
