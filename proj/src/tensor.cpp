#include "selectfusion/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "selectfusion/kernels.hpp"

namespace selectfusion {

namespace {

thread_local bool t_checked = true;
thread_local Tape* t_tape = nullptr;

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw Error(ErrorCode::ShapeMismatch, "rank must be 1..3, got " + shape_str(shape));
  }
  for (auto extent : shape) {
    if (extent == 0) throw Error(ErrorCode::ShapeMismatch, "zero extent in " + shape_str(shape));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch,
              std::string(op) + " got " + shape_str(a) + " and " + shape_str(b));
}

Tape* recording(std::initializer_list<const Tensor*> inputs) {
  if (t_tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->tracked_by(t_tape)) return t_tape;
  }
  return nullptr;
}

// Extents of a tensor split around `axis`: [outer, extent, inner].
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Broadcast bookkeeping, padded to rank 3 from the left.
struct Broadcast {
  Shape out;
  std::array<std::size_t, 3> ext{};
  std::array<std::size_t, 3> stride_a{};
  std::array<std::size_t, 3> stride_b{};
  bool same = false;
};

std::array<std::size_t, 3> padded(const Shape& s) {
  std::array<std::size_t, 3> p{1, 1, 1};
  const std::size_t off = 3 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) p[off + i] = s[i];
  return p;
}

std::array<std::size_t, 3> strides_for(const std::array<std::size_t, 3>& dims,
                                       const std::array<std::size_t, 3>& ext) {
  std::array<std::size_t, 3> st{};
  std::size_t running = 1;
  for (int i = 2; i >= 0; --i) {
    const auto u = static_cast<std::size_t>(i);
    st[u] = (dims[u] == 1 && ext[u] != 1) ? 0 : running;
    running *= dims[u];
  }
  return st;
}

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const auto pa = padded(a);
  const auto pb = padded(b);
  for (std::size_t i = 0; i < 3; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) mismatch(op, a, b);
    bc.ext[i] = std::max(pa[i], pb[i]);
  }
  const std::size_t rank = std::max(a.size(), b.size());
  bc.out.assign(bc.ext.begin() + static_cast<std::ptrdiff_t>(3 - rank), bc.ext.end());
  bc.stride_a = strides_for(pa, bc.ext);
  bc.stride_b = strides_for(pb, bc.ext);
  return bc;
}

template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t i = 0; i < bc.ext[0]; ++i) {
    for (std::size_t j = 0; j < bc.ext[1]; ++j) {
      for (std::size_t k = 0; k < bc.ext[2]; ++k, ++o) {
        const std::size_t ia = i * bc.stride_a[0] + j * bc.stride_a[1] + k * bc.stride_a[2];
        const std::size_t ib = i * bc.stride_b[0] + j * bc.stride_b[1] + k * bc.stride_b[2];
        fn(o, ia, ib);
      }
    }
  }
}

// Shared skeleton for broadcasting binary ops. `fwd(x, y)` is the value,
// `da(x, y, g)` / `db(x, y, g)` the contributions to each input's gradient.
template <typename Fwd, typename Da, typename Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const Broadcast bc = broadcast(name, a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(numel(bc.out));
  if (bc.same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(av[ia], bv[ib]); });
  }
  Tensor result(bc.out, std::move(out));
  Tape* tape = recording({&a, &b});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a, &b},
                      [a, b, bc, da, db](std::span<const double> g, std::span<double* const> grads) {
                        const auto x = a.data();
                        const auto y = b.data();
                        double* ga = grads[0];
                        double* gb = grads[1];
                        if (bc.same) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (ga != nullptr) ga[i] += da(x[i], y[i], g[i]);
                            if (gb != nullptr) gb[i] += db(x[i], y[i], g[i]);
                          }
                          return;
                        }
                        for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                          if (ga != nullptr) ga[ia] += da(x[ia], y[ib], g[o]);
                          if (gb != nullptr) gb[ib] += db(x[ia], y[ib], g[o]);
                        });
                      });
}

// Unary op: forward through the kernel, `dfn(x, y)` gives dy/dx.
template <typename Dfn>
Tensor unary(kernels::Unary op, const Tensor& a, Dfn dfn) {
  std::vector<double> out(a.size());
  kernels::map_unary(op, a.data(), out);
  Tensor result(a.shape(), std::move(out));
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  Tensor y = result;
  return tape->record(std::move(result), {&a},
                      [a, y, dfn](std::span<const double> g, std::span<double* const> grads) {
                        const auto x = a.data();
                        const auto yv = y.data();
                        for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * dfn(x[i], yv[i]);
                      });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool checked_mode() { return t_checked; }
void set_checked_mode(bool on) { t_checked = on; }

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (numel(shape_) != data.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "shape " + shape_str(shape_) + " needs " + std::to_string(numel(shape_)) +
                    " values, got " + std::to_string(data.size()));
  }
  if (t_checked) {
    for (double v : data) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite value in tensor " + shape_str(shape_));
    }
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  validate_shape(shape);
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::NotScalar, "item() on " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  return t;
}

// --- tape ------------------------------------------------------------------

Tensor Tape::watch(const Tensor& value) {
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{t.shape_, {}, {}});
  return t;
}

Tensor Tape::record(Tensor output, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  Node node{output.shape_, {}, std::move(fn)};
  node.parents.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    node.parents.push_back(in->tracked_by(this) ? std::optional<std::size_t>(in->node_) : std::nullopt);
  }
  output.tape_ = this;
  output.node_ = nodes_.size();
  nodes_.push_back(std::move(node));
  return output;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw Error(ErrorCode::NotScalar, "backward() needs a single-element loss, got " + shape_str(loss.shape()));
  if (!loss.tracked_by(this)) throw Error(ErrorCode::NotOnTape, "loss is not recorded on this tape");

  std::vector<std::vector<double>> work(nodes_.size());
  work[loss.node_].assign(1, 1.0);
  std::vector<double*> ptrs;
  for (std::size_t id = loss.node_ + 1; id-- > 0;) {
    if (work[id].empty()) continue;
    const Node& node = nodes_[id];
    if (!node.backward) continue;
    ptrs.clear();
    for (const auto& parent : node.parents) {
      if (!parent) {
        ptrs.push_back(nullptr);
        continue;
      }
      auto& buf = work[*parent];
      if (buf.empty()) buf.assign(numel(nodes_[*parent].shape), 0.0);
      ptrs.push_back(buf.data());
    }
    node.backward(work[id], ptrs);
  }

  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  for (std::size_t id = 0; id < work.size(); ++id) {
    if (work[id].empty()) continue;
    auto& acc = grads_[id];
    if (acc.empty()) {
      acc = std::move(work[id]);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += work[id][i];
    }
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (!t.tracked_by(this)) throw Error(ErrorCode::NotOnTape, "tensor is not recorded on this tape");
  if (t.node_ < grads_.size() && !grads_[t.node_].empty()) return grads_[t.node_];
  return std::vector<double>(t.size(), 0.0);
}

bool Tape::has_grad(const Tensor& t) const {
  return t.tracked_by(this) && t.node_ < grads_.size() && !grads_[t.node_].empty();
}

void Tape::zero_grad() { grads_.clear(); }

Tape* active_tape() { return t_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(t_tape) { t_tape = &tape; }
TapeScope::~TapeScope() { t_tape = previous_; }

// --- primitives ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm(a.data(), b.data(), out, m, k, n, kernels::Trans::No, kernels::Trans::No, false);
  Tensor result({m, n}, std::move(out));
  Tape* tape = recording({&a, &b});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a, &b},
                      [a, b, m, k, n](std::span<const double> g, std::span<double* const> grads) {
                        using kernels::Trans;
                        if (grads[0] != nullptr) {
                          kernels::gemm(g, b.data(), {grads[0], m * k}, m, n, k, Trans::No, Trans::Yes, true);
                        }
                        if (grads[1] != nullptr) {
                          kernels::gemm(a.data(), g, {grads[1], k * n}, k, m, n, Trans::Yes, Trans::No, true);
                        }
                      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double g) { return g / y; },
      [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Tensor result(a.shape(), std::move(out));
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a}, [factor](std::span<const double> g, std::span<double* const> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + offset;
  Tensor result(a.shape(), std::move(out));
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a}, [](std::span<const double> g, std::span<double* const> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
  });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank()) mismatch("concat", a.shape(), b.shape());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) mismatch("concat", a.shape(), b.shape());
  }
  const AxisSplit sa = split_at(a.shape(), axis);
  const AxisSplit sb = split_at(b.shape(), axis);
  const std::size_t row_a = sa.extent * sa.inner;
  const std::size_t row_b = sb.extent * sb.inner;
  Shape shape = a.shape();
  shape[axis] = sa.extent + sb.extent;
  std::vector<double> out(numel(shape));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * row_a), row_a,
                out.begin() + static_cast<std::ptrdiff_t>(o * (row_a + row_b)));
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(o * row_b), row_b,
                out.begin() + static_cast<std::ptrdiff_t>(o * (row_a + row_b) + row_a));
  }
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = recording({&a, &b});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a, &b},
                      [outer = sa.outer, row_a, row_b](std::span<const double> g, std::span<double* const> grads) {
                        for (std::size_t o = 0; o < outer; ++o) {
                          const double* src = g.data() + o * (row_a + row_b);
                          if (grads[0] != nullptr) {
                            for (std::size_t i = 0; i < row_a; ++i) grads[0][o * row_a + i] += src[i];
                          }
                          if (grads[1] != nullptr) {
                            for (std::size_t i = 0; i < row_b; ++i) grads[1][o * row_b + i] += src[row_a + i];
                          }
                        }
                      });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end, std::size_t axis) {
  if (axis >= a.rank() || begin >= end || end > a.dim(axis)) {
    throw Error(ErrorCode::ShapeMismatch, "slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                                              ") on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const AxisSplit s = split_at(a.shape(), axis);
  const std::size_t len = end - begin;
  Shape shape = a.shape();
  shape[axis] = len;
  std::vector<double> out(numel(shape));
  const auto x = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((o * s.extent + begin) * s.inner), len * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner));
  }
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a}, [s, begin, len](std::span<const double> g, std::span<double* const> grads) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = grads[0] + (o * s.extent + begin) * s.inner;
      const double* src = g.data() + o * len * s.inner;
      for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  validate_shape(shape);
  if (numel(shape) != a.size()) mismatch("reshape", a.shape(), shape);
  Tensor result(std::move(shape), a.to_vector());
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a}, [](std::span<const double> g, std::span<double* const> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary(kernels::Unary::Sigmoid, a, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(kernels::Unary::Tanh, a, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(kernels::Unary::Relu, a, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(kernels::Unary::Exp, a, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(kernels::Unary::Log, a, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(kernels::Unary::Sqrt, a, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
  return unary(kernels::Unary::Abs, a, [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(kernels::Unary::Square, a, [](double x, double) { return 2.0 * x; });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw Error(ErrorCode::ShapeMismatch, "softmax axis " + std::to_string(axis) + " on " + shape_str(a.shape()));
  const AxisSplit s = split_at(a.shape(), axis);
  const auto x = a.data();
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double top = x[base];
      for (std::size_t e = 1; e < s.extent; ++e) top = std::max(top, x[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(x[base + e * s.inner] - top);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  Tensor result(a.shape(), std::move(out));
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  Tensor y = result;
  return tape->record(std::move(result), {&a}, [y, s](std::span<const double> g, std::span<double* const> grads) {
    const auto yv = y.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * yv[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          grads[0][i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor result = Tensor::scalar(total);
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a}, [n = a.size()](std::span<const double> g, std::span<double* const> grads) {
    for (std::size_t i = 0; i < n; ++i) grads[0][i] += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw Error(ErrorCode::ShapeMismatch, "sum_axis axis " + std::to_string(axis) + " on " + shape_str(a.shape()));
  const AxisSplit s = split_at(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = 1;
  const auto x = a.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += x[(o * s.extent + e) * s.inner + in];
    }
  }
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = recording({&a});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&a}, [s](std::span<const double> g, std::span<double* const> grads) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        for (std::size_t in = 0; in < s.inner; ++in) grads[0][(o * s.extent + e) * s.inner + in] += g[o * s.inner + in];
      }
    }
  });
}

Tensor straight_through(const Tensor& hard, const Tensor& soft) {
  if (hard.shape() != soft.shape()) mismatch("straight_through", hard.shape(), soft.shape());
  Tensor result(hard.shape(), hard.to_vector());
  Tape* tape = recording({&soft});
  if (tape == nullptr) return result;
  return tape->record(std::move(result), {&soft}, [](std::span<const double> g, std::span<double* const> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
  });
}

}  // namespace selectfusion
