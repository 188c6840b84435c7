#pragma once

// Dense f64 tensors (rank 1..3, row-major) with a reverse-mode gradient tape.
//
// Values are immutable once built and share their storage, so copies are
// cheap and safe to hand across threads. A Tape is installed per thread with
// TapeScope; while one is installed, every primitive whose inputs are linked
// to it records a node. Without an active tape the same functions are plain
// forward arithmetic.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selectfusion/error.hpp"

namespace selectfusion {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// NaN/Inf and shape validation on construction. On by default.
bool checked_mode();
void set_checked_mode(bool on);

class CheckedModeScope {
 public:
  explicit CheckedModeScope(bool on) : previous_(checked_mode()) { set_checked_mode(on); }
  ~CheckedModeScope() { set_checked_mode(previous_); }
  CheckedModeScope(const CheckedModeScope&) = delete;
  CheckedModeScope& operator=(const CheckedModeScope&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_->size(); }
  std::span<const double> data() const { return *data_; }
  std::vector<double> to_vector() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i, std::size_t j) const { return (*data_)[i * shape_.at(1) + j]; }
  /// Value of a single-element tensor.
  double item() const;

  /// Same value, no tape linkage.
  Tensor detach() const;
  bool tracked() const { return tape_ != nullptr; }
  bool tracked_by(const Tape* tape) const { return tape != nullptr && tape_ == tape; }
  std::size_t node() const { return node_; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  const Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Backward hook of a recorded op: receives the output gradient and one
/// accumulator per input (null when that input is not on the tape).
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable input (leaf).
  Tensor watch(const Tensor& value);

  /// Records an op output. Inputs not linked to this tape are constants.
  Tensor record(Tensor output, std::initializer_list<const Tensor*> inputs, BackwardFn fn);

  /// Reverse pass from a single-element tensor. Gradients accumulate across
  /// calls until zero_grad().
  void backward(const Tensor& loss);

  /// Accumulated gradient of `t`; all zeros when nothing reached it.
  std::vector<double> grad(const Tensor& t) const;
  bool has_grad(const Tensor& t) const;
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<std::optional<std::size_t>> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

/// The tape ops record onto for this thread, or null.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// --- primitives ------------------------------------------------------------
// Binary elementwise ops broadcast numpy-style over trailing-aligned axes
// (each axis equal or 1), which covers scalars and bias rows.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over `axis`, keeping it with extent 1.
Tensor sum_axis(const Tensor& a, std::size_t axis);

/// Forward value is exactly `hard`; the gradient flows to `soft` unchanged.
Tensor straight_through(const Tensor& hard, const Tensor& soft);

}  // namespace selectfusion
