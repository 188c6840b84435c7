#pragma once

// Direct, soft (deterministic) and hard (Gumbel-Softmax stochastic) fusion
// of two length-d feature batches a1, a2 of shape [N, d].
//
// Hard fusion draws a two-class categorical per feature: class 0 keeps the
// feature, class 1 blocks it. Class weights come from relu(FC([a1; a2])) plus
// a small floor so their log is defined. The forward pass uses the binary
// argmax sample; gradients flow through the relaxed softmax (straight-through).

#include <cstddef>
#include <optional>
#include <string>

#include "selectfusion/nn.hpp"
#include "selectfusion/tensor.hpp"

namespace selectfusion {

inline constexpr double kProbabilityFloor = 1e-8;
inline constexpr double kUniformFloor = 1e-12;
/// Initial bias of the class layer. Starting positive keeps the relu in its
/// active region; a negative pre-activation for both classes would pin the
/// feature at 50/50 with zero gradient.
inline constexpr double kClassBiasInit = 1.0;

enum class FusionKind { Direct, Soft, Hard };

enum class MaskKind { Soft, Hard };

/// Realized masks for one forward pass, detached for logging. Direct fusion
/// reports all-ones hard masks.
struct FusionMask {
  Tensor s1;  // [N, d]
  Tensor s2;  // [N, d]
  MaskKind kind = MaskKind::Hard;
};

/// Nonnegative class weights, [N, 2d, 2]: rows [0, d) belong to mask 1,
/// rows [d, 2d) to mask 2; column 0 is "keep", column 1 "block".
struct ClassLogits {
  Tensor alpha;
  std::size_t d = 0;
};

struct FusionOutput {
  Tensor z;  // [N, 2d]
  FusionMask mask;
  /// Hard fusion only: the class weights and relaxed keep probabilities.
  std::optional<ClassLogits> logits;
  std::optional<Tensor> relaxed_keep;
};

enum class HardGradient {
  StraightThrough,  // forward binary, backward relaxed
  Relaxed,          // forward and backward through the relaxed sample
};

struct TemperatureSchedule {
  double start = 1.0;
  double end = 0.5;
  int total_epochs = 1;
};

/// Linear decay from `start` at epoch 0 to `end` at `total_epochs`.
double anneal(int epoch, const TemperatureSchedule& schedule);

Tensor fuse_direct_values(const Tensor& a1, const Tensor& a2);
FusionOutput fuse_direct(const Tensor& a1, const Tensor& a2);

/// Parameter layout for the fusion networks.
struct FusionParams {
  std::string name = "fusion";
  std::size_t d = 0;
  /// One class layer emitting both masks' logits, or one layer per mask.
  bool shared_class_layer = true;

  Linear soft_head(int mask) const;
  Linear class_layer() const;
  Linear class_layer(int mask) const;
  void declare(FusionKind kind, ParameterStore& store, Rng& rng) const;
};

FusionOutput fuse_soft(const Tensor& a1, const Tensor& a2, const Bindings& p, const FusionParams& cfg);

ClassLogits class_logits(const Tensor& a1, const Tensor& a2, const Bindings& p, const FusionParams& cfg);

/// Keep/block probabilities implied by class weights, [..., 2].
Tensor class_probabilities(const Tensor& alpha);

/// Uniform draws in (0, 1), clamped to [1e-12, 1 - 1e-12].
Tensor draw_uniform(Shape shape, Rng& rng);

/// eps = -log(-log(u)) after clamping u.
Tensor gumbel_sample(const Tensor& u);

/// softmax((log_pi + eps) / tau) over the last axis.
Tensor gumbel_softmax(const Tensor& log_pi, const Tensor& eps, double tau);

/// One-hot argmax of (log_pi + eps) reduced to the keep indicator,
/// [..., 2] -> [...]. Exact ties keep.
Tensor gumbel_max_keep(const Tensor& log_pi, const Tensor& eps);

struct HardFusionOptions {
  HardGradient gradient = HardGradient::StraightThrough;
  /// When set, used instead of fresh draws; shape [N, 2d, 2].
  std::optional<Tensor> frozen_noise;
};

FusionOutput fuse_hard(const Tensor& a1, const Tensor& a2, const Bindings& p, const FusionParams& cfg, Rng& rng,
                       double tau, const HardFusionOptions& options = {});

}  // namespace selectfusion
