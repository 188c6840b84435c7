#include "selectfusion/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "selectfusion/kernels.hpp"

namespace selectfusion {

namespace {

void require_pair(const Tensor& a1, const Tensor& a2, std::size_t d) {
  if (a1.rank() != 2 || a1.shape() != a2.shape() || (d != 0 && a1.dim(1) != d)) {
    throw Error(ErrorCode::ShapeMismatch, "fusion inputs " + shape_str(a1.shape()) + " and " + shape_str(a2.shape()) +
                                              (d != 0 ? " (expected width " + std::to_string(d) + ")" : ""));
  }
}

void require_tau(double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::NonPositiveTemperature, "temperature must be > 0, got " + std::to_string(tau));
}

}  // namespace

double anneal(int epoch, const TemperatureSchedule& schedule) {
  if (schedule.total_epochs < 1 || !(schedule.end > 0.0) || schedule.start < schedule.end) {
    throw Error(ErrorCode::InvalidConfig, "temperature schedule needs start >= end > 0 and total_epochs >= 1");
  }
  if (epoch < 0 || epoch > schedule.total_epochs) {
    throw Error(ErrorCode::EpochOutOfRange,
                "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(schedule.total_epochs) + "]");
  }
  return schedule.start +
         (schedule.end - schedule.start) * static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs);
}

Tensor fuse_direct_values(const Tensor& a1, const Tensor& a2) {
  require_pair(a1, a2, 0);
  return concat(a1, a2, 1);
}

FusionOutput fuse_direct(const Tensor& a1, const Tensor& a2) {
  FusionOutput out;
  out.z = fuse_direct_values(a1, a2);
  out.mask = {Tensor::full(a1.shape(), 1.0), Tensor::full(a2.shape(), 1.0), MaskKind::Hard};
  return out;
}

Linear FusionParams::soft_head(int mask) const { return {name + ".soft" + std::to_string(mask), 2 * d, d}; }
Linear FusionParams::class_layer() const { return {name + ".class", 2 * d, 4 * d}; }
Linear FusionParams::class_layer(int mask) const { return {name + ".class" + std::to_string(mask), 2 * d, 2 * d}; }

void FusionParams::declare(FusionKind kind, ParameterStore& store, Rng& rng) const {
  switch (kind) {
    case FusionKind::Direct:
      return;
    case FusionKind::Soft:
      soft_head(1).declare(store, rng);
      soft_head(2).declare(store, rng);
      return;
    case FusionKind::Hard:
      if (shared_class_layer) {
        class_layer().declare(store, rng);
        store.at(class_layer().name + ".b").value.assign(4 * d, kClassBiasInit);
      } else {
        for (int m : {1, 2}) {
          class_layer(m).declare(store, rng);
          store.at(class_layer(m).name + ".b").value.assign(2 * d, kClassBiasInit);
        }
      }
      return;
  }
}

FusionOutput fuse_soft(const Tensor& a1, const Tensor& a2, const Bindings& p, const FusionParams& cfg) {
  require_pair(a1, a2, cfg.d);
  const Tensor joint = concat(a1, a2, 1);
  const Tensor s1 = sigmoid(cfg.soft_head(1).forward(p, joint));
  const Tensor s2 = sigmoid(cfg.soft_head(2).forward(p, joint));
  FusionOutput out;
  out.z = concat(mul(a1, s1), mul(a2, s2), 1);
  out.mask = {s1.detach(), s2.detach(), MaskKind::Soft};
  return out;
}

ClassLogits class_logits(const Tensor& a1, const Tensor& a2, const Bindings& p, const FusionParams& cfg) {
  require_pair(a1, a2, cfg.d);
  const std::size_t n = a1.dim(0);
  const std::size_t d = cfg.d;
  const Tensor joint = concat(a1, a2, 1);
  Tensor raw;
  if (cfg.shared_class_layer) {
    raw = reshape(cfg.class_layer().forward(p, joint), {n, 2 * d, 2});
  } else {
    raw = concat(reshape(cfg.class_layer(1).forward(p, joint), {n, d, 2}),
                 reshape(cfg.class_layer(2).forward(p, joint), {n, d, 2}), 1);
  }
  return {add_scalar(relu(raw), kProbabilityFloor), d};
}

Tensor class_probabilities(const Tensor& alpha) {
  return div(alpha, sum_axis(alpha, alpha.rank() - 1));
}

Tensor draw_uniform(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> u(numel(shape));
  for (auto& x : u) x = std::clamp(dist(rng), kUniformFloor, 1.0 - kUniformFloor);
  return Tensor(std::move(shape), std::move(u));
}

Tensor gumbel_sample(const Tensor& u) {
  std::vector<double> clamped(u.size());
  const auto src = u.data();
  for (std::size_t i = 0; i < clamped.size(); ++i) clamped[i] = std::clamp(src[i], kUniformFloor, 1.0 - kUniformFloor);
  std::vector<double> eps(u.size());
  kernels::gumbel_from_uniform(clamped, eps);
  return Tensor(u.shape(), std::move(eps));
}

Tensor gumbel_softmax(const Tensor& log_pi, const Tensor& eps, double tau) {
  require_tau(tau);
  if (log_pi.shape() != eps.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "gumbel_softmax " + shape_str(log_pi.shape()) + " vs " + shape_str(eps.shape()));
  }
  return softmax(scale(add(log_pi, eps), 1.0 / tau), log_pi.rank() - 1);
}

Tensor gumbel_max_keep(const Tensor& log_pi, const Tensor& eps) {
  if (log_pi.shape() != eps.shape() || log_pi.shape().back() != 2) {
    throw Error(ErrorCode::ShapeMismatch, "gumbel_max_keep " + shape_str(log_pi.shape()) + " vs " + shape_str(eps.shape()));
  }
  Shape shape(log_pi.shape().begin(), log_pi.shape().end() - 1);
  if (shape.empty()) shape = {1};
  const auto lp = log_pi.data();
  const auto e = eps.data();
  std::vector<double> keep(lp.size() / 2);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    keep[i] = (lp[2 * i] + e[2 * i] >= lp[2 * i + 1] + e[2 * i + 1]) ? 1.0 : 0.0;
  }
  return Tensor(std::move(shape), std::move(keep));
}

FusionOutput fuse_hard(const Tensor& a1, const Tensor& a2, const Bindings& p, const FusionParams& cfg, Rng& rng,
                       double tau, const HardFusionOptions& options) {
  require_pair(a1, a2, cfg.d);
  require_tau(tau);
  const std::size_t n = a1.dim(0);
  const std::size_t d = cfg.d;

  ClassLogits logits = class_logits(a1, a2, p, cfg);
  const Tensor log_pi = log(logits.alpha);
  Tensor eps;
  if (options.frozen_noise) {
    if (options.frozen_noise->shape() != log_pi.shape()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "frozen noise " + shape_str(options.frozen_noise->shape()) + " vs " + shape_str(log_pi.shape()));
    }
    eps = *options.frozen_noise;
  } else {
    eps = gumbel_sample(draw_uniform(log_pi.shape(), rng));
  }

  const Tensor h = gumbel_softmax(log_pi, eps, tau);
  const Tensor h_keep = reshape(slice(h, 0, 1, 2), {n, 2 * d});
  const Tensor keep = reshape(gumbel_max_keep(log_pi.detach(), eps), {n, 2 * d});
  const Tensor s = options.gradient == HardGradient::StraightThrough ? straight_through(keep, h_keep) : h_keep;

  const Tensor s1 = slice(s, 0, d, 1);
  const Tensor s2 = slice(s, d, 2 * d, 1);
  FusionOutput out;
  out.z = concat(mul(a1, s1), mul(a2, s2), 1);
  out.mask = {s1.detach(), s2.detach(),
              options.gradient == HardGradient::StraightThrough ? MaskKind::Hard : MaskKind::Soft};
  out.logits = std::move(logits);
  out.relaxed_keep = h_keep.detach();
  return out;
}

}  // namespace selectfusion
