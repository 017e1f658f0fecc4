#pragma once

#include <string>
#include <vector>

#include "lohg/encoder.hpp"

namespace lohg {

/// Tangent-space fusion: manifold features are pulled back to the origin's
/// tangent plane and added to the matching Euclidean map. At the origin the
/// pullback is exactly zero, so the fused map degenerates to the Euclidean
/// branch alone.
template <typename T>
Tensor<T> fuse_features(const LorentzMap<T>& lorentz_map, const Tensor<T>& euclid) {
  return add(log_map_spatial(lorentz_map), euclid);
}

/// One upsampling step: double the deep map, add the 1x1-aligned skip from
/// the shallower scale, then refine back down to the shallow width.
template <typename T>
struct DecoderLevel {
  Conv2d<T> skip;  // 1x1: C_shallow -> C_deep
  Conv2d<T> conv;  // 3x3: C_deep -> C_shallow
  InstanceNorm2d<T> norm;

  static DecoderLevel create(ParamRegistry<T>& reg, const std::string& name, int64_t shallow_ch,
                             int64_t deep_ch, Rng& rng) {
    DecoderLevel l;
    l.skip = Conv2d<T>::create(reg, name + ".skip", shallow_ch, deep_ch, 1, 1, 0, rng, kLeakySlope);
    l.conv = Conv2d<T>::create(reg, name + ".conv", deep_ch, shallow_ch, 3, 1, 1, rng, kLeakySlope);
    l.norm = InstanceNorm2d<T>::create(reg, name + ".norm", shallow_ch);
    return l;
  }

  Tensor<T> forward(const Tensor<T>& deep, const Tensor<T>& shallow_skip) const {
    Tensor<T> x = add(upsample2x_bilinear(deep), skip.forward(shallow_skip));
    return leaky_relu(norm.forward(conv.forward(x)), static_cast<T>(kLeakySlope));
  }
};

/// Initial head bias: sets the initial foreground probability to the rare-
/// target prior sigmoid(-4) ~ 0.018, so the soft-IoU denominator starts near
/// the mask size instead of half the image and SGD converges at sane rates.
inline constexpr double kHeadBias = -4.0;

/// Walks the fused pyramid deepest to shallowest and ends with a 1x1 + sigmoid
/// head producing a per-pixel probability map {B,1,H,W}.
template <typename T>
struct Decoder {
  std::vector<DecoderLevel<T>> levels;  // ordered deepest transition first
  Conv2d<T> head;

  static Decoder create(ParamRegistry<T>& reg, const std::string& prefix,
                        const std::vector<int64_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw ContractError("Decoder: need at least two stage widths");
    Decoder d;
    for (size_t i = widths.size() - 1; i > 0; --i) {
      d.levels.push_back(DecoderLevel<T>::create(
          reg, prefix + ".level" + std::to_string(i), widths[i - 1], widths[i], rng));
    }
    d.head = Conv2d<T>::create(reg, prefix + ".head", widths[0], 1, 1, 1, 0, rng, kLeakySlope);
    for (auto& x : d.head.b.mutable_data()) x = static_cast<T>(kHeadBias);
    return d;
  }

  /// feats holds one fused map per scale, shallowest (full resolution) first.
  Tensor<T> forward(const std::vector<Tensor<T>>& feats) const {
    if (feats.size() != levels.size() + 1)
      throw DimensionError("Decoder: expected " + std::to_string(levels.size() + 1) +
                           " feature maps, got " + std::to_string(feats.size()));
    Tensor<T> x = feats.back();
    for (size_t i = 0; i < levels.size(); ++i) {
      x = levels[i].forward(x, feats[feats.size() - 2 - i]);
    }
    return sigmoid(head.forward(x));
  }
};

/// Differentiable overlap loss 1 - (|P∩G|+1)/(|P∪G|+1) with soft counts;
/// the +1 smoothing keeps the empty-vs-empty case at zero loss.
template <typename T>
Tensor<T> soft_iou_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("soft_iou_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  Tensor<T> inter = sum(mul(pred, target));
  Tensor<T> uni = sub(add(sum(pred), sum(target)), inter);
  Tensor<T> ratio = mul(add_scalar(inter, T(1)), reciprocal(add_scalar(uni, T(1))));
  return add_scalar(scale(ratio, T(-1)), T(1));
}

}  // namespace lohg
