#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lohg/euclidean.hpp"
#include "lohg/layers.hpp"
#include "lohg/lorentz_map.hpp"

namespace lohg {

/// Convolution acting on full hyperboloid coordinates (temporal + spatial
/// channels) and emitting new spatial channels; the output temporal channel
/// is rebuilt from the constraint, so the result is a manifold map again.
template <typename T>
struct LorentzConv {
  Conv2d<T> conv;  // {out_spatial, 1+in_spatial, k, k}

  static LorentzConv create(ParamRegistry<T>& reg, const std::string& name, int64_t in_spatial,
                            int64_t out_spatial, int64_t ksize, int64_t stride, int64_t pad,
                            Rng& rng, double gain) {
    LorentzConv c;
    c.conv = Conv2d<T>::create_with(
        reg, name, lorentz_conv_init<T>({out_spatial, 1 + in_spatial, ksize, ksize}, rng, gain),
        stride, pad);
    return c;
  }

  LorentzMap<T> forward(const LorentzMap<T>& x) const {
    return map_from_spatial(conv.forward(x.full), x.k);
  }
};

/// Channel attention driven by pooled full coordinates: the gate sees the
/// temporal statistics as well, but scales only spatial channels.
template <typename T>
struct GeometricAttention {
  Conv2d<T> reduce, expand;

  static GeometricAttention create(ParamRegistry<T>& reg, const std::string& name,
                                   int64_t spatial_ch, Rng& rng, int64_t ratio = 4) {
    if (ratio < 1) throw ContractError("GeometricAttention: reduction ratio must be positive");
    int64_t hidden = std::max<int64_t>(1, spatial_ch / ratio);
    GeometricAttention a;
    a.reduce = Conv2d<T>::create(reg, name + ".w1", 1 + spatial_ch, hidden, 1, 1, 0, rng,
                                 kLeakySlope);
    a.expand = Conv2d<T>::create(reg, name + ".w2", hidden, spatial_ch, 1, 1, 0, rng, kLeakySlope);
    return a;
  }

  /// Returns per-channel gates in (0,1), shape {B, C_spatial, 1, 1}.
  Tensor<T> forward(const LorentzMap<T>& m) const {
    return sigmoid(expand.forward(relu(reduce.forward(gap(m.full)))));
  }
};

/// Residual downsampling block on the hyperboloid: a two-convolution main
/// route (norm + activation between) against a 1x1 strided shortcut, merged
/// by attention gates computed from the main route's output map.
template <typename T>
struct GalrcmBlock {
  LorentzConv<T> conv1, conv2, shortcut;
  InstanceNorm2d<T> norm;
  GeometricAttention<T> attn;

  static GalrcmBlock create(ParamRegistry<T>& reg, const std::string& name, int64_t in_ch,
                            int64_t out_ch, Rng& rng, int64_t attn_ratio = 4) {
    GalrcmBlock b;
    double act_gain = kaiming_gain(kLeakySlope);
    b.conv1 = LorentzConv<T>::create(reg, name + ".conv1", in_ch, in_ch, 3, 1, 1, rng, act_gain);
    b.norm = InstanceNorm2d<T>::create(reg, name + ".norm", in_ch);
    b.conv2 = LorentzConv<T>::create(reg, name + ".conv2", in_ch, out_ch, 3, 2, 1, rng, act_gain);
    // Gain 1/sqrt(2) on the ungated shortcut: its variance compounds across
    // the stack (nothing renormalizes the block output), and unit feature
    // scale is what keeps single-precision manifold residuals in tolerance.
    b.shortcut = LorentzConv<T>::create(reg, name + ".shortcut", in_ch, out_ch, 1, 2, 0, rng,
                                        std::sqrt(0.5));
    b.attn = GeometricAttention<T>::create(reg, name + ".attn", out_ch, rng, attn_ratio);
    return b;
  }

  LorentzMap<T> forward(const LorentzMap<T>& x) const {
    LorentzMap<T> h = conv1.forward(x);
    h = map_from_spatial(norm.forward(h.spatial()), x.k);
    h = map_from_spatial(leaky_relu(h.spatial(), static_cast<T>(kLeakySlope)), x.k);
    LorentzMap<T> main = conv2.forward(h);
    LorentzMap<T> side = shortcut.forward(x);
    Tensor<T> alpha = attn.forward(main);
    return map_from_spatial(add(mul(alpha, main.spatial()), side.spatial()), x.k);
  }
};

/// Hyperboloid feature pyramid: a learned 3x3 lift from image space onto the
/// manifold, then one downsampling block per scale transition. Emits one
/// manifold map per scale, full resolution first.
template <typename T>
struct LorentzEncoder {
  Conv2d<T> lib;
  std::vector<GalrcmBlock<T>> blocks;
  T curvature = T(1);

  static LorentzEncoder create(ParamRegistry<T>& reg, const std::string& prefix, int64_t in_ch,
                               const std::vector<int64_t>& widths, T curvature, Rng& rng,
                               int64_t attn_ratio = 4) {
    if (widths.size() < 2) throw ContractError("LorentzEncoder: need at least two stage widths");
    LorentzEncoder e;
    e.curvature = curvature;
    e.lib = Conv2d<T>::create(reg, prefix + ".lib", in_ch, widths[0], 3, 1, 1, rng, kLeakySlope);
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
      e.blocks.push_back(GalrcmBlock<T>::create(reg, prefix + ".block" + std::to_string(i + 1),
                                                widths[i], widths[i + 1], rng, attn_ratio));
    }
    return e;
  }

  std::vector<LorentzMap<T>> forward(const Tensor<T>& img) const {
    if (img.ndim() != 4) throw DimensionError("LorentzEncoder: input must be {B,C,H,W}");
    int64_t div = int64_t(1) << blocks.size();
    if (img.dim(2) % div != 0 || img.dim(3) % div != 0) {
      throw DimensionError("LorentzEncoder: spatial size " + std::to_string(img.dim(2)) + "x" +
                           std::to_string(img.dim(3)) + " not divisible by " + std::to_string(div));
    }
    std::vector<LorentzMap<T>> feats;
    LorentzMap<T> cur = map_from_spatial(lib.forward(img), curvature);
    feats.push_back(cur);
    for (const auto& block : blocks) {
      cur = block.forward(cur);
      feats.push_back(cur);
    }
    return feats;
  }
};

}  // namespace lohg
