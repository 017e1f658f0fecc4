#pragma once

#include <array>
#include <string>
#include <vector>

#include "lohg/layers.hpp"

namespace lohg {

/// conv3x3 -> instance norm -> leaky relu, resolution preserving.
template <typename T>
struct ConvUnit {
  Conv2d<T> conv;
  InstanceNorm2d<T> norm;

  static ConvUnit create(ParamRegistry<T>& reg, const std::string& name, int64_t in_ch,
                         int64_t out_ch, Rng& rng) {
    ConvUnit u;
    u.conv = Conv2d<T>::create(reg, name + ".conv", in_ch, out_ch, 3, 1, 1, rng, kLeakySlope);
    u.norm = InstanceNorm2d<T>::create(reg, name + ".norm", out_ch);
    return u;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return leaky_relu(norm.forward(conv.forward(x)), static_cast<T>(kLeakySlope));
  }
};

/// Plain convolutional pyramid: five stages of two ConvUnits each, joined by
/// bare stride-2 3x3 convolutions. Emits one feature map per stage.
template <typename T>
struct EuclideanBranch {
  std::vector<std::array<ConvUnit<T>, 2>> stages;
  std::vector<Conv2d<T>> downs;

  static EuclideanBranch create(ParamRegistry<T>& reg, const std::string& prefix, int64_t in_ch,
                                const std::vector<int64_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw ContractError("EuclideanBranch: need at least two stage widths");
    EuclideanBranch b;
    int64_t prev = in_ch;
    for (size_t i = 0; i < widths.size(); ++i) {
      std::string stage = prefix + ".stage" + std::to_string(i + 1);
      auto u0 = ConvUnit<T>::create(reg, stage + ".unit1", prev, widths[i], rng);
      auto u1 = ConvUnit<T>::create(reg, stage + ".unit2", widths[i], widths[i], rng);
      b.stages.push_back({u0, u1});
      if (i + 1 < widths.size()) {
        b.downs.push_back(Conv2d<T>::create(reg, prefix + ".down" + std::to_string(i + 1),
                                            widths[i], widths[i], 3, 2, 1, rng, kLeakySlope));
      }
      prev = widths[i];
    }
    return b;
  }

  std::vector<Tensor<T>> forward(const Tensor<T>& x) const {
    std::vector<Tensor<T>> feats;
    Tensor<T> cur = x;
    for (size_t i = 0; i < stages.size(); ++i) {
      cur = stages[i][1].forward(stages[i][0].forward(cur));
      feats.push_back(cur);
      if (i < downs.size()) cur = downs[i].forward(cur);
    }
    return feats;
  }
};

}  // namespace lohg
