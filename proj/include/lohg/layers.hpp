#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lohg/ops.hpp"
#include "lohg/rng.hpp"
#include "lohg/tensor.hpp"

namespace lohg {

/// Negative-side slope shared by every leaky activation and the matching
/// initialization gain.
inline constexpr double kLeakySlope = 0.1;

/// Ordered, named collection of trainable leaves. Registration order is the
/// construction order of the network, which fixes both initialization draws
/// and checkpoint layout.
template <typename T>
class ParamRegistry {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ContractError("ParamRegistry: duplicate name " + name);
    value.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, value);
    return value;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }

  Tensor<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second].second;
  }

  void zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::map<std::string, size_t> index_;
};

inline double kaiming_gain(double slope) { return std::sqrt(2.0 / (1.0 + slope * slope)); }

/// Kaiming-normal fill for conv kernels; gain matches leaky_relu(slope).
template <typename T>
Tensor<T> conv_init(const Shape& shape, Rng& rng, double slope) {
  int64_t fan_in = shape[1] * shape[2] * shape[3];
  double stddev = kaiming_gain(slope) / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>::from(shape, std::move(v));
}

/// Init for kernels over hyperboloid coordinates (input channel 0 temporal).
/// Temporal taps start at zero: the temporal channel is floored at sqrt(k),
/// and random taps on it would inflate output variance until single-precision
/// manifold residuals exceed tolerance at deep scales. Spatial taps use gain
/// over the spatial fan-in alone.
template <typename T>
Tensor<T> lorentz_conv_init(const Shape& shape, Rng& rng, double gain) {
  int64_t spatial_in = shape[1] - 1;
  if (spatial_in < 1) throw ContractError("lorentz_conv_init: need a spatial input channel");
  double stddev = gain / std::sqrt(static_cast<double>(spatial_in * shape[2] * shape[3]));
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)), T(0));
  int64_t taps = shape[2] * shape[3];
  for (int64_t o = 0; o < shape[0]; ++o) {
    for (int64_t c = 1; c < shape[1]; ++c) {
      T* base = v.data() + (o * shape[1] + c) * taps;
      for (int64_t t = 0; t < taps; ++t) base[t] = static_cast<T>(rng.normal() * stddev);
    }
  }
  return Tensor<T>::from(shape, std::move(v));
}

/// Normal fill with std 1/sqrt(fan_in) for matrices applied as x @ W.
template <typename T>
Tensor<T> linear_init(const Shape& shape, Rng& rng) {
  double stddev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>::from(shape, std::move(v));
}

template <typename T>
struct Conv2d {
  Tensor<T> w, b;
  int64_t stride = 1, pad = 0;

  static Conv2d create(ParamRegistry<T>& reg, const std::string& name, int64_t in_ch,
                       int64_t out_ch, int64_t ksize, int64_t stride, int64_t pad, Rng& rng,
                       double slope = 0.1) {
    return create_with(reg, name, conv_init<T>({out_ch, in_ch, ksize, ksize}, rng, slope), stride,
                       pad);
  }

  static Conv2d create_with(ParamRegistry<T>& reg, const std::string& name, Tensor<T> weight,
                            int64_t stride, int64_t pad) {
    Conv2d c;
    int64_t out_ch = weight.dim(0);
    c.w = reg.add(name + ".w", std::move(weight));
    c.b = reg.add(name + ".b", Tensor<T>::zeros({out_ch}));
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }

  int64_t out_channels() const { return w.dim(0); }
  int64_t in_channels() const { return w.dim(1); }
};

/// Per-channel normalization over H x W with learnable affine terms.
template <typename T>
struct InstanceNorm2d {
  Tensor<T> gamma, beta;  // {1,C,1,1}
  T eps = static_cast<T>(1e-5);

  static InstanceNorm2d create(ParamRegistry<T>& reg, const std::string& name, int64_t channels) {
    InstanceNorm2d n;
    n.gamma = reg.add(name + ".gamma", Tensor<T>::full({1, channels, 1, 1}, T(1)));
    n.beta = reg.add(name + ".beta", Tensor<T>::zeros({1, channels, 1, 1}));
    return n;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> mu = gap(x);
    Tensor<T> centered = sub(x, mu);
    Tensor<T> var = gap(mul(centered, centered));
    Tensor<T> inv = reciprocal(sqrt(add_scalar(var, eps)));
    return add(mul(mul(centered, inv), gamma), beta);
  }
};

}  // namespace lohg
