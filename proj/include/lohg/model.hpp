#pragma once

#include <span>
#include <string>
#include <vector>

#include "lohg/decoder.hpp"
#include "lohg/euclidean.hpp"
#include "lohg/horl.hpp"

namespace lohg {

struct NetworkOptions {
  std::vector<int64_t> widths{8, 16, 32, 64, 128};
  int64_t in_channels = 1;
  int64_t edges = 64;
  double curvature = 1.0;
  double lambda = 0.5;
  double degree_eps = kDegreeEps;
  int64_t attention_ratio = 4;
};

/// Compact preset for unit-scale experiments; edge budget follows the
/// configured training resolution.
inline NetworkOptions tiny_network(int64_t input_size = 64) {
  NetworkOptions o;
  o.widths = {8, 16, 32, 64, 128};
  o.edges = derive_edge_count(input_size, 4, false);
  return o;
}

inline NetworkOptions full_network(int64_t input_size = 256) {
  NetworkOptions o;
  o.widths = {16, 32, 64, 128, 256};
  o.edges = derive_edge_count(input_size, 4, true);
  return o;
}

/// Intermediate maps captured during a forward pass, for inspection.
template <typename T>
struct ForwardTrace {
  std::vector<LorentzMap<T>> lorentz;
  std::vector<Tensor<T>> euclid;
  std::vector<Tensor<T>> fused;
  std::vector<HypergraphState<T>> hypergraph;
};

/// Dual-branch detector: hyperboloid and Euclidean pyramids fused per scale
/// in the origin tangent plane, high-order relation propagation on the
/// deepest fused map, and an upsampling decoder to a probability map.
/// Parameters register in construction order (lorentz, euclid, relation,
/// decoder), which fixes the initialization draw order and the checkpoint
/// layout.
template <typename T>
struct Network {
  ParamRegistry<T> params;
  LorentzEncoder<T> lorentz;
  EuclideanBranch<T> euclid;
  HorlLayer<T> relation;
  Decoder<T> decoder;

  static Network create(const NetworkOptions& opts, Rng& rng) {
    Network net;
    net.lorentz = LorentzEncoder<T>::create(net.params, "lorentz", opts.in_channels, opts.widths,
                                            static_cast<T>(opts.curvature), rng,
                                            opts.attention_ratio);
    net.euclid =
        EuclideanBranch<T>::create(net.params, "euclid", opts.in_channels, opts.widths, rng);
    net.relation = HorlLayer<T>::create(net.params, "relation", opts.widths.back(), opts.edges,
                                        opts.lambda, rng, opts.degree_eps);
    net.decoder = Decoder<T>::create(net.params, "decoder", opts.widths, rng);
    return net;
  }

  Tensor<T> forward(const Tensor<T>& img, ForwardTrace<T>* trace = nullptr) const {
    std::vector<LorentzMap<T>> lf = lorentz.forward(img);
    std::vector<Tensor<T>> ef = euclid.forward(img);
    std::vector<Tensor<T>> fused;
    fused.reserve(lf.size());
    for (size_t i = 0; i < lf.size(); ++i) fused.push_back(fuse_features(lf[i], ef[i]));
    fused.back() = relation.forward(fused.back(), trace ? &trace->hypergraph : nullptr);
    Tensor<T> prob = decoder.forward(fused);
    if (trace) {
      trace->lorentz = std::move(lf);
      trace->euclid = std::move(ef);
      trace->fused = std::move(fused);
    }
    return prob;
  }
};

/// Plain gradient descent on every parameter that received a gradient.
/// With lr == 0 the update leaves parameters bit-identical.
template <typename T>
void sgd_step(ParamRegistry<T>& reg, double lr) {
  T step = static_cast<T>(lr);
  for (auto& [name, p] : reg.items()) {
    if (!p.has_grad()) continue;
    std::span<T> d = p.mutable_data();
    std::span<const T> g = p.grad();
    for (int64_t i = 0; i < p.numel(); ++i) d[i] -= step * g[i];
  }
}

/// One forward/backward/update cycle; returns the loss before the update.
template <typename T>
T train_step(Network<T>& net, const Tensor<T>& image, const Tensor<T>& mask, double lr) {
  Tape<T> tape;
  TapeScope<T> scope(tape);
  Tensor<T> loss = soft_iou_loss(net.forward(image), mask);
  T value = loss.item();
  net.params.zero_grads();
  tape.backward(loss);
  sgd_step(net.params, lr);
  return value;
}

/// Repeated single-scene descent; returns the loss at the final parameters.
template <typename T>
T train_overfit(Network<T>& net, const Tensor<T>& image, const Tensor<T>& mask, int64_t steps,
                double lr) {
  for (int64_t i = 0; i < steps; ++i) train_step(net, image, mask, lr);
  return soft_iou_loss(net.forward(image), mask).item();
}

}  // namespace lohg
