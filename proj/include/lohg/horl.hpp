#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lohg/layers.hpp"

namespace lohg {

/// Added to vertex/edge degrees before inversion so isolated rows or columns
/// stay finite; raw degrees are reported unperturbed.
inline constexpr double kDegreeEps = 1e-6;

/// Intermediate products of one hypergraph build, kept per batch item for
/// inspection and testing. Shapes: H, Hs {N,M}; Dv {N,1}; De {1,M}; P {N,N}.
template <typename T>
struct HypergraphState {
  Tensor<T> H, Hs, Dv, De, P;
};

template <typename T>
struct InteractionResult {
  Tensor<T> P, Dv, De;
};

/// High-order relation layer over the deepest feature map. Each pixel is a
/// vertex; learned projections build a nonnegative incidence matrix, a global
/// mean threshold sparsifies it, and features are propagated through the
/// normalized vertex-edge-vertex interaction operator.
template <typename T>
struct HorlLayer {
  Conv2d<T> wv;      // 1x1: C -> d, vertex projection
  Conv2d<T> wg;      // 1x1: C -> d, gate from pooled features
  Conv2d<T> we;      // 7x7 pad 3: C -> M, hyperedge projection
  Tensor<T> theta;   // {C,C} feature transform
  double lambda = 0.5;
  double degree_eps = kDegreeEps;

  static HorlLayer create(ParamRegistry<T>& reg, const std::string& name, int64_t channels,
                          int64_t edges, double lambda, Rng& rng,
                          double degree_eps = kDegreeEps) {
    if (edges < 1) throw ContractError("HorlLayer: edge count must be positive");
    if (!(degree_eps > 0.0)) throw ContractError("HorlLayer: degree epsilon must be positive");
    HorlLayer h;
    int64_t d = (channels + 1) / 2;
    h.wv = Conv2d<T>::create(reg, name + ".wv", channels, d, 1, 1, 0, rng, kLeakySlope);
    h.wg = Conv2d<T>::create(reg, name + ".wg", channels, d, 1, 1, 0, rng, kLeakySlope);
    h.we = Conv2d<T>::create(reg, name + ".we", channels, edges, 7, 1, 3, rng, kLeakySlope);
    h.theta = reg.add(name + ".theta", linear_init<T>({channels, channels}, rng));
    h.lambda = lambda;
    h.degree_eps = degree_eps;
    return h;
  }

  /// H = |V diag(g) V^T E|, nonnegative by construction. V {N,d}, g {1,d},
  /// E {N,M}; result {N,M}.
  static Tensor<T> incidence(const Tensor<T>& v, const Tensor<T>& g, const Tensor<T>& e) {
    return abs(matmul(matmul(scale_cols(v, g), transpose(v)), e));
  }

  /// Zeroes every entry not strictly above lambda times the global mean of
  /// the dense incidence. The 0/1 mask is a constant: kept entries pass
  /// gradients through unchanged, dropped entries block them.
  static Tensor<T> sparsify(const Tensor<T>& dense, double lambda) {
    if (dense.ndim() != 2) throw DimensionError("sparsify: incidence must be 2-d");
    std::span<const T> h = dense.data();
    int64_t n = dense.numel();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += static_cast<double>(h[i]);
    double threshold = lambda * (sum / static_cast<double>(n));
    Tensor<T> mask = Tensor<T>::zeros(dense.shape());
    std::span<T> m = mask.mutable_data();
    for (int64_t i = 0; i < n; ++i) m[i] = static_cast<double>(h[i]) > threshold ? T(1) : T(0);
    return mul(dense, mask);
  }

  /// P = Dv^{-1/2} Hs De^{-1} Hs^T Dv^{-1/2} with regularized degrees inside
  /// the inversions only; returned Dv, De are the raw row and column sums.
  /// The two-factor product form keeps P numerically symmetric and PSD.
  static InteractionResult<T> interaction(const Tensor<T>& hs, double eps = kDegreeEps) {
    if (hs.ndim() != 2) throw DimensionError("interaction: incidence must be 2-d");
    InteractionResult<T> r;
    r.Dv = row_sum(hs);
    r.De = col_sum(hs);
    Tensor<T> rsq = reciprocal(sqrt(add_scalar(r.Dv, static_cast<T>(eps))));
    Tensor<T> ide = reciprocal(add_scalar(r.De, static_cast<T>(eps)));
    Tensor<T> rows = scale_rows(hs, rsq);
    r.P = matmul(scale_cols(rows, ide), transpose(rows));
    return r;
  }

  /// F' = (I - P) F Theta, evaluated as Y - P Y with Y = F Theta.
  static Tensor<T> propagate(const Tensor<T>& p, const Tensor<T>& f, const Tensor<T>& theta) {
    Tensor<T> y = matmul(f, theta);
    return sub(y, matmul(p, y));
  }

  /// x is the deepest fused feature map {B,C,h,w}; returns the propagated map
  /// of the same shape. When states is non-null it receives one entry per
  /// batch item.
  Tensor<T> forward(const Tensor<T>& x, std::vector<HypergraphState<T>>* states = nullptr) const {
    if (x.ndim() != 4) throw DimensionError("HorlLayer: input must be {B,C,h,w}");
    if (x.dim(1) != wv.in_channels())
      throw DimensionError("HorlLayer: expected " + std::to_string(wv.in_channels()) +
                           " channels, got " + std::to_string(x.dim(1)));
    int64_t b_n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t n = h * w, d = wv.out_channels(), m = we.out_channels();

    Tensor<T> v_all = wv.forward(x);
    Tensor<T> g_all = wg.forward(gap(x));
    Tensor<T> e_all = we.forward(x);

    std::vector<Tensor<T>> outs;
    for (int64_t b = 0; b < b_n; ++b) {
      Tensor<T> v = transpose(reshape(select_batch(v_all, b), {d, n}));
      Tensor<T> g = reshape(select_batch(g_all, b), {1, d});
      Tensor<T> e = transpose(reshape(select_batch(e_all, b), {m, n}));
      Tensor<T> dense = incidence(v, g, e);
      Tensor<T> hs = sparsify(dense, lambda);
      InteractionResult<T> ir = interaction(hs, degree_eps);
      Tensor<T> f = transpose(reshape(select_batch(x, b), {c, n}));
      Tensor<T> fp = propagate(ir.P, f, theta);
      outs.push_back(reshape(transpose(fp), {1, c, h, w}));
      if (states) states->push_back({dense, hs, ir.Dv, ir.De, ir.P});
    }
    return b_n == 1 ? outs[0] : concat_batch(outs);
  }
};

/// Hyperedge budget for a given training resolution: capped at 256, and for
/// compact models tied to four edges per deepest-scale vertex.
inline int64_t derive_edge_count(int64_t input_size, int64_t num_blocks, bool full_preset) {
  if (full_preset) return 256;
  int64_t side = input_size >> num_blocks;
  return std::min<int64_t>(256, 4 * side * side);
}

namespace detail {
template <typename T>
inline void dump_matrix_csv(std::ostream& os, const char* name, const Tensor<T>& t, int64_t rows,
                            int64_t cols) {
  os << "# " << name << ' ' << rows << ' ' << cols << '\n';
  std::span<const T> p = t.data();
  char buf[40];
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(p[i * cols + j]));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
}
}  // namespace detail

/// Writes H, Hs, Dv, De, P as labeled CSV sections. Debugging aid, so it
/// refuses maps beyond 256 vertices.
template <typename T>
void dump_state_csv(const HypergraphState<T>& st, std::ostream& os) {
  int64_t n = st.H.dim(0), m = st.H.dim(1);
  if (n > 256) throw ContractError("dump_state_csv: vertex count exceeds 256");
  detail::dump_matrix_csv(os, "H", st.H, n, m);
  detail::dump_matrix_csv(os, "H_sparse", st.Hs, n, m);
  detail::dump_matrix_csv(os, "Dv", st.Dv, n, 1);
  detail::dump_matrix_csv(os, "De", st.De, 1, m);
  detail::dump_matrix_csv(os, "P", st.P, n, n);
}

}  // namespace lohg
