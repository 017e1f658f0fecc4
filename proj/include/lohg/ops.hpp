#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lohg/tensor.hpp"

// Differentiable primitive ops.
//
// Broadcasting is deliberately restricted to the two forms the network needs:
//   * scalar (numel 1) against any tensor,
//   * per-channel {Bs,C,1,1} against {B,C,H,W} with Bs in {1,B}.
// Anything else is a DimensionError. Row/column scaling of matrices goes
// through the dedicated scale_rows / scale_cols ops instead of general
// broadcasting.
//
// Every reduction accumulates in double regardless of T; summation order is
// fixed, so results are bit-reproducible run to run.

namespace lohg {

namespace detail {

enum class BinKind { Same, ScalarA, ScalarB, ChannelA, ChannelB };

inline BinKind classify_binary(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return BinKind::Same;
  if (shape_numel(a) == 1) return BinKind::ScalarA;
  if (shape_numel(b) == 1) return BinKind::ScalarB;
  auto channel_like = [](const Shape& big, const Shape& small) {
    return big.size() == 4 && small.size() == 4 && small[1] == big[1] && small[2] == 1 &&
           small[3] == 1 && (small[0] == big[0] || small[0] == 1);
  };
  if (channel_like(a, b)) return BinKind::ChannelB;
  if (channel_like(b, a)) return BinKind::ChannelA;
  throw DimensionError(std::string(op) + ": unsupported operand shapes " + shape_str(a) +
                       " vs " + shape_str(b) +
                       " (supported: identical, scalar, per-channel {Bs,C,1,1})");
}

/// Shared skeleton for add/sub/mul. `f(a,b)` is the value map; `dfda`/`dfdb`
/// are its partials evaluated at the forward operands.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_pointwise(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, DA dfda,
                           DB dfdb) {
  using A = Access<T>;
  const auto& an = A::node(a);
  const auto& bn = A::node(b);
  BinKind kind = classify_binary(an->shape, bn->shape, op);

  const bool small_is_a = (kind == BinKind::ScalarA || kind == BinKind::ChannelA);
  const auto& big = small_is_a ? bn : an;
  const auto& small = small_is_a ? an : bn;

  std::vector<T> out(big->data.size());
  int64_t smallB = 1, C = 1, HW = 1;
  if (kind == BinKind::Same) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(an->data[i], bn->data[i]);
  } else if (kind == BinKind::ScalarA || kind == BinKind::ScalarB) {
    T sv = small->data[0];
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = small_is_a ? f(sv, big->data[i]) : f(big->data[i], sv);
    }
  } else {
    smallB = small->shape[0];
    C = big->shape[1];
    HW = big->shape[2] * big->shape[3];
    int64_t B = big->shape[0];
    int64_t i = 0;
    for (int64_t bb = 0; bb < B; ++bb) {
      int64_t sb = (smallB == 1) ? 0 : bb;
      for (int64_t c = 0; c < C; ++c) {
        T sv = small->data[static_cast<size_t>(sb * C + c)];
        for (int64_t p = 0; p < HW; ++p, ++i) {
          out[static_cast<size_t>(i)] = small_is_a ? f(sv, big->data[static_cast<size_t>(i)])
                                                   : f(big->data[static_cast<size_t>(i)], sv);
        }
      }
    }
  }

  Tensor<T> y = A::make_output(big->shape, std::move(out), op, {&a, &b});
  if (A::traced(y)) {
    auto yn = A::node(y);
    std::string tag = std::string(op) + ".backward";
    A::push([an, bn, yn, kind, small_is_a, smallB, C, HW, f, dfda, dfdb, tag] {
      if (yn->grad.empty()) return;
      const auto& big = small_is_a ? bn : an;
      const auto& small = small_is_a ? an : bn;
      const std::vector<T>& g = yn->grad;
      // partial of f with respect to the big / small operand at element i
      auto d_big = [&](T sv, T bv) { return small_is_a ? dfdb(sv, bv) : dfda(bv, sv); };
      auto d_small = [&](T sv, T bv) { return small_is_a ? dfda(sv, bv) : dfdb(bv, sv); };

      if (kind == BinKind::Same) {
        if (an->requires_grad) {
          std::vector<T> ga(an->data.size());
          for (size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * dfda(an->data[i], bn->data[i]);
          Access<T>::accumulate(an, ga.data(), static_cast<int64_t>(ga.size()), tag.c_str());
        }
        if (bn->requires_grad) {
          std::vector<T> gb(bn->data.size());
          for (size_t i = 0; i < gb.size(); ++i) gb[i] = g[i] * dfdb(an->data[i], bn->data[i]);
          Access<T>::accumulate(bn, gb.data(), static_cast<int64_t>(gb.size()), tag.c_str());
        }
        return;
      }
      if (kind == BinKind::ScalarA || kind == BinKind::ScalarB) {
        T sv = small->data[0];
        if (big->requires_grad) {
          std::vector<T> gb(big->data.size());
          for (size_t i = 0; i < gb.size(); ++i) gb[i] = g[i] * d_big(sv, big->data[i]);
          Access<T>::accumulate(big, gb.data(), static_cast<int64_t>(gb.size()), tag.c_str());
        }
        if (small->requires_grad) {
          double acc = 0.0;
          for (size_t i = 0; i < big->data.size(); ++i) {
            acc += static_cast<double>(g[i]) * static_cast<double>(d_small(sv, big->data[i]));
          }
          T gs = static_cast<T>(acc);
          Access<T>::accumulate(small, &gs, 1, tag.c_str());
        }
        return;
      }
      // channel broadcast
      int64_t B = big->shape[0];
      std::vector<T> gbig(big->requires_grad ? big->data.size() : 0);
      std::vector<double> gsm(small->requires_grad ? small->data.size() : 0, 0.0);
      int64_t i = 0;
      for (int64_t bb = 0; bb < B; ++bb) {
        int64_t sb = (smallB == 1) ? 0 : bb;
        for (int64_t c = 0; c < C; ++c) {
          size_t sidx = static_cast<size_t>(sb * C + c);
          T sv = small->data[sidx];
          for (int64_t p = 0; p < HW; ++p, ++i) {
            size_t ii = static_cast<size_t>(i);
            if (!gbig.empty()) gbig[ii] = g[ii] * d_big(sv, big->data[ii]);
            if (!gsm.empty()) {
              gsm[sidx] += static_cast<double>(g[ii]) * static_cast<double>(d_small(sv, big->data[ii]));
            }
          }
        }
      }
      if (!gbig.empty()) {
        Access<T>::accumulate(big, gbig.data(), static_cast<int64_t>(gbig.size()), tag.c_str());
      }
      if (!gsm.empty()) {
        std::vector<T> cast(gsm.size());
        for (size_t j = 0; j < gsm.size(); ++j) cast[j] = static_cast<T>(gsm[j]);
        Access<T>::accumulate(small, cast.data(), static_cast<int64_t>(cast.size()), tag.c_str());
      }
    });
  }
  return y;
}

template <typename T, typename F, typename D>
Tensor<T> unary_pointwise(const Tensor<T>& x, const char* op, F f, D dfdx) {
  using A = Access<T>;
  const auto& xn = A::node(x);
  std::vector<T> out(xn->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(xn->data[i]);
  Tensor<T> y = A::make_output(xn->shape, std::move(out), op, {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    std::string tag = std::string(op) + ".backward";
    A::push([xn, yn, dfdx, tag] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size());
      for (size_t i = 0; i < gx.size(); ++i) {
        gx[i] = yn->grad[i] * dfdx(xn->data[i], yn->data[i]);
      }
      Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()), tag.c_str());
    });
  }
  return y;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_pointwise(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_pointwise(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_pointwise(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  if (!std::isfinite(c)) throw ContractError("scale: non-finite constant");
  return detail::unary_pointwise(
      x, "scale", [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  if (!std::isfinite(c)) throw ContractError("add_scalar: non-finite constant");
  return detail::unary_pointwise(
      x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_pointwise(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  if (!std::isfinite(slope)) throw ContractError("leaky_relu: non-finite slope");
  return detail::unary_pointwise(
      x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto sig = [](T v) {
    if (v >= T(0)) {
      T e = std::exp(-v);
      return T(1) / (T(1) + e);
    }
    T e = std::exp(v);
    return e / (T(1) + e);
  };
  return detail::unary_pointwise(x, "sigmoid", sig,
                                 [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_pointwise(
      x, "sqrt", [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_pointwise(
      x, "abs", [](T v) { return std::fabs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return detail::unary_pointwise(
      x, "reciprocal", [](T v) { return T(1) / v; },
      [](T, T y) { return -y * y; });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using A = detail::Access<T>;
  const auto& an = A::node(a);
  const auto& bn = A::node(b);
  if (an->shape.size() != 2 || bn->shape.size() != 2 || an->shape[1] != bn->shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(an->shape) + " x " +
                         shape_str(bn->shape));
  }
  int64_t m = an->shape[0], k = an->shape[1], n = bn->shape[1];
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        acc += static_cast<double>(an->data[static_cast<size_t>(i * k + p)]) *
               static_cast<double>(bn->data[static_cast<size_t>(p * n + j)]);
      }
      out[static_cast<size_t>(i * n + j)] = static_cast<T>(acc);
    }
  }
  Tensor<T> y = A::make_output({m, n}, std::move(out), "matmul", {&a, &b});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([an, bn, yn, m, k, n] {
      if (yn->grad.empty()) return;
      const std::vector<T>& g = yn->grad;
      if (an->requires_grad) {
        std::vector<T> ga(static_cast<size_t>(m * k));
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) {
              acc += static_cast<double>(g[static_cast<size_t>(i * n + j)]) *
                     static_cast<double>(bn->data[static_cast<size_t>(p * n + j)]);
            }
            ga[static_cast<size_t>(i * k + p)] = static_cast<T>(acc);
          }
        }
        detail::Access<T>::accumulate(an, ga.data(), m * k, "matmul.backward");
      }
      if (bn->requires_grad) {
        std::vector<T> gb(static_cast<size_t>(k * n));
        for (int64_t p = 0; p < k; ++p) {
          for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < m; ++i) {
              acc += static_cast<double>(an->data[static_cast<size_t>(i * k + p)]) *
                     static_cast<double>(g[static_cast<size_t>(i * n + j)]);
            }
            gb[static_cast<size_t>(p * n + j)] = static_cast<T>(acc);
          }
        }
        detail::Access<T>::accumulate(bn, gb.data(), k * n, "matmul.backward");
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.size() != 2) {
    throw DimensionError("transpose: expected 2-d tensor, got " + shape_str(xn->shape));
  }
  int64_t m = xn->shape[0], n = xn->shape[1];
  std::vector<T> out(xn->data.size());
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      out[static_cast<size_t>(j * m + i)] = xn->data[static_cast<size_t>(i * n + j)];
    }
  }
  Tensor<T> y = A::make_output({n, m}, std::move(out), "transpose", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, m, n] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size());
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
          gx[static_cast<size_t>(i * n + j)] = yn->grad[static_cast<size_t>(j * m + i)];
        }
      }
      detail::Access<T>::accumulate(xn, gx.data(), m * n, "transpose.backward");
    });
  }
  return y;
}

/// 2-d convolution, NCHW x OIHW, zero padding. Inner products accumulate in
/// double so f32 results are insensitive to summation noise.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t pad) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  const auto& wn = A::node(w);
  const auto& bn = A::node(bias);
  if (xn->shape.size() != 4 || wn->shape.size() != 4) {
    throw DimensionError("conv2d: expected 4-d input and weight, got " + shape_str(xn->shape) +
                         " and " + shape_str(wn->shape));
  }
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
  int64_t B = xn->shape[0], Cin = xn->shape[1], H = xn->shape[2], W = xn->shape[3];
  int64_t Co = wn->shape[0], kh = wn->shape[2], kw = wn->shape[3];
  if (wn->shape[1] != Cin) {
    throw DimensionError("conv2d: weight expects " + std::to_string(wn->shape[1]) +
                         " input channels, tensor has " + std::to_string(Cin));
  }
  if (bn->shape.size() != 1 || bn->shape[0] != Co) {
    throw DimensionError("conv2d: bias shape " + shape_str(bn->shape) + " does not match " +
                         std::to_string(Co) + " output channels");
  }
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - kw) / stride + 1;

  std::vector<T> out(static_cast<size_t>(B * Co * Ho * Wo));
  auto xat = [&](int64_t b, int64_t c, int64_t i, int64_t j) {
    return xn->data[static_cast<size_t>(((b * Cin + c) * H + i) * W + j)];
  };
  auto wat = [&](int64_t o, int64_t c, int64_t i, int64_t j) {
    return wn->data[static_cast<size_t>(((o * Cin + c) * kh + i) * kw + j)];
  };
  int64_t oi = 0;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t o = 0; o < Co; ++o) {
      for (int64_t oh = 0; oh < Ho; ++oh) {
        for (int64_t ow = 0; ow < Wo; ++ow, ++oi) {
          double acc = static_cast<double>(bn->data[static_cast<size_t>(o)]);
          for (int64_t c = 0; c < Cin; ++c) {
            for (int64_t i = 0; i < kh; ++i) {
              int64_t ih = oh * stride - pad + i;
              if (ih < 0 || ih >= H) continue;
              for (int64_t j = 0; j < kw; ++j) {
                int64_t iw = ow * stride - pad + j;
                if (iw < 0 || iw >= W) continue;
                acc += static_cast<double>(xat(b, c, ih, iw)) *
                       static_cast<double>(wat(o, c, i, j));
              }
            }
          }
          out[static_cast<size_t>(oi)] = static_cast<T>(acc);
        }
      }
    }
  }
  Tensor<T> y = A::make_output({B, Co, Ho, Wo}, std::move(out), "conv2d", {&x, &w, &bias});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, wn, bn, yn, B, Cin, H, W, Co, kh, kw, Ho, Wo, stride, pad] {
      if (yn->grad.empty()) return;
      const std::vector<T>& g = yn->grad;
      std::vector<T> gx(xn->requires_grad ? xn->data.size() : 0, T(0));
      std::vector<T> gw(wn->requires_grad ? wn->data.size() : 0, T(0));
      std::vector<double> gb(bn->requires_grad ? bn->data.size() : 0, 0.0);
      int64_t oi = 0;
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t o = 0; o < Co; ++o) {
          for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow, ++oi) {
              T gv = g[static_cast<size_t>(oi)];
              if (!gb.empty()) gb[static_cast<size_t>(o)] += static_cast<double>(gv);
              if (gx.empty() && gw.empty()) continue;
              for (int64_t c = 0; c < Cin; ++c) {
                for (int64_t i = 0; i < kh; ++i) {
                  int64_t ih = oh * stride - pad + i;
                  if (ih < 0 || ih >= H) continue;
                  for (int64_t j = 0; j < kw; ++j) {
                    int64_t iw = ow * stride - pad + j;
                    if (iw < 0 || iw >= W) continue;
                    size_t xi = static_cast<size_t>(((b * Cin + c) * H + ih) * W + iw);
                    size_t wi = static_cast<size_t>(((o * Cin + c) * kh + i) * kw + j);
                    if (!gx.empty()) gx[xi] += gv * wn->data[wi];
                    if (!gw.empty()) gw[wi] += gv * xn->data[xi];
                  }
                }
              }
            }
          }
        }
      }
      if (!gx.empty()) {
        detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                      "conv2d.backward");
      }
      if (!gw.empty()) {
        detail::Access<T>::accumulate(wn, gw.data(), static_cast<int64_t>(gw.size()),
                                      "conv2d.backward");
      }
      if (!gb.empty()) {
        std::vector<T> cast(gb.size());
        for (size_t i = 0; i < gb.size(); ++i) cast[i] = static_cast<T>(gb[i]);
        detail::Access<T>::accumulate(bn, cast.data(), static_cast<int64_t>(cast.size()),
                                      "conv2d.backward");
      }
    });
  }
  return y;
}

/// Global average pooling {B,C,H,W} -> {B,C,1,1}.
template <typename T>
Tensor<T> gap(const Tensor<T>& x) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.size() != 4) {
    throw DimensionError("gap: expected 4-d tensor, got " + shape_str(xn->shape));
  }
  int64_t B = xn->shape[0], C = xn->shape[1], HW = xn->shape[2] * xn->shape[3];
  std::vector<T> out(static_cast<size_t>(B * C));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    for (int64_t p = 0; p < HW; ++p) {
      acc += static_cast<double>(xn->data[static_cast<size_t>(bc * HW + p)]);
    }
    out[static_cast<size_t>(bc)] = static_cast<T>(acc / static_cast<double>(HW));
  }
  Tensor<T> y = A::make_output({B, C, 1, 1}, std::move(out), "gap", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, B, C, HW] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size());
      T inv = static_cast<T>(1.0 / static_cast<double>(HW));
      for (int64_t bc = 0; bc < B * C; ++bc) {
        T gv = yn->grad[static_cast<size_t>(bc)] * inv;
        for (int64_t p = 0; p < HW; ++p) gx[static_cast<size_t>(bc * HW + p)] = gv;
      }
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "gap.backward");
    });
  }
  return y;
}

/// Sum of all elements -> shape {1}.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  double acc = 0.0;
  for (T v : xn->data) acc += static_cast<double>(v);
  Tensor<T> y = A::make_output({1}, {static_cast<T>(acc)}, "sum", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size(), yn->grad[0]);
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "sum.backward");
    });
  }
  return y;
}

/// Channel-axis sum {B,C,H,W} -> {B,1,H,W}.
template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.size() != 4) {
    throw DimensionError("sum_channels: expected 4-d tensor, got " + shape_str(xn->shape));
  }
  int64_t B = xn->shape[0], C = xn->shape[1], HW = xn->shape[2] * xn->shape[3];
  std::vector<T> out(static_cast<size_t>(B * HW));
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t p = 0; p < HW; ++p) {
      double acc = 0.0;
      for (int64_t c = 0; c < C; ++c) {
        acc += static_cast<double>(xn->data[static_cast<size_t>((b * C + c) * HW + p)]);
      }
      out[static_cast<size_t>(b * HW + p)] = static_cast<T>(acc);
    }
  }
  Tensor<T> y = A::make_output({B, 1, xn->shape[2], xn->shape[3]}, std::move(out), "sum_channels",
                               {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, B, C, HW] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size());
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
          for (int64_t p = 0; p < HW; ++p) {
            gx[static_cast<size_t>((b * C + c) * HW + p)] =
                yn->grad[static_cast<size_t>(b * HW + p)];
          }
        }
      }
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "sum_channels.backward");
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  using A = detail::Access<T>;
  const auto& an = A::node(a);
  const auto& bn = A::node(b);
  if (an->shape.size() != 4 || bn->shape.size() != 4 || an->shape[0] != bn->shape[0] ||
      an->shape[2] != bn->shape[2] || an->shape[3] != bn->shape[3]) {
    throw DimensionError("concat_channels: incompatible shapes " + shape_str(an->shape) +
                         " and " + shape_str(bn->shape));
  }
  int64_t B = an->shape[0], Ca = an->shape[1], Cb = bn->shape[1];
  int64_t HW = an->shape[2] * an->shape[3];
  std::vector<T> out(static_cast<size_t>(B * (Ca + Cb) * HW));
  for (int64_t bb = 0; bb < B; ++bb) {
    std::copy_n(an->data.begin() + bb * Ca * HW, Ca * HW,
                out.begin() + bb * (Ca + Cb) * HW);
    std::copy_n(bn->data.begin() + bb * Cb * HW, Cb * HW,
                out.begin() + bb * (Ca + Cb) * HW + Ca * HW);
  }
  Tensor<T> y = A::make_output({B, Ca + Cb, an->shape[2], an->shape[3]}, std::move(out),
                               "concat_channels", {&a, &b});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([an, bn, yn, B, Ca, Cb, HW] {
      if (yn->grad.empty()) return;
      if (an->requires_grad) {
        std::vector<T> ga(an->data.size());
        for (int64_t bb = 0; bb < B; ++bb) {
          std::copy_n(yn->grad.begin() + bb * (Ca + Cb) * HW, Ca * HW,
                      ga.begin() + bb * Ca * HW);
        }
        detail::Access<T>::accumulate(an, ga.data(), static_cast<int64_t>(ga.size()),
                                      "concat_channels.backward");
      }
      if (bn->requires_grad) {
        std::vector<T> gb(bn->data.size());
        for (int64_t bb = 0; bb < B; ++bb) {
          std::copy_n(yn->grad.begin() + bb * (Ca + Cb) * HW + Ca * HW, Cb * HW,
                      gb.begin() + bb * Cb * HW);
        }
        detail::Access<T>::accumulate(bn, gb.data(), static_cast<int64_t>(gb.size()),
                                      "concat_channels.backward");
      }
    });
  }
  return y;
}

/// Channels [c0, c1) of a {B,C,H,W} tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t c0, int64_t c1) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.size() != 4) {
    throw DimensionError("slice_channels: expected 4-d tensor, got " + shape_str(xn->shape));
  }
  int64_t B = xn->shape[0], C = xn->shape[1], HW = xn->shape[2] * xn->shape[3];
  if (c0 < 0 || c1 <= c0 || c1 > C) {
    throw DimensionError("slice_channels: range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") invalid for " + std::to_string(C) + " channels");
  }
  int64_t Cs = c1 - c0;
  std::vector<T> out(static_cast<size_t>(B * Cs * HW));
  for (int64_t b = 0; b < B; ++b) {
    std::copy_n(xn->data.begin() + (b * C + c0) * HW, Cs * HW, out.begin() + b * Cs * HW);
  }
  Tensor<T> y = A::make_output({B, Cs, xn->shape[2], xn->shape[3]}, std::move(out),
                               "slice_channels", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, B, C, c0, Cs, HW] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size(), T(0));
      for (int64_t b = 0; b < B; ++b) {
        std::copy_n(yn->grad.begin() + b * Cs * HW, Cs * HW, gx.begin() + (b * C + c0) * HW);
      }
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "slice_channels.backward");
    });
  }
  return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (shape_numel(shape) != static_cast<int64_t>(xn->data.size())) {
    throw DimensionError("reshape: cannot view " + shape_str(xn->shape) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out = xn->data;
  Tensor<T> y = A::make_output(std::move(shape), std::move(out), "reshape", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      detail::Access<T>::accumulate(xn, yn->grad.data(), static_cast<int64_t>(yn->grad.size()),
                                    "reshape.backward");
    });
  }
  return y;
}

/// Bilinear 2x upsampling, half-pixel centers (align_corners = false),
/// edge-replicated borders. {B,C,H,W} -> {B,C,2H,2W}.
template <typename T>
Tensor<T> upsample2x_bilinear(const Tensor<T>& x) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.size() != 4) {
    throw DimensionError("upsample2x_bilinear: expected 4-d tensor, got " + shape_str(xn->shape));
  }
  int64_t B = xn->shape[0], C = xn->shape[1], H = xn->shape[2], W = xn->shape[3];
  int64_t Ho = 2 * H, Wo = 2 * W;

  // source index pair and weight for one output coordinate on an axis
  struct Lerp {
    int64_t lo, hi;
    T w_hi;
  };
  auto make_axis = [](int64_t out_n, int64_t in_n) {
    std::vector<Lerp> v(static_cast<size_t>(out_n));
    for (int64_t o = 0; o < out_n; ++o) {
      double src = (static_cast<double>(o) + 0.5) * 0.5 - 0.5;
      int64_t lo = static_cast<int64_t>(std::floor(src));
      double frac = src - static_cast<double>(lo);
      int64_t hi = lo + 1;
      lo = std::clamp<int64_t>(lo, 0, in_n - 1);
      hi = std::clamp<int64_t>(hi, 0, in_n - 1);
      v[static_cast<size_t>(o)] = {lo, hi, static_cast<T>(frac)};
    }
    return v;
  };
  std::vector<Lerp> ay = make_axis(Ho, H);
  std::vector<Lerp> ax = make_axis(Wo, W);

  std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = xn->data.data() + bc * H * W;
    T* dst = out.data() + bc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const Lerp& ly = ay[static_cast<size_t>(oy)];
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const Lerp& lx = ax[static_cast<size_t>(ox)];
        T v00 = src[ly.lo * W + lx.lo], v01 = src[ly.lo * W + lx.hi];
        T v10 = src[ly.hi * W + lx.lo], v11 = src[ly.hi * W + lx.hi];
        T top = v00 + lx.w_hi * (v01 - v00);
        T bot = v10 + lx.w_hi * (v11 - v10);
        dst[oy * Wo + ox] = top + ly.w_hi * (bot - top);
      }
    }
  }
  Tensor<T> y = A::make_output({B, C, Ho, Wo}, std::move(out), "upsample2x_bilinear", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, B, C, H, W, Ho, Wo, ay, ax] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size(), T(0));
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* g = yn->grad.data() + bc * Ho * Wo;
        T* dst = gx.data() + bc * H * W;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const Lerp& ly = ay[static_cast<size_t>(oy)];
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const Lerp& lx = ax[static_cast<size_t>(ox)];
            T gv = g[oy * Wo + ox];
            T wy1 = ly.w_hi, wy0 = T(1) - ly.w_hi;
            T wx1 = lx.w_hi, wx0 = T(1) - lx.w_hi;
            dst[ly.lo * W + lx.lo] += gv * wy0 * wx0;
            dst[ly.lo * W + lx.hi] += gv * wy0 * wx1;
            dst[ly.hi * W + lx.lo] += gv * wy1 * wx0;
            dst[ly.hi * W + lx.hi] += gv * wy1 * wx1;
          }
        }
      }
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "upsample2x_bilinear.backward");
    });
  }
  return y;
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& x) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.size() != 2) {
    throw DimensionError("row_sum: expected 2-d tensor, got " + shape_str(xn->shape));
  }
  int64_t n = xn->shape[0], m = xn->shape[1];
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < m; ++j) acc += static_cast<double>(xn->data[static_cast<size_t>(i * m + j)]);
    out[static_cast<size_t>(i)] = static_cast<T>(acc);
  }
  Tensor<T> y = A::make_output({n, 1}, std::move(out), "row_sum", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, n, m] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size());
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
          gx[static_cast<size_t>(i * m + j)] = yn->grad[static_cast<size_t>(i)];
        }
      }
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "row_sum.backward");
    });
  }
  return y;
}

template <typename T>
Tensor<T> col_sum(const Tensor<T>& x) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.size() != 2) {
    throw DimensionError("col_sum: expected 2-d tensor, got " + shape_str(xn->shape));
  }
  int64_t n = xn->shape[0], m = xn->shape[1];
  std::vector<T> out(static_cast<size_t>(m));
  for (int64_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(xn->data[static_cast<size_t>(i * m + j)]);
    out[static_cast<size_t>(j)] = static_cast<T>(acc);
  }
  Tensor<T> y = A::make_output({1, m}, std::move(out), "col_sum", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, n, m] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size());
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
          gx[static_cast<size_t>(i * m + j)] = yn->grad[static_cast<size_t>(j)];
        }
      }
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "col_sum.backward");
    });
  }
  return y;
}

/// out(i,j) = x(i,j) * s(i), s shaped {n,1}.
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  const auto& sn = A::node(s);
  if (xn->shape.size() != 2 || sn->shape.size() != 2 || sn->shape[1] != 1 ||
      sn->shape[0] != xn->shape[0]) {
    throw DimensionError("scale_rows: shapes " + shape_str(xn->shape) + " and " +
                         shape_str(sn->shape) + " do not match {n,m} x {n,1}");
  }
  int64_t n = xn->shape[0], m = xn->shape[1];
  std::vector<T> out(xn->data.size());
  for (int64_t i = 0; i < n; ++i) {
    T sv = sn->data[static_cast<size_t>(i)];
    for (int64_t j = 0; j < m; ++j) {
      out[static_cast<size_t>(i * m + j)] = xn->data[static_cast<size_t>(i * m + j)] * sv;
    }
  }
  Tensor<T> y = A::make_output(xn->shape, std::move(out), "scale_rows", {&x, &s});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, sn, yn, n, m] {
      if (yn->grad.empty()) return;
      if (xn->requires_grad) {
        std::vector<T> gx(xn->data.size());
        for (int64_t i = 0; i < n; ++i) {
          T sv = sn->data[static_cast<size_t>(i)];
          for (int64_t j = 0; j < m; ++j) {
            gx[static_cast<size_t>(i * m + j)] = yn->grad[static_cast<size_t>(i * m + j)] * sv;
          }
        }
        detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                      "scale_rows.backward");
      }
      if (sn->requires_grad) {
        std::vector<T> gs(sn->data.size());
        for (int64_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < m; ++j) {
            acc += static_cast<double>(yn->grad[static_cast<size_t>(i * m + j)]) *
                   static_cast<double>(xn->data[static_cast<size_t>(i * m + j)]);
          }
          gs[static_cast<size_t>(i)] = static_cast<T>(acc);
        }
        detail::Access<T>::accumulate(sn, gs.data(), static_cast<int64_t>(gs.size()),
                                      "scale_rows.backward");
      }
    });
  }
  return y;
}

/// out(i,j) = x(i,j) * s(j), s shaped {1,m}.
template <typename T>
Tensor<T> scale_cols(const Tensor<T>& x, const Tensor<T>& s) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  const auto& sn = A::node(s);
  if (xn->shape.size() != 2 || sn->shape.size() != 2 || sn->shape[0] != 1 ||
      sn->shape[1] != xn->shape[1]) {
    throw DimensionError("scale_cols: shapes " + shape_str(xn->shape) + " and " +
                         shape_str(sn->shape) + " do not match {n,m} x {1,m}");
  }
  int64_t n = xn->shape[0], m = xn->shape[1];
  std::vector<T> out(xn->data.size());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      out[static_cast<size_t>(i * m + j)] =
          xn->data[static_cast<size_t>(i * m + j)] * sn->data[static_cast<size_t>(j)];
    }
  }
  Tensor<T> y = A::make_output(xn->shape, std::move(out), "scale_cols", {&x, &s});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, sn, yn, n, m] {
      if (yn->grad.empty()) return;
      if (xn->requires_grad) {
        std::vector<T> gx(xn->data.size());
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < m; ++j) {
            gx[static_cast<size_t>(i * m + j)] =
                yn->grad[static_cast<size_t>(i * m + j)] * sn->data[static_cast<size_t>(j)];
          }
        }
        detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                      "scale_cols.backward");
      }
      if (sn->requires_grad) {
        std::vector<T> gs(sn->data.size());
        for (int64_t j = 0; j < m; ++j) {
          double acc = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            acc += static_cast<double>(yn->grad[static_cast<size_t>(i * m + j)]) *
                   static_cast<double>(xn->data[static_cast<size_t>(i * m + j)]);
          }
          gs[static_cast<size_t>(j)] = static_cast<T>(acc);
        }
        detail::Access<T>::accumulate(sn, gs.data(), static_cast<int64_t>(gs.size()),
                                      "scale_cols.backward");
      }
    });
  }
  return y;
}

/// Item b along axis 0, keeping a leading axis of extent 1.
template <typename T>
Tensor<T> select_batch(const Tensor<T>& x, int64_t b) {
  using A = detail::Access<T>;
  const auto& xn = A::node(x);
  if (xn->shape.empty()) throw DimensionError("select_batch: tensor has no axes");
  int64_t B = xn->shape[0];
  if (b < 0 || b >= B) {
    throw DimensionError("select_batch: index " + std::to_string(b) + " out of range [0, " +
                         std::to_string(B) + ")");
  }
  int64_t inner = static_cast<int64_t>(xn->data.size()) / B;
  std::vector<T> out(static_cast<size_t>(inner));
  std::copy_n(xn->data.begin() + b * inner, inner, out.begin());
  Shape oshape = xn->shape;
  oshape[0] = 1;
  Tensor<T> y = A::make_output(std::move(oshape), std::move(out), "select_batch", {&x});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([xn, yn, b, inner] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      std::vector<T> gx(xn->data.size(), T(0));
      std::copy_n(yn->grad.begin(), inner, gx.begin() + b * inner);
      detail::Access<T>::accumulate(xn, gx.data(), static_cast<int64_t>(gx.size()),
                                    "select_batch.backward");
    });
  }
  return y;
}

/// Stacks tensors along axis 0; every part must have leading extent 1 and
/// identical trailing extents.
template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  using A = detail::Access<T>;
  if (parts.empty()) throw ContractError("concat_batch: no inputs");
  const auto& first = A::node(parts[0]);
  if (first->shape.empty() || first->shape[0] != 1) {
    throw DimensionError("concat_batch: parts must have leading extent 1");
  }
  for (const auto& p : parts) {
    if (A::node(p)->shape != first->shape) {
      throw DimensionError("concat_batch: mismatched part shapes " + shape_str(first->shape) +
                           " vs " + shape_str(A::node(p)->shape));
    }
  }
  int64_t inner = static_cast<int64_t>(first->data.size());
  int64_t B = static_cast<int64_t>(parts.size());
  std::vector<T> out(static_cast<size_t>(B * inner));
  for (int64_t b = 0; b < B; ++b) {
    std::copy_n(A::node(parts[b])->data.begin(), inner, out.begin() + b * inner);
  }
  Shape oshape = first->shape;
  oshape[0] = B;

  std::vector<const Tensor<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  Tensor<T> y = A::make_output_n(std::move(oshape), std::move(out), "concat_batch", ptrs);
  if (A::traced(y)) {
    auto yn = A::node(y);
    std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(A::node(p));
    A::push([nodes, yn, inner] {
      if (yn->grad.empty()) return;
      for (size_t b = 0; b < nodes.size(); ++b) {
        if (!nodes[b]->requires_grad) continue;
        detail::Access<T>::accumulate(nodes[b], yn->grad.data() + b * static_cast<size_t>(inner),
                                      inner, "concat_batch.backward");
      }
    });
  }
  return y;
}

}  // namespace lohg
