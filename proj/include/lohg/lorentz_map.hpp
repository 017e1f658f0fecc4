#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lohg/lorentz.hpp"
#include "lohg/ops.hpp"
#include "lohg/tensor.hpp"

// Batched hyperboloid features: a map stores one Lorentz point per pixel as a
// {B, 1+C, H, W} tensor whose channel 0 is temporal. Semantics per pixel match
// the scalar functions in lorentz.hpp exactly; tests cross-check this with
// per-pixel loops.

namespace lohg {

template <typename T>
struct LorentzMap {
  Tensor<T> full;  // {B, 1+C, H, W}
  T k = T(1);

  int64_t spatial_channels() const { return full.dim(1) - 1; }
  Tensor<T> temporal() const { return slice_channels(full, 0, 1); }
  Tensor<T> spatial() const { return slice_channels(full, 1, full.dim(1)); }
};

namespace lorentz_detail {

template <typename T>
void require_map(const Tensor<T>& full, const char* op) {
  if (!full.defined() || full.ndim() != 4) {
    throw DimensionError(std::string(op) + ": expected a 4-d {B,1+C,H,W} tensor");
  }
  if (full.dim(1) < 2) {
    throw DimensionError(std::string(op) + ": a Lorentz map needs at least 2 channels");
  }
}

}  // namespace lorentz_detail

/// Lifts spatial features onto the manifold: t = sqrt(k + |s|^2) per pixel.
/// Fully differentiable composite.
template <typename T>
LorentzMap<T> map_from_spatial(const Tensor<T>& spatial, T k) {
  lorentz_detail::require_curvature(k, "map_from_spatial");
  if (!spatial.defined() || spatial.ndim() != 4) {
    throw DimensionError("map_from_spatial: expected a 4-d {B,C,H,W} tensor");
  }
  Tensor<T> q = sum_channels(mul(spatial, spatial));
  Tensor<T> t = sqrt(add_scalar(q, k));
  LorentzMap<T> m;
  m.full = concat_channels(t, spatial);
  m.k = k;
  return m;
}

/// Drops the temporal channel of a raw map and reconstructs it.
template <typename T>
LorentzMap<T> map_project(const Tensor<T>& raw, T k) {
  lorentz_detail::require_map(raw, "map_project");
  return map_from_spatial(slice_channels(raw, 1, raw.dim(1)), k);
}

/// Largest per-pixel defect of the manifold constraint. Diagnostic only, not
/// differentiable; accumulates in double.
template <typename T>
double map_residual_max(const LorentzMap<T>& m) {
  lorentz_detail::require_map(m.full, "map_residual_max");
  auto d = m.full.data();
  int64_t B = m.full.dim(0), C1 = m.full.dim(1);
  int64_t HW = m.full.dim(2) * m.full.dim(3);
  double worst = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t p = 0; p < HW; ++p) {
      double t = static_cast<double>(d[static_cast<size_t>((b * C1) * HW + p)]);
      double q = 0.0;
      for (int64_t c = 1; c < C1; ++c) {
        double v = static_cast<double>(d[static_cast<size_t>((b * C1 + c) * HW + p)]);
        q += v * v;
      }
      worst = std::max(worst, std::fabs(-t * t + q + static_cast<double>(m.k)));
    }
  }
  return worst;
}

/// Spatial part of log_o per pixel as one fused differentiable op:
///   y_c = g(u) s_c with u = |s| and g(u) = sqrt(k) asinh(u / sqrt(k)) / u,
/// which is d(o,x)/|v| since the tangent direction at the origin is [0, s].
/// Pixels with u below the guard output exact zeros and backpropagate the
/// g -> 1 limit, so finite-difference probes that cross the guard agree.
template <typename T>
Tensor<T> log_map_spatial(const LorentzMap<T>& m) {
  using A = detail::Access<T>;
  lorentz_detail::require_map(m.full, "log_map_spatial");
  lorentz_detail::require_curvature(m.k, "log_map_spatial");
  Tensor<T> s = m.spatial();
  const auto& sn = A::node(s);
  int64_t B = s.dim(0), C = s.dim(1), H = s.dim(2), W = s.dim(3);
  int64_t HW = H * W;
  const double k = static_cast<double>(m.k);
  const double sk = std::sqrt(k);

  // per-pixel u and g(u), shared with the backward closure
  auto pix = std::make_shared<std::vector<double>>(static_cast<size_t>(2 * B * HW));
  std::vector<T> out(sn->data.size());
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t p = 0; p < HW; ++p) {
      double q = 0.0;
      for (int64_t c = 0; c < C; ++c) {
        double v = static_cast<double>(sn->data[static_cast<size_t>((b * C + c) * HW + p)]);
        q += v * v;
      }
      double u = std::sqrt(q);
      double g;
      if (u < log_zero_guard) {
        g = 0.0;  // forward uses exact zeros below the guard
        for (int64_t c = 0; c < C; ++c) out[static_cast<size_t>((b * C + c) * HW + p)] = T(0);
      } else {
        g = sk * std::asinh(u / sk) / u;
        for (int64_t c = 0; c < C; ++c) {
          size_t i = static_cast<size_t>((b * C + c) * HW + p);
          out[i] = static_cast<T>(static_cast<double>(sn->data[i]) * g);
        }
      }
      (*pix)[static_cast<size_t>(2 * (b * HW + p))] = u;
      (*pix)[static_cast<size_t>(2 * (b * HW + p) + 1)] = g;
    }
  }
  Tensor<T> y = A::make_output({B, C, H, W}, std::move(out), "log_map_spatial", {&s});
  if (A::traced(y)) {
    auto yn = A::node(y);
    A::push([sn, yn, pix, B, C, HW, k, sk] {
      if (yn->grad.empty() || !sn->requires_grad) return;
      std::vector<T> gs(sn->data.size());
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t p = 0; p < HW; ++p) {
          double u = (*pix)[static_cast<size_t>(2 * (b * HW + p))];
          double g = (*pix)[static_cast<size_t>(2 * (b * HW + p) + 1)];
          if (u < log_zero_guard) {
            // limit u -> 0: g -> 1, dg/du -> 0
            for (int64_t c = 0; c < C; ++c) {
              size_t i = static_cast<size_t>((b * C + c) * HW + p);
              gs[i] = yn->grad[i];
            }
            continue;
          }
          double t = std::sqrt(k + u * u);
          double d = g * u;  // geodesic distance
          double dg = (u * sk / t - d) / (u * u);
          double dot = 0.0;
          for (int64_t c = 0; c < C; ++c) {
            size_t i = static_cast<size_t>((b * C + c) * HW + p);
            dot += static_cast<double>(yn->grad[i]) * static_cast<double>(sn->data[i]);
          }
          double f = dg / u * dot;
          for (int64_t c = 0; c < C; ++c) {
            size_t i = static_cast<size_t>((b * C + c) * HW + p);
            gs[i] = static_cast<T>(g * static_cast<double>(yn->grad[i]) +
                                   f * static_cast<double>(sn->data[i]));
          }
        }
      }
      detail::Access<T>::accumulate(sn, gs.data(), static_cast<int64_t>(gs.size()),
                                    "log_map_spatial.backward");
    });
  }
  return y;
}

}  // namespace lohg
