#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "lohg/error.hpp"

// Origin-anchored geometry of the hyperboloid model with curvature magnitude
// k > 0: points x = [t, s] with <x,x>_L = -t^2 + |s|^2 = -k and t > 0, origin
// o = [sqrt(k), 0]. All temporal components sit in slot 0.
//
// The geodesic distance from the origin is evaluated as
//   d(o, x) = sqrt(k) * asinh(|s| / sqrt(k)),
// which equals sqrt(k) * arcosh(t / sqrt(k)) on the manifold but stays fully
// accurate near the origin where the arcosh form cancels catastrophically in
// single precision.

namespace lohg {

/// Tolerance for manifold-membership checks, scaled by max(1, k + |s|^2).
template <typename T>
inline constexpr T manifold_eps = std::is_same_v<T, float> ? T(1e-4) : T(1e-9);

/// Tangent norms below this are treated as exactly zero by the log map.
inline constexpr double log_zero_guard = 1e-7;

template <typename T>
struct LorentzPoint {
  T t = T(0);         // temporal component, always > 0
  std::vector<T> s;   // spatial components
  T k = T(1);         // curvature magnitude

  int64_t spatial_dim() const { return static_cast<int64_t>(s.size()); }
};

/// Tangent vector at the origin in full coordinates; slot 0 is temporal and is
/// ~0 for any vector actually tangent at o.
template <typename T>
struct Tangent {
  std::vector<T> v;
  T k = T(1);

  int64_t spatial_dim() const { return static_cast<int64_t>(v.size()) - 1; }
};

namespace lorentz_detail {

template <typename T>
void require_curvature(T k, const char* op) {
  if (!(k > T(0)) || !std::isfinite(k)) {
    throw ContractError(std::string(op) + ": curvature must be positive and finite");
  }
}

template <typename T>
void require_finite(std::span<const T> v, const char* op) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(op) + ": non-finite component at index " +
                         std::to_string(i));
    }
  }
}

template <typename T>
double sum_squares(std::span<const T> v) {
  double acc = 0.0;
  for (T x : v) acc += static_cast<double>(x) * static_cast<double>(x);
  return acc;
}

}  // namespace lorentz_detail

/// Lorentzian inner product of two full-coordinate vectors.
template <typename T>
double lorentz_inner_raw(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DimensionError("lorentz_inner: vectors must share a size of at least 2");
  }
  double acc = -static_cast<double>(x[0]) * static_cast<double>(y[0]);
  for (size_t i = 1; i < x.size(); ++i) {
    acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  }
  return acc;
}

template <typename T>
double lorentz_inner(const LorentzPoint<T>& x, const LorentzPoint<T>& y) {
  if (x.k != y.k) throw ContractError("lorentz_inner: curvature mismatch");
  if (x.s.size() != y.s.size()) throw DimensionError("lorentz_inner: spatial dims differ");
  double acc = -static_cast<double>(x.t) * static_cast<double>(y.t);
  for (size_t i = 0; i < x.s.size(); ++i) {
    acc += static_cast<double>(x.s[i]) * static_cast<double>(y.s[i]);
  }
  return acc;
}

template <typename T>
LorentzPoint<T> origin_point(int64_t spatial_dim, T k) {
  lorentz_detail::require_curvature(k, "origin_point");
  if (spatial_dim < 1) throw DimensionError("origin_point: spatial_dim must be >= 1");
  LorentzPoint<T> p;
  p.t = static_cast<T>(std::sqrt(static_cast<double>(k)));
  p.s.assign(static_cast<size_t>(spatial_dim), T(0));
  p.k = k;
  return p;
}

/// Lifts spatial components onto the manifold: t = sqrt(k + |s|^2).
template <typename T>
LorentzPoint<T> reconstruct_point(std::span<const T> s, T k) {
  lorentz_detail::require_curvature(k, "reconstruct_point");
  if (s.empty()) throw DimensionError("reconstruct_point: empty spatial vector");
  lorentz_detail::require_finite(s, "reconstruct_point");
  LorentzPoint<T> p;
  p.s.assign(s.begin(), s.end());
  p.k = k;
  p.t = static_cast<T>(
      std::sqrt(static_cast<double>(k) + lorentz_detail::sum_squares(s)));
  return p;
}

/// Validating constructor from explicit full coordinates.
template <typename T>
LorentzPoint<T> from_components(T t, std::span<const T> s, T k) {
  lorentz_detail::require_curvature(k, "from_components");
  if (s.empty()) throw DimensionError("from_components: empty spatial vector");
  lorentz_detail::require_finite(s, "from_components");
  if (!std::isfinite(t)) throw NumericError("from_components: non-finite temporal component");
  if (!(t > T(0))) throw ContractError("from_components: temporal component must be positive");
  double q = lorentz_detail::sum_squares(s);
  double residual = std::fabs(-static_cast<double>(t) * static_cast<double>(t) + q +
                              static_cast<double>(k));
  double tol = 10.0 * static_cast<double>(manifold_eps<T>) *
               std::max(1.0, static_cast<double>(k) + q);
  if (residual > tol) {
    throw ContractError("from_components: coordinates violate the manifold constraint, residual " +
                        std::to_string(residual));
  }
  LorentzPoint<T> p;
  p.t = t;
  p.s.assign(s.begin(), s.end());
  p.k = k;
  return p;
}

/// Drops the temporal slot of a raw ambient vector and reconstructs it.
template <typename T>
LorentzPoint<T> project_to_manifold(std::span<const T> raw, T k) {
  if (raw.size() < 2) throw DimensionError("project_to_manifold: need at least 2 components");
  return reconstruct_point(raw.subspan(1), k);
}

/// |<x,x>_L + k|, the defect of the manifold constraint.
template <typename T>
double manifold_residual(const LorentzPoint<T>& p) {
  return std::fabs(-static_cast<double>(p.t) * static_cast<double>(p.t) +
                   lorentz_detail::sum_squares(std::span<const T>(p.s)) +
                   static_cast<double>(p.k));
}

/// Geodesic distance from the origin of the same curvature.
template <typename T>
T geodesic_distance_origin(const LorentzPoint<T>& x) {
  double k = static_cast<double>(x.k);
  double sk = std::sqrt(k);
  double u = std::sqrt(lorentz_detail::sum_squares(std::span<const T>(x.s)));
  return static_cast<T>(sk * std::asinh(u / sk));
}

template <typename T>
T geodesic_distance(const LorentzPoint<T>& o, const LorentzPoint<T>& x) {
  if (o.k != x.k) throw ContractError("geodesic_distance: curvature mismatch");
  if (o.s.size() != x.s.size()) throw DimensionError("geodesic_distance: spatial dims differ");
  double onorm = lorentz_detail::sum_squares(std::span<const T>(o.s));
  if (onorm != 0.0) {
    throw ContractError("geodesic_distance: first argument must be the origin");
  }
  return geodesic_distance_origin(x);
}

/// Builds a tangent vector at the origin from spatial components.
template <typename T>
Tangent<T> tangent_from_spatial(std::span<const T> s, T k) {
  lorentz_detail::require_curvature(k, "tangent_from_spatial");
  if (s.empty()) throw DimensionError("tangent_from_spatial: empty spatial vector");
  lorentz_detail::require_finite(s, "tangent_from_spatial");
  Tangent<T> tg;
  tg.v.assign(s.size() + 1, T(0));
  std::copy(s.begin(), s.end(), tg.v.begin() + 1);
  tg.k = k;
  return tg;
}

/// Lorentzian norm of a tangent vector at the origin (spacelike, so >= 0).
template <typename T>
double tangent_norm(const Tangent<T>& tg) {
  double q = -static_cast<double>(tg.v[0]) * static_cast<double>(tg.v[0]) +
             lorentz_detail::sum_squares(std::span<const T>(tg.v).subspan(1));
  return std::sqrt(std::max(0.0, q));
}

/// Unnormalized tangent direction toward x: v = x + (<o,x>_L / k) o, computed
/// literally. The temporal slot cancels algebraically; what remains is
/// floating-point residue, kept so downstream checks see honest numbers.
template <typename T>
Tangent<T> tangent_direction_origin(const LorentzPoint<T>& x) {
  double k = static_cast<double>(x.k);
  double sk = std::sqrt(k);
  double inner = -sk * static_cast<double>(x.t);  // <o,x>_L with o = [sqrt(k), 0]
  Tangent<T> tg;
  tg.k = x.k;
  tg.v.resize(x.s.size() + 1);
  tg.v[0] = static_cast<T>(static_cast<double>(x.t) + inner / k * sk);
  for (size_t i = 0; i < x.s.size(); ++i) tg.v[i + 1] = x.s[i];
  return tg;
}

/// log_o(x) = d(o,x) * v / |v|; vectors with |v| under the guard map to zero.
template <typename T>
Tangent<T> log_map_origin(const LorentzPoint<T>& x) {
  Tangent<T> tg = tangent_direction_origin(x);
  double norm = tangent_norm(tg);
  if (norm < log_zero_guard) {
    std::fill(tg.v.begin(), tg.v.end(), T(0));
    return tg;
  }
  double d = static_cast<double>(geodesic_distance_origin(x));
  double f = d / norm;
  for (auto& c : tg.v) c = static_cast<T>(static_cast<double>(c) * f);
  return tg;
}

/// exp_o(v) = cosh(|v|/sqrt(k)) o + sqrt(k) sinh(|v|/sqrt(k)) v/|v|.
template <typename T>
LorentzPoint<T> exp_map_origin(const Tangent<T>& tg) {
  lorentz_detail::require_curvature(tg.k, "exp_map_origin");
  if (tg.v.size() < 2) throw DimensionError("exp_map_origin: need at least 2 components");
  lorentz_detail::require_finite(std::span<const T>(tg.v), "exp_map_origin");
  double k = static_cast<double>(tg.k);
  double sk = std::sqrt(k);
  double r = tangent_norm(tg);
  if (std::fabs(static_cast<double>(tg.v[0])) >
      static_cast<double>(manifold_eps<T>) * std::max(1.0, r)) {
    throw ContractError("exp_map_origin: vector is not tangent at the origin");
  }
  LorentzPoint<T> p;
  p.k = tg.k;
  p.s.assign(tg.v.size() - 1, T(0));
  if (r == 0.0) {
    p.t = static_cast<T>(sk);
    return p;
  }
  double scale = sk * std::sinh(r / sk) / r;
  for (size_t i = 0; i < p.s.size(); ++i) {
    p.s[i] = static_cast<T>(static_cast<double>(tg.v[i + 1]) * scale);
  }
  p.t = static_cast<T>(sk * std::cosh(r / sk));
  return p;
}

}  // namespace lohg
