#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lohg/error.hpp"
#include "lohg/rng.hpp"
#include "lohg/tensor.hpp"

namespace lohg {

/// Recipe for one synthetic infrared scene: small Gaussian targets over
/// box-blurred uniform clutter plus white noise.
struct SceneSpec {
  int64_t width = 64;
  int64_t height = 64;
  int64_t num_targets = 3;
  double sigma_lo = 0.5;
  double sigma_hi = 2.0;
  double amp_lo = 0.3;
  double amp_hi = 1.0;
  int64_t clutter_smoothness = 4;  // box blur radius, pixels
  double noise_std = 0.02;
  uint64_t seed = 0;
  /// Entry t pins target t's center (y, x) verbatim, bypassing placement
  /// checks; targets beyond the list are placed randomly.
  std::vector<std::array<double, 2>> forced_centers;
};

template <typename T>
struct Scene {
  Tensor<T> image;  // {1, H, W}, clipped to [0, 1]
  Tensor<T> mask;   // {1, H, W}, 0/1; union of per-target half-peak supports
  std::vector<std::array<double, 2>> centroids;  // generating centers (y, x)
};

namespace detail {

/// Mean filter with a clamped window, normalized by the live window size.
inline void box_blur(std::vector<double>& f, int64_t h, int64_t w, int64_t r) {
  if (r <= 0) return;
  std::vector<double> tmp(f.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int64_t lo = std::max<int64_t>(0, x - r), hi = std::min(w - 1, x + r);
      double s = 0.0;
      for (int64_t k = lo; k <= hi; ++k) s += f[static_cast<size_t>(y * w + k)];
      tmp[static_cast<size_t>(y * w + x)] = s / static_cast<double>(hi - lo + 1);
    }
  for (int64_t x = 0; x < w; ++x)
    for (int64_t y = 0; y < h; ++y) {
      int64_t lo = std::max<int64_t>(0, y - r), hi = std::min(h - 1, y + r);
      double s = 0.0;
      for (int64_t k = lo; k <= hi; ++k) s += tmp[static_cast<size_t>(k * w + x)];
      f[static_cast<size_t>(y * w + x)] = s / static_cast<double>(hi - lo + 1);
    }
}

struct HalfPeakStats {
  int64_t pixels = 0;
  double cy = 0.0;
  double cx = 0.0;
};

/// Pixels where this target's own field exceeds half its peak: d^2 < 2 ln2 s^2.
inline HalfPeakStats half_peak_stats(double cy, double cx, double sigma, int64_t h, int64_t w) {
  double r2 = 2.0 * std::log(2.0) * sigma * sigma;
  double r = std::sqrt(r2);
  HalfPeakStats st;
  double sy = 0.0, sx = 0.0;
  int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - r)));
  int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(cy + r)));
  int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - r)));
  int64_t x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(cx + r)));
  for (int64_t y = y0; y <= y1; ++y)
    for (int64_t x = x0; x <= x1; ++x) {
      double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx < r2) {
        ++st.pixels;
        sy += static_cast<double>(y);
        sx += static_cast<double>(x);
      }
    }
  if (st.pixels > 0) {
    st.cy = sy / static_cast<double>(st.pixels);
    st.cx = sx / static_cast<double>(st.pixels);
  }
  return st;
}

}  // namespace detail

/// Fully reproducible from the seed: the draw order is clutter field, then per
/// target (sigma, amplitude, center attempts), then the noise field.
template <typename T>
Scene<T> generate(const SceneSpec& spec) {
  if (spec.width < 1 || spec.height < 1) throw ContractError("generate: extents must be positive");
  if (spec.num_targets < 0) throw ContractError("generate: num_targets must be nonnegative");
  if (!(spec.sigma_lo > 0.0) || spec.sigma_hi < spec.sigma_lo)
    throw ContractError("generate: sigma range must be positive and ordered");
  if (!(spec.amp_lo > 0.0) || spec.amp_hi < spec.amp_lo)
    throw ContractError("generate: amplitude range must be positive and ordered");
  if (spec.clutter_smoothness < 0 || spec.noise_std < 0.0)
    throw ContractError("generate: smoothness and noise_std must be nonnegative");

  const int64_t h = spec.height, w = spec.width;
  const size_t n = static_cast<size_t>(h * w);
  Rng rng(spec.seed);

  // Background: blurred uniform noise, min-max normalized, held at a dim level
  // so targets stay the brightest structures.
  constexpr double kClutterLevel = 0.3;
  std::vector<double> clutter(n);
  for (size_t i = 0; i < n; ++i) clutter[i] = rng.uniform();
  detail::box_blur(clutter, h, w, spec.clutter_smoothness);
  double lo = clutter[0], hi = clutter[0];
  for (double v : clutter) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi > lo)
    for (double& v : clutter) v = kClutterLevel * (v - lo) / (hi - lo);
  else
    for (double& v : clutter) v = 0.0;

  const double ln2x2 = 2.0 * std::log(2.0);
  std::vector<double> field(n, 0.0);
  std::vector<uint8_t> mask(n, 0);
  std::vector<std::array<double, 2>> centers;
  std::vector<double> half_radii;

  for (int64_t t = 0; t < spec.num_targets; ++t) {
    double sigma = rng.uniform(spec.sigma_lo, spec.sigma_hi);
    double amp = rng.uniform(spec.amp_lo, spec.amp_hi);
    double rhalf = sigma * std::sqrt(ln2x2);
    double cy = 0.0, cx = 0.0;
    if (static_cast<size_t>(t) < spec.forced_centers.size()) {
      cy = spec.forced_centers[static_cast<size_t>(t)][0];
      cx = spec.forced_centers[static_cast<size_t>(t)][1];
    } else {
      // Keep the 3-sigma footprint inside the frame, masks of distinct targets
      // separated, and the discretized support centered on its generator.
      double margin = std::ceil(3.0 * sigma);
      double ylo = margin, yhi = static_cast<double>(h - 1) - margin;
      double xlo = margin, xhi = static_cast<double>(w - 1) - margin;
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        if (ylo > yhi || xlo > xhi) break;
        cy = rng.uniform(ylo, yhi);
        cx = rng.uniform(xlo, xhi);
        bool clear = true;
        for (size_t j = 0; j < centers.size(); ++j) {
          double d = std::hypot(cy - centers[j][0], cx - centers[j][1]);
          if (d < rhalf + half_radii[j] + 2.0) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        detail::HalfPeakStats st = detail::half_peak_stats(cy, cx, sigma, h, w);
        if (st.pixels < 1 || std::hypot(st.cy - cy, st.cx - cx) > 0.45) continue;
        placed = true;
      }
      if (!placed)
        throw GenerationError("generate: could not place target " + std::to_string(t) +
                              " after 1000 attempts");
    }
    centers.push_back({cy, cx});
    half_radii.push_back(rhalf);

    double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        double d2 = dy * dy + dx * dx;
        field[static_cast<size_t>(y * w + x)] += amp * std::exp(-d2 * inv2s2);
        if (d2 < ln2x2 * sigma * sigma) mask[static_cast<size_t>(y * w + x)] = 1;
      }
  }

  std::vector<T> img(n), msk(n);
  for (size_t i = 0; i < n; ++i) {
    double v = clutter[i] + field[i] + rng.normal() * spec.noise_std;
    img[i] = static_cast<T>(std::min(1.0, std::max(0.0, v)));
    msk[i] = static_cast<T>(mask[i]);
  }
  Scene<T> scene;
  scene.image = Tensor<T>::from({1, h, w}, std::move(img));
  scene.mask = Tensor<T>::from({1, h, w}, std::move(msk));
  scene.centroids = std::move(centers);
  return scene;
}

}  // namespace lohg
