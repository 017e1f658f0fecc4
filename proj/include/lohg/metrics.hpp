#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "lohg/error.hpp"
#include "lohg/tensor.hpp"

namespace lohg {

/// Binary mask, row-major, values restricted to {0, 1}.
struct Mask {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<uint8_t> v;

  uint8_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
  int64_t numel() const { return h * w; }
};

inline void require_binary(const Mask& m, const char* where) {
  if (m.h < 0 || m.w < 0 || m.v.size() != static_cast<size_t>(m.h * m.w))
    throw DimensionError(std::string(where) + ": mask storage does not match its extents");
  for (uint8_t x : m.v)
    if (x > 1) throw ContractError(std::string(where) + ": mask is not binary");
}

inline void require_same_shape(const Mask& a, const Mask& b, const char* where) {
  if (a.h != b.h || a.w != b.w)
    throw DimensionError(std::string(where) + ": mask shapes differ");
}

/// Threshold a probability map with a strict comparison: mask = (pred > tau).
/// Accepts any tensor whose trailing two axes are H, W with all leading axes 1.
template <typename T>
Mask binarize(const Tensor<T>& pred, double tau = 0.5) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractError("binarize: tau must lie in (0, 1)");
  const Shape& s = pred.shape();
  if (s.size() < 2) throw DimensionError("binarize: need at least 2 axes");
  for (size_t i = 0; i + 2 < s.size(); ++i)
    if (s[i] != 1) throw DimensionError("binarize: leading axes must be singleton");
  Mask m;
  m.h = s[s.size() - 2];
  m.w = s[s.size() - 1];
  m.v.resize(static_cast<size_t>(m.h * m.w));
  auto d = pred.data();
  for (size_t i = 0; i < m.v.size(); ++i)
    m.v[i] = static_cast<double>(d[i]) > tau ? 1 : 0;
  return m;
}

/// Strict-threshold binarization of a raw row-major buffer.
inline Mask binarize(const std::vector<double>& values, int64_t h, int64_t w, double tau = 0.5) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractError("binarize: tau must lie in (0, 1)");
  if (values.size() != static_cast<size_t>(h * w))
    throw DimensionError("binarize: buffer size does not match extents");
  Mask m;
  m.h = h;
  m.w = w;
  m.v.resize(values.size());
  for (size_t i = 0; i < values.size(); ++i) m.v[i] = values[i] > tau ? 1 : 0;
  return m;
}

struct PixelCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
};

inline PixelCounts pixel_counts(const Mask& pred, const Mask& gt) {
  require_binary(pred, "pixel_counts");
  require_binary(gt, "pixel_counts");
  require_same_shape(pred, gt, "pixel_counts");
  PixelCounts c;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    if (pred.v[i] && gt.v[i]) ++c.tp;
    else if (pred.v[i]) ++c.fp;
    else if (gt.v[i]) ++c.fn;
  }
  return c;
}

/// Empty-vs-empty convention: a ratio whose denominator vanishes because both
/// masks are empty scores 1; if exactly one side is empty the numerator is
/// already 0, so the ratio is 0 without a special case.
inline double iou_from(const PixelCounts& c) {
  int64_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double precision_from(const PixelCounts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

inline double recall_from(const PixelCounts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

/// F-measure from counts directly: 2TP/(2TP+FP+FN) equals 2PR/(P+R) wherever
/// the latter is defined and sidesteps its 0/0 cases.
inline double f_from(const PixelCounts& c) {
  int64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

struct PixelMetrics {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

inline PixelMetrics pixel_metrics(const Mask& pred, const Mask& gt) {
  PixelCounts c = pixel_counts(pred, gt);
  return {iou_from(c), precision_from(c), recall_from(c), f_from(c)};
}

/// Mean of per-image IoU. An image empty on both sides contributes 1 by the
/// empty-vs-empty convention; an empty list scores 1 vacuously.
inline double niou(const std::vector<PixelCounts>& per_image) {
  if (per_image.empty()) return 1.0;
  double acc = 0.0;
  for (const PixelCounts& c : per_image) acc += iou_from(c);
  return acc / static_cast<double>(per_image.size());
}

/// One 8-connected component of set pixels.
struct Component {
  int64_t pixels = 0;
  double cy = 0.0;
  double cx = 0.0;
};

/// Deterministic labeling: components appear in raster order of their first pixel.
inline std::vector<Component> components8(const Mask& m) {
  require_binary(m, "components8");
  std::vector<int32_t> label(m.v.size(), -1);
  std::vector<Component> out;
  std::vector<int64_t> stack;
  for (int64_t y = 0; y < m.h; ++y)
    for (int64_t x = 0; x < m.w; ++x) {
      int64_t i = y * m.w + x;
      if (!m.v[static_cast<size_t>(i)] || label[static_cast<size_t>(i)] >= 0) continue;
      int32_t id = static_cast<int32_t>(out.size());
      out.push_back({});
      label[static_cast<size_t>(i)] = id;
      stack.push_back(i);
      double sy = 0.0, sx = 0.0;
      int64_t n = 0;
      while (!stack.empty()) {
        int64_t j = stack.back();
        stack.pop_back();
        int64_t jy = j / m.w, jx = j % m.w;
        sy += static_cast<double>(jy);
        sx += static_cast<double>(jx);
        ++n;
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            int64_t ny = jy + dy, nx = jx + dx;
            if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w) continue;
            int64_t k = ny * m.w + nx;
            if (m.v[static_cast<size_t>(k)] && label[static_cast<size_t>(k)] < 0) {
              label[static_cast<size_t>(k)] = id;
              stack.push_back(k);
            }
          }
      }
      out[static_cast<size_t>(id)] = {n, sy / static_cast<double>(n), sx / static_cast<double>(n)};
    }
  return out;
}

struct TargetMatch {
  int64_t gt = -1;
  int64_t pred = -1;
  double dist = 0.0;
};

struct TargetEval {
  int64_t gt_targets = 0;
  int64_t detected = 0;
  int64_t false_pixels = 0;  // pixels of predicted components left unmatched
  int64_t total_pixels = 0;
  std::vector<TargetMatch> matches;
};

/// A ground-truth target counts as detected when some predicted component
/// centroid lies within `radius` (inclusive) of its centroid. Pairs are
/// assigned greedily by (distance, gt index, pred index), so each predicted
/// component backs at most one target and ties resolve deterministically.
inline TargetEval target_metrics(const Mask& pred, const Mask& gt, double radius = 3.0) {
  require_binary(pred, "target_metrics");
  require_binary(gt, "target_metrics");
  require_same_shape(pred, gt, "target_metrics");
  std::vector<Component> pc = components8(pred);
  std::vector<Component> gc = components8(gt);

  std::vector<std::tuple<double, int64_t, int64_t>> pairs;
  for (size_t g = 0; g < gc.size(); ++g)
    for (size_t p = 0; p < pc.size(); ++p) {
      double d = std::hypot(pc[p].cy - gc[g].cy, pc[p].cx - gc[g].cx);
      if (d <= radius) pairs.emplace_back(d, static_cast<int64_t>(g), static_cast<int64_t>(p));
    }
  std::sort(pairs.begin(), pairs.end());

  TargetEval ev;
  ev.gt_targets = static_cast<int64_t>(gc.size());
  ev.total_pixels = pred.numel();
  std::vector<bool> gt_used(gc.size(), false), pred_used(pc.size(), false);
  for (const auto& [d, g, p] : pairs) {
    if (gt_used[static_cast<size_t>(g)] || pred_used[static_cast<size_t>(p)]) continue;
    gt_used[static_cast<size_t>(g)] = true;
    pred_used[static_cast<size_t>(p)] = true;
    ev.matches.push_back({g, p, d});
    ++ev.detected;
  }
  for (size_t p = 0; p < pc.size(); ++p)
    if (!pred_used[p]) ev.false_pixels += pc[p].pixels;
  return ev;
}

struct ImageEval {
  PixelCounts px;
  TargetEval tg;
};

/// Evaluation over a set of images. Aggregate counts are plain sums of the
/// per-image counts; ratio accessors apply the empty conventions above.
struct DetectionReport {
  std::vector<ImageEval> images;

  PixelCounts total_px() const {
    PixelCounts c;
    for (const ImageEval& e : images) {
      c.tp += e.px.tp;
      c.fp += e.px.fp;
      c.fn += e.px.fn;
    }
    return c;
  }
  double iou() const { return iou_from(total_px()); }
  double f() const { return f_from(total_px()); }
  double niou() const {
    std::vector<PixelCounts> per;
    per.reserve(images.size());
    for (const ImageEval& e : images) per.push_back(e.px);
    return lohg::niou(per);
  }
  double pd() const {
    int64_t det = 0, tot = 0;
    for (const ImageEval& e : images) {
      det += e.tg.detected;
      tot += e.tg.gt_targets;
    }
    return tot == 0 ? 1.0 : static_cast<double>(det) / static_cast<double>(tot);
  }
  double fa() const {
    int64_t fp = 0, px = 0;
    for (const ImageEval& e : images) {
      fp += e.tg.false_pixels;
      px += e.tg.total_pixels;
    }
    return px == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(px);
  }
};

inline DetectionReport evaluate(const std::vector<Mask>& preds, const std::vector<Mask>& gts,
                                double radius = 3.0) {
  if (preds.size() != gts.size()) throw DimensionError("evaluate: list lengths differ");
  DetectionReport r;
  r.images.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i)
    r.images.push_back({pixel_counts(preds[i], gts[i]), target_metrics(preds[i], gts[i], radius)});
  return r;
}

}  // namespace lohg
