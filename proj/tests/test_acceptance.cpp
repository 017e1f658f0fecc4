// Acceptance battery: one PASS/FAIL line per criterion, exit 0 only when all
// nine hold. Tolerances are pinned here, next to each check. argv[1] names
// the CLI binary, used by the gradient audit spot check and the determinism
// criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lohg/commands.hpp"
#include "lohg/gradcheck.hpp"
#include "lohg/metrics.hpp"
#include "lohg/model.hpp"
#include "lohg/synth.hpp"

namespace fs = std::filesystem;
using namespace lohg;

namespace {

using D = Tensor<double>;

struct Outcome {
  bool ok = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

template <typename T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> rand_signed_away(Shape shape, Rng& rng, double minmag, double maxmag) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) {
    double mag = rng.uniform(minmag, maxmag);
    x = static_cast<T>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return Tensor<T>::from(std::move(shape), std::move(v));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// ---- 1. manifold preservation ----------------------------------------------

Outcome manifold_preservation() {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ParamRegistry<float> reg;
    auto enc = LorentzEncoder<float>::create(reg, "enc", 1, {8, 16, 32, 64, 128}, 1.0f, rng);
    Tensor<float> img = rand_uniform<float>({1, 1, 64, 64}, rng, 0.0, 1.0);
    std::vector<LorentzMap<float>> maps = enc.forward(img);
    for (const auto& m : maps) worst = std::max(worst, map_residual_max(m));
  }
  double secs = seconds_since(t0);
  bool ok = worst <= 1e-4 && secs < 60.0;
  return {ok, fmt("max residual %.3g over 100 seeds x 5 stages (tol 1e-4, %.1fs budget 60s)",
                  worst, secs)};
}

// ---- 2. log/exp round trip --------------------------------------------------

Outcome log_exp_round_trip() {
  Rng rng(2);
  double worst_rt = 0.0;
  double worst_dist = 0.0;
  for (int i = 0; i < 1000; ++i) {
    int64_t dim = rng.uniform_int(1, 8);
    double target = rng.uniform(1e-3, 5.0);
    float k = static_cast<float>(rng.uniform(0.5, 2.0));
    std::vector<double> dir(static_cast<size_t>(dim));
    double ss = 0.0;
    for (auto& d : dir) {
      d = rng.normal();
      ss += d * d;
    }
    if (ss == 0.0) {
      dir[0] = 1.0;
      ss = 1.0;
    }
    Tangent<float> tg;
    tg.k = k;
    tg.v.assign(static_cast<size_t>(dim) + 1, 0.0f);
    for (int64_t j = 0; j < dim; ++j)
      tg.v[static_cast<size_t>(j) + 1] =
          static_cast<float>(dir[static_cast<size_t>(j)] / std::sqrt(ss) * target);

    LorentzPoint<float> p = exp_map_origin(tg);
    Tangent<float> back = log_map_origin(p);
    double err2 = 0.0, norm2 = 0.0;
    for (size_t j = 0; j < tg.v.size(); ++j) {
      double diff = static_cast<double>(back.v[j]) - static_cast<double>(tg.v[j]);
      err2 += diff * diff;
      norm2 += static_cast<double>(tg.v[j]) * static_cast<double>(tg.v[j]);
    }
    worst_rt = std::max(worst_rt, std::sqrt(err2 / norm2));

    double d = static_cast<double>(geodesic_distance_origin(p));
    worst_dist = std::max(worst_dist, std::fabs(tangent_norm(back) - d) / d);
  }
  bool ok = worst_rt <= 1e-5 && worst_dist <= 1e-6;
  return {ok, fmt("1000 tangents: roundtrip rel %.3g (tol 1e-5), log norm vs distance rel %.3g "
                  "(tol 1e-6)",
                  worst_rt, worst_dist)};
}

// ---- 3. hypergraph oracle ---------------------------------------------------

// Dense re-evaluation of the incidence / sparsify / propagate chain with plain
// loops, sharing nothing with the library implementation.
std::vector<double> dense_chain(const D& v, const D& g, const D& e, const D& f, const D& theta,
                                double lambda, int64_t n, int64_t m, int64_t d, int64_t c) {
  auto vd = v.data();
  auto gd = g.data();
  auto ed = e.data();
  auto fd = f.data();
  auto td = theta.data();
  std::vector<double> h(static_cast<size_t>(n * m), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double a = 0.0;
      for (int64_t t = 0; t < d; ++t) a += vd[i * d + t] * gd[t] * vd[j * d + t];
      for (int64_t q = 0; q < m; ++q) h[static_cast<size_t>(i * m + q)] += a * ed[j * m + q];
    }
  double mean = 0.0;
  for (auto& x : h) {
    x = std::fabs(x);
    mean += x;
  }
  mean /= static_cast<double>(n * m);
  for (auto& x : h) x = x > lambda * mean ? x : 0.0;
  std::vector<double> dv(static_cast<size_t>(n), 0.0), de(static_cast<size_t>(m), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t q = 0; q < m; ++q) {
      dv[static_cast<size_t>(i)] += h[static_cast<size_t>(i * m + q)];
      de[static_cast<size_t>(q)] += h[static_cast<size_t>(i * m + q)];
    }
  std::vector<double> y(static_cast<size_t>(n * c), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t t = 0; t < c; ++t)
      for (int64_t u = 0; u < c; ++u)
        y[static_cast<size_t>(i * c + t)] += fd[i * c + u] * td[u * c + t];
  std::vector<double> out(static_cast<size_t>(n * c), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t t = 0; t < c; ++t) {
      double py = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        double pij = 0.0;
        for (int64_t q = 0; q < m; ++q)
          pij += h[static_cast<size_t>(i * m + q)] / (de[static_cast<size_t>(q)] + kDegreeEps) *
                 h[static_cast<size_t>(j * m + q)];
        pij /= std::sqrt(dv[static_cast<size_t>(i)] + kDegreeEps) *
               std::sqrt(dv[static_cast<size_t>(j)] + kDegreeEps);
        py += pij * y[static_cast<size_t>(j * c + t)];
      }
      out[static_cast<size_t>(i * c + t)] = y[static_cast<size_t>(i * c + t)] - py;
    }
  return out;
}

Outcome hypergraph_oracle() {
  Rng rng(3);
  const double lambdas[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    int64_t n = rng.uniform_int(2, 16);
    int64_t m = rng.uniform_int(1, 8);
    int64_t d = rng.uniform_int(1, 5);
    int64_t c = rng.uniform_int(1, 5);
    double lambda = lambdas[rep % 5];
    D v = rand_uniform<double>({n, d}, rng, -1.0, 1.0);
    D g = rand_uniform<double>({1, d}, rng, -1.0, 1.0);
    D e = rand_uniform<double>({n, m}, rng, -1.0, 1.0);
    D f = rand_uniform<double>({n, c}, rng, -1.0, 1.0);
    D theta = rand_uniform<double>({c, c}, rng, -1.0, 1.0);

    D hs = HorlLayer<double>::sparsify(HorlLayer<double>::incidence(v, g, e), lambda);
    D fp = HorlLayer<double>::propagate(HorlLayer<double>::interaction(hs).P, f, theta);
    std::vector<double> want = dense_chain(v, g, e, f, theta, lambda, n, m, d, c);
    for (int64_t i = 0; i < n * c; ++i)
      worst = std::max(worst, std::fabs(fp.data()[i] - want[static_cast<size_t>(i)]));
  }

  // Hand instance: both vertices in one edge, identity transform.
  D hs = D::from({2, 1}, {1.0, 1.0});
  D fp = HorlLayer<double>::propagate(HorlLayer<double>::interaction(hs).P,
                                      D::from({2, 1}, {1.0, 0.0}), D::from({1, 1}, {1.0}));
  double hand = std::max(std::fabs(fp.data()[0] - 0.5), std::fabs(fp.data()[1] + 0.5));

  bool ok = worst <= 1e-5 && hand <= 1e-6;
  return {ok, fmt("50 instances max err %.3g (tol 1e-5), hand example err %.3g (tol 1e-6)", worst,
                  hand)};
}

// ---- 4. spectral properties -------------------------------------------------

Outcome spectral_properties() {
  Rng rng(4);
  const double lambdas[4] = {0.0, 0.3, 0.6, 0.9};
  double worst_sym = 0.0, worst_lo = 0.0, worst_hi = 0.0, worst_eig = 0.0;
  int eig_checked = 0;
  for (int rep = 0; rep < 50; ++rep) {
    int64_t n = rng.uniform_int(2, 64);
    int64_t m = rng.uniform_int(1, 32);
    std::vector<double> raw(static_cast<size_t>(n * m));
    for (auto& x : raw) x = std::fabs(rng.normal());
    D hs = HorlLayer<double>::sparsify(D::from({n, m}, std::move(raw)), lambdas[rep % 4]);
    InteractionResult<double> ir = HorlLayer<double>::interaction(hs);
    auto pd = ir.P.data();

    Eigen::MatrixXd p(n, n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) p(i, j) = pd[i * n + j];
    worst_sym = std::max(worst_sym, (p - p.transpose()).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (p + p.transpose()),
                                                      Eigen::EigenvaluesOnly);
    worst_lo = std::max(worst_lo, -es.eigenvalues().minCoeff());
    worst_hi = std::max(worst_hi, es.eigenvalues().maxCoeff() - 1.0);

    bool zero_degree = false;
    for (double x : ir.Dv.data()) zero_degree |= x == 0.0;
    for (double x : ir.De.data()) zero_degree |= x == 0.0;
    if (!zero_degree) {
      ++eig_checked;
      Eigen::VectorXd u(n);
      for (int64_t i = 0; i < n; ++i) u(i) = std::sqrt(ir.Dv.data()[i]);
      worst_eig = std::max(worst_eig, (p * u - u).cwiseAbs().maxCoeff());
    }
  }
  bool ok = worst_sym <= 1e-5 && worst_lo <= 1e-5 && worst_hi <= 1e-4 && worst_eig <= 1e-4 &&
            eig_checked > 0;
  return {ok, fmt("50 instances: asym %.3g (tol 1e-5), min eig >= -%.3g (tol 1e-5), max eig <= "
                  "1+%.3g (tol 1e-4), sqrt-degree vector residual %.3g on %d full-degree "
                  "instances (tol 1e-4)",
                  worst_sym, worst_lo, worst_hi, worst_eig, eig_checked)};
}

// ---- 5. gradient checks -----------------------------------------------------

Outcome gradient_checks() {
  auto t0 = std::chrono::steady_clock::now();

  // Every differentiable op at 1e-6, inputs placed away from kinks.
  Rng rng(5);
  auto readout = [](const D& y) {
    Rng wr(99);
    std::vector<double> w(static_cast<size_t>(y.numel()));
    for (auto& v : w) v = wr.uniform(0.5, 1.5);
    return sum(mul(y, D::from(y.shape(), std::move(w))));
  };
  double worst_op = 0.0;
  std::string worst_name = "none";
  auto probe = [&](const char* name, const std::function<D(std::vector<D>&)>& fn,
                   std::vector<D> inputs) {
    auto rep = lohg::gradcheck<double>(fn, inputs);
    if (rep.max_rel_err > worst_op) {
      worst_op = rep.max_rel_err;
      worst_name = name;
    }
  };
  auto unary = [&](const char* name, auto op, D input) {
    probe(name, [&, op](std::vector<D>& in) { return readout(op(in[0])); }, {input});
  };

  unary("relu", [](const D& x) { return relu(x); },
        rand_signed_away<double>({2, 3}, rng, 0.2, 1.0));
  unary("leaky_relu", [](const D& x) { return leaky_relu(x, 0.1); },
        rand_signed_away<double>({2, 3}, rng, 0.2, 1.0));
  unary("sigmoid", [](const D& x) { return sigmoid(x); },
        rand_uniform<double>({2, 3}, rng, -2.0, 2.0));
  unary("sqrt", [](const D& x) { return lohg::sqrt(x); },
        rand_uniform<double>({2, 3}, rng, 0.5, 2.0));
  unary("abs", [](const D& x) { return lohg::abs(x); },
        rand_signed_away<double>({2, 3}, rng, 0.3, 1.0));
  unary("reciprocal", [](const D& x) { return reciprocal(x); },
        rand_signed_away<double>({2, 3}, rng, 0.5, 2.0));
  unary("scale", [](const D& x) { return scale(x, -1.7); },
        rand_uniform<double>({2, 3}, rng, -1.0, 1.0));
  unary("add_scalar", [](const D& x) { return add_scalar(x, 0.3); },
        rand_uniform<double>({2, 3}, rng, -1.0, 1.0));
  unary("transpose", [](const D& x) { return transpose(x); },
        rand_uniform<double>({3, 4}, rng, -1.0, 1.0));
  unary("gap", [](const D& x) { return gap(x); },
        rand_uniform<double>({2, 3, 3, 3}, rng, -1.0, 1.0));
  unary("sum_channels", [](const D& x) { return sum_channels(x); },
        rand_uniform<double>({2, 3, 2, 2}, rng, -1.0, 1.0));
  unary("row_sum", [](const D& x) { return row_sum(x); },
        rand_uniform<double>({3, 4}, rng, -1.0, 1.0));
  unary("col_sum", [](const D& x) { return col_sum(x); },
        rand_uniform<double>({3, 4}, rng, -1.0, 1.0));
  unary("reshape", [](const D& x) { return reshape(x, {3, 4}); },
        rand_uniform<double>({2, 6}, rng, -1.0, 1.0));
  unary("upsample2x_bilinear", [](const D& x) { return upsample2x_bilinear(x); },
        rand_uniform<double>({1, 2, 3, 3}, rng, -1.0, 1.0));
  unary("slice_channels", [](const D& x) { return slice_channels(x, 1, 3); },
        rand_uniform<double>({1, 4, 3, 3}, rng, -1.0, 1.0));
  unary("select_batch", [](const D& x) { return select_batch(x, 1); },
        rand_uniform<double>({3, 2, 2, 2}, rng, -1.0, 1.0));
  unary("log_map_spatial", [](const D& x) { return log_map_spatial(map_from_spatial(x, 1.3)); },
        rand_signed_away<double>({1, 2, 3, 3}, rng, 0.2, 1.0));
  unary("map_project", [](const D& x) { return map_project(x, 0.7).full; },
        rand_uniform<double>({1, 3, 2, 2}, rng, -1.0, 1.0));

  probe("sum", [](std::vector<D>& in) { return sum(in[0]); },
        {rand_uniform<double>({2, 3}, rng, -1.0, 1.0)});
  probe("add", [&](std::vector<D>& in) { return readout(add(in[0], in[1])); },
        {rand_uniform<double>({2, 3, 2, 2}, rng, -1.0, 1.0),
         rand_uniform<double>({1, 3, 1, 1}, rng, -1.0, 1.0)});
  probe("sub", [&](std::vector<D>& in) { return readout(sub(in[0], in[1])); },
        {rand_uniform<double>({2, 3}, rng, -1.0, 1.0),
         rand_uniform<double>({1}, rng, -1.0, 1.0)});
  probe("mul", [&](std::vector<D>& in) { return readout(mul(in[0], in[1])); },
        {rand_uniform<double>({2, 3, 1, 1}, rng, -1.0, 1.0),
         rand_uniform<double>({2, 3, 2, 2}, rng, -1.0, 1.0)});
  probe("matmul", [&](std::vector<D>& in) { return readout(matmul(in[0], in[1])); },
        {rand_uniform<double>({3, 4}, rng, -1.0, 1.0),
         rand_uniform<double>({4, 2}, rng, -1.0, 1.0)});
  probe("conv2d_s1", [&](std::vector<D>& in) { return readout(conv2d(in[0], in[1], in[2], 1, 1)); },
        {rand_uniform<double>({2, 3, 4, 4}, rng, -1.0, 1.0),
         rand_uniform<double>({2, 3, 3, 3}, rng, -1.0, 1.0),
         rand_uniform<double>({2}, rng, -1.0, 1.0)});
  probe("conv2d_s2", [&](std::vector<D>& in) { return readout(conv2d(in[0], in[1], in[2], 2, 0)); },
        {rand_uniform<double>({1, 2, 5, 5}, rng, -1.0, 1.0),
         rand_uniform<double>({3, 2, 3, 3}, rng, -1.0, 1.0),
         rand_uniform<double>({3}, rng, -1.0, 1.0)});
  probe("scale_rows", [&](std::vector<D>& in) { return readout(scale_rows(in[0], in[1])); },
        {rand_uniform<double>({3, 4}, rng, -1.0, 1.0),
         rand_uniform<double>({3, 1}, rng, -1.0, 1.0)});
  probe("scale_cols", [&](std::vector<D>& in) { return readout(scale_cols(in[0], in[1])); },
        {rand_uniform<double>({3, 4}, rng, -1.0, 1.0),
         rand_uniform<double>({1, 4}, rng, -1.0, 1.0)});
  probe("concat_channels",
        [&](std::vector<D>& in) { return readout(concat_channels(in[0], in[1])); },
        {rand_uniform<double>({1, 2, 3, 3}, rng, -1.0, 1.0),
         rand_uniform<double>({1, 3, 3, 3}, rng, -1.0, 1.0)});
  probe("concat_batch",
        [&](std::vector<D>& in) { return readout(concat_batch<double>({in[0], in[1]})); },
        {rand_uniform<double>({1, 2, 2, 2}, rng, -1.0, 1.0),
         rand_uniform<double>({1, 2, 2, 2}, rng, -1.0, 1.0)});

  // Block and end-to-end audits at their own tolerances (1e-5 / 1e-4), shared
  // with the CLI gradcheck command.
  std::ostringstream audit;
  int audit_rc = lohg::cmd::gradcheck("all", audit);

  double secs = seconds_since(t0);
  bool ok = worst_op <= 1e-6 && audit_rc == 0 && secs < 600.0;
  return {ok, fmt("29 ops max rel %.3g at %s (tol 1e-6); block and e2e audit %s (1e-5 blocks, "
                  "1e-4 e2e); %.1fs budget 600s",
                  worst_op, worst_name.c_str(), audit_rc == 0 ? "pass" : "FAIL", secs)};
}

// ---- 6. toy functional test -------------------------------------------------

Outcome toy_training() {
  auto t0 = std::chrono::steady_clock::now();
  SceneSpec spec;
  spec.seed = 6;
  Scene<float> sc = generate<float>(spec);
  Tensor<float> img = reshape(sc.image, {1, 1, 64, 64});
  Tensor<float> mask = reshape(sc.mask, {1, 1, 64, 64});
  Mask gt = binarize(sc.mask, 0.5);

  Rng rng(1);
  Network<float> net = Network<float>::create(tiny_network(64), rng);

  auto scene_iou = [&]() {
    Tensor<float> prob = net.forward(img);
    return iou_from(pixel_counts(binarize(prob, 0.5), gt));
  };

  std::vector<double> losses;
  double iou = 0.0;
  int64_t steps = 0;
  for (; steps < 500; ++steps) {
    losses.push_back(static_cast<double>(train_step(net, img, mask, 1e-2)));
    if ((steps + 1) % 20 == 0) {
      iou = scene_iou();
      if (iou >= 0.5) {
        ++steps;
        break;
      }
    }
  }
  if (iou < 0.5) iou = scene_iou();

  bool decreasing = losses.size() >= 10;
  for (size_t i = 1; i < 10 && i < losses.size(); ++i)
    decreasing = decreasing && losses[i] < losses[i - 1];

  double secs = seconds_since(t0);
  bool ok = iou >= 0.5 && decreasing && secs < 600.0;
  return {ok, fmt("scene IoU %.3f after %lld steps (need >= 0.5 within 500), first 10 losses "
                  "%s, %.1fs budget 600s",
                  iou, static_cast<long long>(steps),
                  decreasing ? "strictly decreasing" : "NOT strictly decreasing", secs)};
}

// ---- 7. metric oracle -------------------------------------------------------

// Independent component labeling: propagate minimum labels to a fixed point,
// then order components by their smallest flat index.
struct OracleComponents {
  std::vector<double> cy, cx;
  std::vector<int64_t> size;
};

OracleComponents oracle_components(const Mask& m) {
  int64_t h = m.h, w = m.w;
  std::vector<int64_t> label(static_cast<size_t>(h * w), -1);
  for (int64_t i = 0; i < h * w; ++i)
    if (m.v[static_cast<size_t>(i)]) label[static_cast<size_t>(i)] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int64_t i = y * w + x;
        if (label[static_cast<size_t>(i)] < 0) continue;
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            int64_t ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            int64_t j = ny * w + nx;
            if (label[static_cast<size_t>(j)] >= 0 &&
                label[static_cast<size_t>(j)] < label[static_cast<size_t>(i)]) {
              label[static_cast<size_t>(i)] = label[static_cast<size_t>(j)];
              changed = true;
            }
          }
      }
  }
  std::vector<int64_t> roots;
  for (int64_t i = 0; i < h * w; ++i)
    if (label[static_cast<size_t>(i)] == i) roots.push_back(i);
  OracleComponents oc;
  for (int64_t root : roots) {
    double sy = 0.0, sx = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < h * w; ++i)
      if (label[static_cast<size_t>(i)] == root) {
        sy += static_cast<double>(i / w);
        sx += static_cast<double>(i % w);
        ++count;
      }
    oc.cy.push_back(sy / static_cast<double>(count));
    oc.cx.push_back(sx / static_cast<double>(count));
    oc.size.push_back(count);
  }
  return oc;
}

struct OracleTargets {
  int64_t gt_targets = 0, detected = 0, false_pixels = 0, total_pixels = 0;
};

OracleTargets oracle_targets(const Mask& pred, const Mask& gt, double radius) {
  OracleComponents pc = oracle_components(pred);
  OracleComponents gc = oracle_components(gt);
  OracleTargets ot;
  ot.gt_targets = static_cast<int64_t>(gc.cy.size());
  ot.total_pixels = pred.numel();
  std::vector<bool> gt_used(gc.cy.size(), false), pr_used(pc.cy.size(), false);
  // Selection scan: repeatedly take the globally best remaining pair under the
  // (distance, gt index, pred index) order.
  while (true) {
    double bd = 0.0;
    int64_t bg = -1, bp = -1;
    for (size_t gi = 0; gi < gc.cy.size(); ++gi) {
      if (gt_used[gi]) continue;
      for (size_t pi = 0; pi < pc.cy.size(); ++pi) {
        if (pr_used[pi]) continue;
        double d = std::hypot(pc.cy[pi] - gc.cy[gi], pc.cx[pi] - gc.cx[gi]);
        if (d > radius) continue;
        int64_t g = static_cast<int64_t>(gi), p = static_cast<int64_t>(pi);
        if (bg < 0 || d < bd || (d == bd && (g < bg || (g == bg && p < bp)))) {
          bd = d;
          bg = g;
          bp = p;
        }
      }
    }
    if (bg < 0) break;
    gt_used[static_cast<size_t>(bg)] = true;
    pr_used[static_cast<size_t>(bp)] = true;
    ++ot.detected;
  }
  for (size_t pi = 0; pi < pc.cy.size(); ++pi)
    if (!pr_used[pi]) ot.false_pixels += pc.size[pi];
  return ot;
}

Outcome metric_oracle() {
  Rng rng(7);
  int64_t count_mismatch = 0, target_mismatch = 0;
  double worst_ratio = 0.0;
  std::vector<PixelCounts> lib_counts;
  double oracle_iou_sum = 0.0;
  int64_t o_tp = 0, o_fp = 0, o_fn = 0, o_det = 0, o_gt = 0, o_false = 0, o_total = 0;

  std::vector<Mask> preds, gts;
  for (int rep = 0; rep < 200; ++rep) {
    int64_t h = rng.uniform_int(1, 32);
    int64_t w = rng.uniform_int(1, 32);
    double density = rng.uniform(0.02, 0.4);
    Mask p, g;
    p.h = g.h = h;
    p.w = g.w = w;
    p.v.resize(static_cast<size_t>(h * w));
    g.v.resize(static_cast<size_t>(h * w));
    for (auto& x : p.v) x = rng.uniform() < density ? 1 : 0;
    for (auto& x : g.v) x = rng.uniform() < density ? 1 : 0;
    preds.push_back(p);
    gts.push_back(g);

    // Full-scan pixel counts.
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < p.v.size(); ++i) {
      tp += p.v[i] && g.v[i];
      fp += p.v[i] && !g.v[i];
      fn += !p.v[i] && g.v[i];
    }
    PixelCounts c = pixel_counts(p, g);
    count_mismatch += std::labs(c.tp - tp) + std::labs(c.fp - fp) + std::labs(c.fn - fn);
    lib_counts.push_back(c);
    o_tp += tp;
    o_fp += fp;
    o_fn += fn;
    int64_t uni = tp + fp + fn;
    oracle_iou_sum += uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);

    // Full-scan component matching.
    OracleTargets ot = oracle_targets(p, g, 3.0);
    TargetEval te = target_metrics(p, g, 3.0);
    target_mismatch += std::labs(te.gt_targets - ot.gt_targets) +
                       std::labs(te.detected - ot.detected) +
                       std::labs(te.false_pixels - ot.false_pixels) +
                       std::labs(te.total_pixels - ot.total_pixels);
    o_det += ot.detected;
    o_gt += ot.gt_targets;
    o_false += ot.false_pixels;
    o_total += ot.total_pixels;
  }

  DetectionReport rep = evaluate(preds, gts);
  double oib = static_cast<double>(o_tp) / static_cast<double>(o_tp + o_fp + o_fn);
  double ofb = 2.0 * static_cast<double>(o_tp) / static_cast<double>(2 * o_tp + o_fp + o_fn);
  worst_ratio = std::max(worst_ratio, std::fabs(rep.iou() - oib));
  worst_ratio = std::max(worst_ratio, std::fabs(rep.f() - ofb));
  worst_ratio = std::max(worst_ratio, std::fabs(rep.niou() - oracle_iou_sum / 200.0));
  worst_ratio = std::max(
      worst_ratio, std::fabs(rep.pd() - static_cast<double>(o_det) / static_cast<double>(o_gt)));
  worst_ratio = std::max(worst_ratio, std::fabs(rep.fa() - static_cast<double>(o_false) /
                                                               static_cast<double>(o_total)));

  // Worked examples reproduce exactly.
  Mask p1{1, 3, {1, 1, 0}}, g1{1, 3, {0, 1, 1}};
  bool iou_exact = iou_from(pixel_counts(p1, g1)) == 1.0 / 3.0;

  Mask g2{5, 16, std::vector<uint8_t>(5 * 16, 0)}, p2{5, 16, std::vector<uint8_t>(5 * 16, 0)};
  for (int64_t y = 1; y <= 3; ++y)
    for (int64_t x = 1; x <= 3; ++x) {
      g2.v[static_cast<size_t>(y * 16 + x)] = 1;
      g2.v[static_cast<size_t>(y * 16 + x + 8)] = 1;
    }
  p2.v[2 * 16 + 2] = 1;
  TargetEval t2 = target_metrics(p2, g2);
  bool pd_exact =
      static_cast<double>(t2.detected) / static_cast<double>(t2.gt_targets) == 0.5;

  Mask g3{100, 100, std::vector<uint8_t>(100 * 100, 0)};
  Mask p3 = g3;
  for (int64_t x = 10; x < 15; ++x) p3.v[static_cast<size_t>(50 * 100 + x)] = 1;
  TargetEval t3 = target_metrics(p3, g3);
  bool fa_exact =
      static_cast<double>(t3.false_pixels) / static_cast<double>(t3.total_pixels) == 5e-4;

  bool ok = count_mismatch == 0 && target_mismatch == 0 && worst_ratio <= 1e-9 && iou_exact &&
            pd_exact && fa_exact;
  return {ok, fmt("200 pairs: count mismatches %lld, target mismatches %lld, ratio err %.3g "
                  "(tol 1e-9); worked examples IoU=1/3 %s, Pd=0.5 %s, Fa=5e-4 %s",
                  static_cast<long long>(count_mismatch), static_cast<long long>(target_mismatch),
                  worst_ratio, iou_exact ? "exact" : "FAIL", pd_exact ? "exact" : "FAIL",
                  fa_exact ? "exact" : "FAIL")};
}

// ---- 8. hyperparameter defaults ---------------------------------------------

Outcome hyperparameter_defaults() {
  RunConfig defaults;
  bool lambda_ok = defaults.lambda == 0.5 && NetworkOptions{}.lambda == 0.5;
  RunConfig full;
  full.preset = "full";
  bool edges_ok = effective_edges(full, effective_input(full)) == 256 &&
                  full_network(256).edges == 256;

  Rng rng(8);
  std::vector<double> raw(24 * 12);
  for (auto& x : raw) x = std::fabs(rng.normal());
  D h = D::from({24, 12}, std::move(raw));
  bool monotone = true;
  int64_t prev = -1;
  for (int i = 0; i <= 10; ++i) {
    D hs = HorlLayer<double>::sparsify(h, static_cast<double>(i) / 10.0);
    int64_t nnz = 0;
    for (double x : hs.data()) nnz += x != 0.0;
    if (prev >= 0 && nnz > prev) monotone = false;
    prev = nnz;
  }

  bool ok = lambda_ok && edges_ok && monotone;
  return {ok, fmt("default lambda 0.5 %s, full-preset edge budget 256 %s, nonzero count "
                  "non-increasing over 11 lambdas %s",
                  lambda_ok ? "ok" : "FAIL", edges_ok ? "ok" : "FAIL",
                  monotone ? "ok" : "FAIL")};
}

// ---- 9. determinism ---------------------------------------------------------

int run_cli(const std::string& cli, const std::string& args) {
  std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

bool trees_identical(const fs::path& a, const fs::path& b) {
  std::vector<std::string> ra, rb;
  for (const auto& ent : fs::recursive_directory_iterator(a))
    if (ent.is_regular_file()) ra.push_back(fs::relative(ent.path(), a).string());
  for (const auto& ent : fs::recursive_directory_iterator(b))
    if (ent.is_regular_file()) rb.push_back(fs::relative(ent.path(), b).string());
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  if (ra != rb || ra.empty()) return false;
  for (const std::string& rel : ra)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

Outcome determinism(const std::string& cli) {
  fs::path dir = fs::temp_directory_path() / "lohg_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string base = dir.string();

  if (run_cli(cli, "gen --out \"" + base + "/a\" --count 4 --size 32 --seed 77") != 0 ||
      run_cli(cli, "gen --out \"" + base + "/b\" --count 4 --size 32 --seed 77") != 0)
    return {false, "gen runs failed"};
  bool gen_ok = trees_identical(dir / "a", dir / "b");

  std::string train_args = "train --data \"" + base + "/a\" --steps 4 --seed 13 --ckpt \"";
  if (run_cli(cli, train_args + base + "/m1.lohgw\"") != 0 ||
      run_cli(cli, train_args + base + "/m2.lohgw\"") != 0)
    return {false, "train runs failed"};
  bool train_ok = slurp(dir / "m1.lohgw") == slurp(dir / "m2.lohgw");

  bool ok = gen_ok && train_ok;
  return {ok, fmt("gen datasets byte-identical %s, train checkpoints byte-identical %s",
                  gen_ok ? "yes" : "NO", train_ok ? "yes" : "NO")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_acceptance <path-to-lohg-binary>\n");
    return 2;
  }
  std::string cli = argv[1];

  struct Criterion {
    const char* name;
    std::function<Outcome()> fn;
  };
  const Criterion criteria[] = {
      {"manifold preservation", manifold_preservation},
      {"log/exp round trip", log_exp_round_trip},
      {"hypergraph oracle", hypergraph_oracle},
      {"spectral properties", spectral_properties},
      {"gradient checks", gradient_checks},
      {"toy functional test", toy_training},
      {"metric oracle", metric_oracle},
      {"hyperparameter defaults", hyperparameter_defaults},
      {"determinism", [&cli] { return determinism(cli); }},
  };

  bool all_ok = true;
  int index = 0;
  for (const Criterion& c : criteria) {
    ++index;
    Outcome r;
    auto t0 = std::chrono::steady_clock::now();
    try {
      r = c.fn();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %d %s: %s [%.1fs]\n", r.ok ? "PASS" : "FAIL", index, c.name,
                r.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    all_ok = all_ok && r.ok;
  }
  std::printf("%s\n", all_ok ? "acceptance: all criteria passed" : "acceptance: FAILURES above");
  return all_ok ? 0 : 1;
}
