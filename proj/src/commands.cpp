#include "lohg/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lohg/gradcheck.hpp"
#include "lohg/metrics.hpp"
#include "lohg/model.hpp"
#include "lohg/pgm.hpp"
#include "lohg/synth.hpp"
#include "lohg/weights.hpp"

namespace lohg::cmd {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// %.17g round-trips IEEE doubles through text exactly; stream insertion
// does not, so every value that may be diffed or re-read goes through here.
std::string fmt_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_brief(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string pad4(int64_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", static_cast<int>(i));
  return buf;
}

template <typename T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Values with |x| in [minmag, maxmag], random sign; keeps finite-difference
// probes away from the kink at zero.
template <typename T>
Tensor<T> rand_signed_away(Shape shape, Rng& rng, double minmag, double maxmag) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) {
    double mag = rng.uniform(minmag, maxmag);
    x = static_cast<T>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return Tensor<T>::from(std::move(shape), std::move(v));
}

struct Check {
  std::string name;
  double value = 0.0;
  double tol = 0.0;
  bool ok = false;
};

void push_check(std::vector<Check>& cs, std::string name, double value, double tol) {
  bool ok = std::isfinite(value) && value <= tol;
  cs.push_back({std::move(name), value, tol, ok});
}

// Hyperboloid residual of every pyramid level after a full forward pass at
// working precision. One fixed scene and seed; the acceptance battery sweeps
// many.
void check_manifold_residual(std::vector<Check>& cs) {
  SceneSpec spec;
  spec.seed = 7;
  Scene<float> sc = generate<float>(spec);
  Tensor<float> img = reshape(sc.image, {1, 1, spec.height, spec.width});
  Rng rng(11);
  Network<float> net = Network<float>::create(tiny_network(64), rng);
  ForwardTrace<float> trace;
  net.forward(img, &trace);
  double worst = 0.0;
  for (const auto& m : trace.lorentz) worst = std::max(worst, map_residual_max(m));
  push_check(cs, "manifold_residual_f32", worst, 1e-4);
}

// exp then log must restore a tangent vector, and the log norm must equal the
// geodesic distance, across the magnitude range the encoder produces.
void check_log_exp(std::vector<Check>& cs) {
  Rng rng(3);
  double worst_rt = 0.0;
  double worst_dist = 0.0;
  for (int i = 0; i < 200; ++i) {
    int64_t dim = rng.uniform_int(1, 8);
    double target = rng.uniform(1e-3, 5.0);
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
    tg.k = 1.0f;
    tg.v.assign(static_cast<size_t>(dim) + 1, 0.0f);
    for (int64_t j = 0; j < dim; ++j)
      tg.v[static_cast<size_t>(j) + 1] =
          static_cast<float>(dir[static_cast<size_t>(j)] / std::sqrt(ss) * target);
    LorentzPoint<float> p = exp_map_origin(tg);
    Tangent<float> back = log_map_origin(p);
    for (size_t j = 0; j < tg.v.size(); ++j)
      worst_rt = std::max(worst_rt, std::fabs(static_cast<double>(back.v[j]) -
                                              static_cast<double>(tg.v[j])));
    double d = static_cast<double>(geodesic_distance_origin(p));
    worst_dist = std::max(worst_dist, std::fabs(tangent_norm(back) - d) / std::max(d, 1e-30));
  }
  push_check(cs, "log_exp_roundtrip_f32", worst_rt, 1e-5);
  push_check(cs, "log_norm_vs_distance_f32", worst_dist, 1e-6);
}

// Full incidence -> sparsify -> interaction -> propagate chain against an
// independent dense double-loop evaluation.
void check_hypergraph_chain(std::vector<Check>& cs) {
  Rng rng(17);
  double worst = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    int64_t n = rng.uniform_int(2, 16);
    int64_t m = rng.uniform_int(1, 8);
    int64_t d = rng.uniform_int(1, 4);
    int64_t c = rng.uniform_int(1, 4);
    Tensor<double> v = rand_uniform<double>({n, d}, rng, -1.0, 1.0);
    Tensor<double> g = rand_uniform<double>({1, d}, rng, -1.0, 1.0);
    Tensor<double> e = rand_uniform<double>({n, m}, rng, -1.0, 1.0);
    Tensor<double> f = rand_uniform<double>({n, c}, rng, -1.0, 1.0);
    Tensor<double> theta = rand_uniform<double>({c, c}, rng, -1.0, 1.0);
    const double lambda = 0.5;

    Tensor<double> h = HorlLayer<double>::incidence(v, g, e);
    Tensor<double> hs = HorlLayer<double>::sparsify(h, lambda);
    InteractionResult<double> ir = HorlLayer<double>::interaction(hs);
    Tensor<double> fp = HorlLayer<double>::propagate(ir.P, f, theta);

    auto vd = v.data();
    auto gd = g.data();
    auto ed = e.data();
    auto fd = f.data();
    auto td = theta.data();
    // H = |V diag(g) V^T E|
    std::vector<double> oh(static_cast<size_t>(n * m), 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double a = 0.0;
        for (int64_t t = 0; t < d; ++t) a += vd[i * d + t] * gd[t] * vd[j * d + t];
        for (int64_t q = 0; q < m; ++q) oh[static_cast<size_t>(i * m + q)] += a * ed[j * m + q];
      }
    double mean = 0.0;
    for (auto& x : oh) {
      x = std::fabs(x);
      mean += x;
    }
    mean /= static_cast<double>(n * m);
    std::vector<double> ohs(oh.size());
    for (size_t i = 0; i < oh.size(); ++i) ohs[i] = oh[i] > lambda * mean ? oh[i] : 0.0;
    std::vector<double> dv(static_cast<size_t>(n), 0.0), de(static_cast<size_t>(m), 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t q = 0; q < m; ++q) {
        dv[static_cast<size_t>(i)] += ohs[static_cast<size_t>(i * m + q)];
        de[static_cast<size_t>(q)] += ohs[static_cast<size_t>(i * m + q)];
      }
    // F' = Y - Dv^-1/2 Hs De^-1 Hs^T Dv^-1/2 Y with Y = F Theta
    std::vector<double> y(static_cast<size_t>(n * c), 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t t = 0; t < c; ++t)
        for (int64_t u = 0; u < c; ++u)
          y[static_cast<size_t>(i * c + t)] += fd[i * c + u] * td[u * c + t];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t t = 0; t < c; ++t) {
        double py = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          double pij = 0.0;
          for (int64_t q = 0; q < m; ++q)
            pij += ohs[static_cast<size_t>(i * m + q)] / (de[static_cast<size_t>(q)] + kDegreeEps) *
                   ohs[static_cast<size_t>(j * m + q)];
          pij /= std::sqrt(dv[static_cast<size_t>(i)] + kDegreeEps) *
                 std::sqrt(dv[static_cast<size_t>(j)] + kDegreeEps);
          py += pij * y[static_cast<size_t>(j * c + t)];
        }
        double want = y[static_cast<size_t>(i * c + t)] - py;
        worst = std::max(worst, std::fabs(fp.data()[i * c + t] - want));
      }
  }
  push_check(cs, "hypergraph_chain_vs_dense", worst, 1e-9);
}

// Three tiny instances small enough to evaluate by hand.
void check_hypergraph_examples(std::vector<Check>& cs) {
  double worst = 0.0;

  // V diag(g) V^T = [[-1,-2],[-2,-4]], times E = [[-3],[-6]], magnitude 3, 6.
  Tensor<double> h = HorlLayer<double>::incidence(Tensor<double>::from({2, 1}, {1.0, 2.0}),
                                                  Tensor<double>::from({1, 1}, {-1.0}),
                                                  Tensor<double>::from({2, 1}, {1.0, 1.0}));
  worst = std::max(worst, std::fabs(h.data()[0] - 3.0));
  worst = std::max(worst, std::fabs(h.data()[1] - 6.0));

  // Mean 1.0, threshold 0.5; only the 3.4 entry survives a strict compare.
  Tensor<double> hs = HorlLayer<double>::sparsify(
      Tensor<double>::from({2, 2}, {0.2, 0.2, 0.2, 3.4}), 0.5);
  const double want_hs[4] = {0.0, 0.0, 0.0, 3.4};
  for (int i = 0; i < 4; ++i) worst = std::max(worst, std::fabs(hs.data()[i] - want_hs[i]));

  // Uniform P averages Y, so propagation removes the mean: [1,0] -> [.5,-.5].
  Tensor<double> fp = HorlLayer<double>::propagate(
      Tensor<double>::from({2, 2}, {0.5, 0.5, 0.5, 0.5}), Tensor<double>::from({2, 1}, {1.0, 0.0}),
      Tensor<double>::from({1, 1}, {1.0}));
  worst = std::max(worst, std::fabs(fp.data()[0] - 0.5));
  worst = std::max(worst, std::fabs(fp.data()[1] + 0.5));

  push_check(cs, "hypergraph_hand_examples", worst, 1e-6);
}

Mask mask_from_bits(int64_t h, int64_t w, const std::vector<uint8_t>& bits) {
  Mask m;
  m.h = h;
  m.w = w;
  m.v = bits;
  return m;
}

void check_detection_metrics(std::vector<Check>& cs) {
  // Random masks against a plain recount.
  Rng rng(23);
  int64_t mismatch = 0;
  for (int rep = 0; rep < 20; ++rep) {
    int64_t h = rng.uniform_int(1, 16);
    int64_t w = rng.uniform_int(1, 16);
    std::vector<uint8_t> a(static_cast<size_t>(h * w)), b(a.size());
    for (auto& x : a) x = rng.uniform() < 0.3 ? 1 : 0;
    for (auto& x : b) x = rng.uniform() < 0.3 ? 1 : 0;
    Mask pm = mask_from_bits(h, w, a), gm = mask_from_bits(h, w, b);
    PixelCounts c = pixel_counts(pm, gm);
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      tp += a[i] && b[i];
      fp += a[i] && !b[i];
      fn += !a[i] && b[i];
    }
    mismatch += std::labs(c.tp - tp) + std::labs(c.fp - fp) + std::labs(c.fn - fn);
  }
  push_check(cs, "pixel_count_recount", static_cast<double>(mismatch), 0.0);

  double worst = 0.0;

  // One true positive, one false positive, one miss.
  Mask p1 = mask_from_bits(1, 3, {1, 1, 0});
  Mask g1 = mask_from_bits(1, 3, {0, 1, 1});
  worst = std::max(worst, std::fabs(iou_from(pixel_counts(p1, g1)) - 1.0 / 3.0));

  // Two targets, centroids (2,2) and (2,10); a single hit on the first.
  Mask g2 = mask_from_bits(5, 16, std::vector<uint8_t>(5 * 16, 0));
  for (int64_t y = 1; y <= 3; ++y)
    for (int64_t x = 1; x <= 3; ++x) {
      g2.v[static_cast<size_t>(y * 16 + x)] = 1;
      g2.v[static_cast<size_t>(y * 16 + x + 8)] = 1;
    }
  Mask p2 = mask_from_bits(5, 16, std::vector<uint8_t>(5 * 16, 0));
  p2.v[2 * 16 + 2] = 1;
  TargetEval t2 = target_metrics(p2, g2);
  worst = std::max(worst, std::fabs(static_cast<double>(t2.detected) /
                                        static_cast<double>(t2.gt_targets) -
                                    0.5));

  // Five stray pixels on an empty 100x100 field.
  Mask g3 = mask_from_bits(100, 100, std::vector<uint8_t>(100 * 100, 0));
  Mask p3 = g3;
  for (int64_t x = 10; x < 15; ++x) p3.v[static_cast<size_t>(50 * 100 + x)] = 1;
  TargetEval t3 = target_metrics(p3, g3);
  worst = std::max(worst, std::fabs(static_cast<double>(t3.false_pixels) /
                                        static_cast<double>(t3.total_pixels) -
                                    5e-4));

  push_check(cs, "detection_hand_examples", worst, 1e-12);
}

void check_soft_iou(std::vector<Check>& cs) {
  // inter 0.5, union 1.5: loss = 1 - 1.5/2.5.
  double loss = soft_iou_loss(Tensor<double>::from({2}, {0.5, 0.5}),
                              Tensor<double>::from({2}, {1.0, 0.0}))
                    .item();
  push_check(cs, "soft_iou_example", std::fabs(loss - (1.0 - 1.5 / 2.5)), 1e-12);
}

// ---- gradient audits ------------------------------------------------------

struct FdRun {
  std::string name;
  FdParamReport report;
  double tol = 0.0;
};

FdRun fd_block() {
  Rng rng(1023);
  ParamRegistry<double> reg;
  const double k = 1.3;
  auto block = GalrcmBlock<double>::create(reg, "blk", 2, 4, rng);
  Tensor<double> s = rand_signed_away<double>({1, 2, 4, 4}, rng, 0.05, 1.0);
  auto leaves = registry_leaves<double>(reg);
  leaves.push_back(s);
  auto forward = [&]() {
    LorentzMap<double> y = block.forward(map_from_spatial(s, k));
    Rng wr(21);
    Tensor<double> w = rand_uniform<double>(y.spatial().shape(), wr, 0.5, 1.5);
    return sum(mul(w, y.spatial()));
  };
  return {"lorentz", fd_check_params<double>(forward, std::move(leaves)), 1e-5};
}

FdRun fd_relation() {
  // Probes must not flip the sparsification mask or cross the magnitude kink,
  // so search seeds for an instance with clear margins to both.
  std::optional<HorlLayer<double>> layer;
  ParamRegistry<double> reg;
  Tensor<double> x;
  for (uint64_t seed = 2025; seed < 2125 && !layer; ++seed) {
    ParamRegistry<double> cand_reg;
    Rng rng(seed);
    auto cand = HorlLayer<double>::create(cand_reg, "rel", 4, 3, 0.5, rng);
    Tensor<double> cand_x = rand_signed_away<double>({1, 4, 2, 2}, rng, 0.1, 1.0);
    std::vector<HypergraphState<double>> states;
    cand.forward(cand_x, &states);
    double mean = 0.0;
    for (double v : states[0].H.data()) mean += v;
    mean /= static_cast<double>(states[0].H.numel());
    double margin = 1e9;
    for (double v : states[0].H.data()) margin = std::min({margin, std::fabs(v - 0.5 * mean), v});
    if (margin > 1e-2) {
      layer.emplace(cand);
      reg = std::move(cand_reg);
      x = cand_x;
    }
  }
  if (!layer) throw NumericError("gradcheck: no relation instance with safe sparsify margins");
  auto leaves = registry_leaves<double>(reg);
  leaves.push_back(x);
  auto forward = [&]() {
    Rng wr(5);
    Tensor<double> w = rand_uniform<double>({1, 4, 2, 2}, wr, 0.5, 1.5);
    return sum(mul(layer->forward(x), w));
  };
  return {"horl", fd_check_params<double>(forward, std::move(leaves)), 1e-5};
}

FdRun fd_end_to_end() {
  // Whole network at 16x16 with sampled parameter coordinates. The sparsify
  // threshold is the one discrete hazard, so pick a seed whose incidence
  // entries sit clear of it.
  std::optional<Network<double>> net;
  Tensor<double> img, mask;
  for (uint64_t seed = 1; seed < 60 && !net; ++seed) {
    NetworkOptions opts = tiny_network(16);
    Rng rng(seed);
    Network<double> cand = Network<double>::create(opts, rng);

    SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.num_targets = 1;
    spec.seed = seed;
    Scene<double> sc = generate<double>(spec);
    Tensor<double> ci = reshape(sc.image, {1, 1, 16, 16});
    Tensor<double> cm = reshape(sc.mask, {1, 1, 16, 16});

    ForwardTrace<double> trace;
    cand.forward(ci, &trace);
    const auto& h = trace.hypergraph[0].H;
    double mean = 0.0;
    for (double v : h.data()) mean += v;
    mean /= static_cast<double>(h.numel());
    double scale = std::max(mean, 1e-12);
    double margin = 1e9;
    for (double v : h.data())
      margin = std::min({margin, std::fabs(v - cand.relation.lambda * mean) / scale, v / scale});
    if (margin > 1e-2) {
      net.emplace(std::move(cand));
      img = ci;
      mask = cm;
    }
  }
  if (!net) throw NumericError("gradcheck: no end-to-end instance with safe sparsify margins");
  auto leaves = registry_leaves<double>(net->params);
  auto forward = [&]() { return soft_iou_loss(net->forward(img), mask); };
  return {"e2e", fd_check_params<double>(forward, std::move(leaves), 1e-4, 2), 1e-4};
}

// ---- shared I/O helpers ----------------------------------------------------

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << text;
  if (!out) throw FormatError(path + ": write failed");
}

struct Dataset {
  int64_t size = 0;
  std::vector<std::vector<double>> images;
  std::vector<std::vector<double>> masks;
};

Dataset load_dataset(const std::string& dir) {
  json manifest = read_json_file(dir + "/manifest.json");
  if (!manifest.is_object() || !manifest.contains("pairs") || !manifest["pairs"].is_array() ||
      manifest["pairs"].empty())
    throw FormatError(dir + "/manifest.json: expected a nonempty \"pairs\" array");
  Dataset ds;
  for (const auto& pair : manifest["pairs"]) {
    if (!pair.is_object() || !pair.contains("image") || !pair.contains("mask"))
      throw FormatError(dir + "/manifest.json: pair lacks image/mask paths");
    PgmImage im = read_pgm(dir + "/" + pair["image"].get<std::string>());
    PgmImage mk = read_pgm(dir + "/" + pair["mask"].get<std::string>());
    if (im.height != im.width) throw FormatError(dir + ": training images must be square");
    if (ds.size == 0) ds.size = im.height;
    if (im.height != ds.size || mk.height != ds.size || mk.width != ds.size)
      throw FormatError(dir + ": image and mask extents disagree across the set");
    std::vector<double> mv(mk.values.size());
    for (size_t i = 0; i < mv.size(); ++i) mv[i] = mk.values[i] > 0.5 ? 1.0 : 0.0;
    ds.images.push_back(std::move(im.values));
    ds.masks.push_back(std::move(mv));
  }
  if (ds.size % 16 != 0)
    throw FormatError(dir + ": training resolution must be a multiple of 16");
  return ds;
}

template <typename T>
int run_train(const TrainOptions& opt, const Dataset& ds, std::ostream& out) {
  const RunConfig& cfg = opt.config;
  NetworkOptions nopts = to_network_options(cfg, ds.size);
  Rng rng(cfg.seed);
  Network<T> net = Network<T>::create(nopts, rng);

  std::vector<Tensor<T>> images, masks;
  for (size_t i = 0; i < ds.images.size(); ++i) {
    std::vector<T> iv(ds.images[i].begin(), ds.images[i].end());
    std::vector<T> mv(ds.masks[i].begin(), ds.masks[i].end());
    images.push_back(Tensor<T>::from({1, 1, ds.size, ds.size}, std::move(iv)));
    masks.push_back(Tensor<T>::from({1, 1, ds.size, ds.size}, std::move(mv)));
  }

  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(cfg.steps));
  for (int64_t step = 0; step < cfg.steps; ++step) {
    size_t idx = static_cast<size_t>(step) % images.size();
    losses.push_back(
        static_cast<double>(train_step(net, images[idx], masks[idx], cfg.lr)));
  }

  if (!opt.loss_csv.empty()) {
    std::string csv = "step,loss\n";
    for (size_t i = 0; i < losses.size(); ++i)
      csv += std::to_string(i) + "," + fmt_exact(losses[i]) + "\n";
    write_text_file(opt.loss_csv, csv);
  }

  RunConfig resolved = cfg;
  resolved.input = ds.size;
  resolved.edges = nopts.edges;
  save_weights(opt.ckpt, net.params, config_to_json(resolved));

  out << "train: " << ds.images.size() << " pairs at " << ds.size << "x" << ds.size << ", "
      << cfg.steps << " steps";
  if (!losses.empty())
    out << ", loss " << fmt_brief(losses.front()) << " -> " << fmt_brief(losses.back());
  out << ", wrote " << opt.ckpt << "\n";
  return 0;
}

template <typename T>
int run_infer(const InferOptions& opt, const RunConfig& rc, const PgmImage& im,
              std::ostream& out) {
  Rng rng(rc.seed);
  Network<T> net = Network<T>::create(to_network_options(rc, effective_input(rc)), rng);
  load_weights<T>(opt.ckpt, net.params);

  std::vector<T> px(im.values.begin(), im.values.end());
  Tensor<T> img = Tensor<T>::from({1, 1, im.height, im.width}, std::move(px));
  ForwardTrace<T> trace;
  Tensor<T> prob = net.forward(img, opt.dump_hypergraph ? &trace : nullptr);

  std::vector<double> pv(prob.data().begin(), prob.data().end());
  write_pgm(opt.out_prefix + "_prob.pgm", pv, im.height, im.width, 65535);
  Mask mk = binarize(pv, im.height, im.width, opt.tau);
  std::vector<double> mv(mk.v.begin(), mk.v.end());
  write_pgm(opt.out_prefix + "_mask.pgm", mv, im.height, im.width, 255);

  out << "infer: wrote " << opt.out_prefix << "_prob.pgm, " << opt.out_prefix << "_mask.pgm";
  if (opt.dump_hypergraph) {
    std::ofstream cs(opt.out_prefix + "_hypergraph.csv", std::ios::binary);
    if (!cs) throw FormatError(opt.out_prefix + "_hypergraph.csv: cannot open for writing");
    dump_state_csv(trace.hypergraph.at(0), cs);
    out << ", " << opt.out_prefix << "_hypergraph.csv";
  }
  int64_t lit = 0;
  for (uint8_t b : mk.v) lit += b;
  out << " (" << lit << " detected pixels)\n";
  return 0;
}

std::map<std::string, fs::path> list_pgms(const std::string& dir) {
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) throw FormatError(dir + ": cannot list directory");
  std::map<std::string, fs::path> out;
  for (const auto& ent : it)
    if (ent.path().extension() == ".pgm") out[ent.path().filename().string()] = ent.path();
  return out;
}

}  // namespace

int selftest(bool inject_fault, std::ostream& out) {
  std::vector<Check> checks;
  check_manifold_residual(checks);
  check_log_exp(checks);
  check_hypergraph_chain(checks);
  check_hypergraph_examples(checks);
  check_detection_metrics(checks);
  check_soft_iou(checks);
  if (inject_fault) checks.push_back({"injected_fault", 1.0, 0.0, false});

  int failed = 0;
  for (const Check& c : checks) {
    failed += c.ok ? 0 : 1;
    out << (c.ok ? "PASS " : "FAIL ") << c.name << " " << fmt_brief(c.value) << " (tol "
        << fmt_brief(c.tol) << ")\n";
  }
  out << "selftest: " << (checks.size() - static_cast<size_t>(failed)) << "/" << checks.size()
      << " checks passed\n";
  return failed == 0 ? 0 : 1;
}

int gradcheck(const std::string& module, std::ostream& out) {
  std::vector<FdRun> runs;
  if (module == "lorentz" || module == "all") runs.push_back(fd_block());
  if (module == "horl" || module == "all") runs.push_back(fd_relation());
  if (module == "e2e" || module == "all") runs.push_back(fd_end_to_end());
  if (runs.empty())
    throw ContractError("gradcheck: unknown module \"" + module +
                        "\" (expected lorentz, horl, e2e, or all)");
  int failed = 0;
  for (const FdRun& r : runs) {
    bool ok = r.report.passes(r.tol);
    failed += ok ? 0 : 1;
    out << (ok ? "PASS " : "FAIL ") << "gradcheck/" << r.name << " max_rel "
        << fmt_brief(r.report.max_rel_err) << " over " << r.report.elements_checked
        << " coordinates (tol " << fmt_brief(r.tol) << ")\n";
    if (!ok) out << "  worst: " << r.report.worst << "\n";
  }
  return failed == 0 ? 0 : 1;
}

int gen(const GenOptions& opt, std::ostream& out) {
  if (opt.count < 1) throw ContractError("gen: count must be positive");
  if (opt.size < 16 || opt.size % 16 != 0)
    throw ContractError("gen: size must be a positive multiple of 16");
  if (opt.targets < 0) throw ContractError("gen: target count must be nonnegative");

  fs::create_directories(fs::path(opt.out) / "images");
  fs::create_directories(fs::path(opt.out) / "masks");

  json pairs = json::array();
  for (int64_t i = 0; i < opt.count; ++i) {
    SceneSpec spec;
    spec.width = opt.size;
    spec.height = opt.size;
    spec.num_targets = opt.targets;
    spec.seed = opt.seed + static_cast<uint64_t>(i);
    Scene<double> sc = generate<double>(spec);

    std::string img_rel = "images/" + pad4(i) + ".pgm";
    std::string msk_rel = "masks/" + pad4(i) + ".pgm";
    write_pgm(opt.out + "/" + img_rel, sc.image.data(), opt.size, opt.size, 65535);
    write_pgm(opt.out + "/" + msk_rel, sc.mask.data(), opt.size, opt.size, 255);

    json centroids = json::array();
    for (const auto& c : sc.centroids) centroids.push_back({c[0], c[1]});
    pairs.push_back({{"image", img_rel},
                     {"mask", msk_rel},
                     {"seed", spec.seed},
                     {"centroids", std::move(centroids)}});
  }

  json manifest = {{"count", opt.count},
                   {"size", opt.size},
                   {"targets", opt.targets},
                   {"seed", opt.seed},
                   {"pairs", std::move(pairs)}};
  write_text_file(opt.out + "/manifest.json", manifest.dump(2) + "\n");
  out << "gen: wrote " << opt.count << " pairs (" << opt.size << "x" << opt.size << ", "
      << opt.targets << " targets) to " << opt.out << "\n";
  return 0;
}

int train(const TrainOptions& opt, std::ostream& out) {
  validate(opt.config);
  Dataset ds = load_dataset(opt.data);
  if (opt.config.input > 0 && opt.config.input != ds.size)
    throw FormatError("train: dataset resolution " + std::to_string(ds.size) +
                      " does not match configured input " + std::to_string(opt.config.input));
  if (opt.config.precision == "f64") return run_train<double>(opt, ds, out);
  return run_train<float>(opt, ds, out);
}

int infer(const InferOptions& opt, std::ostream& out) {
  if (!(opt.tau > 0.0 && opt.tau < 1.0)) throw ContractError("infer: tau must lie in (0, 1)");
  json cj = peek_weights_config(opt.ckpt);
  if (cj.empty()) throw FormatError(opt.ckpt + ": checkpoint carries no run config");
  RunConfig rc = config_from_json(cj);
  PgmImage im = read_pgm(opt.image);
  if (im.height % 16 != 0 || im.width % 16 != 0)
    throw ContractError("infer: image extents must be multiples of 16, got " +
                        std::to_string(im.height) + "x" + std::to_string(im.width));
  if (rc.precision == "f64") return run_infer<double>(opt, rc, im, out);
  return run_infer<float>(opt, rc, im, out);
}

int eval(const EvalOptions& opt, std::ostream& out) {
  std::map<std::string, fs::path> pred = list_pgms(opt.pred);
  std::map<std::string, fs::path> gt = list_pgms(opt.gt);
  if (pred.empty()) throw FormatError(opt.pred + ": no .pgm files");
  {
    auto keys = [](const std::map<std::string, fs::path>& m) {
      std::vector<std::string> k;
      for (const auto& [name, path] : m) k.push_back(name);
      return k;
    };
    if (keys(pred) != keys(gt))
      throw FormatError("eval: prediction and ground-truth file sets differ");
  }

  std::vector<std::string> names;
  std::vector<Mask> pm, gm;
  for (const auto& [name, path] : pred) {
    PgmImage a = read_pgm(path.string());
    PgmImage b = read_pgm(gt.at(name).string());
    pm.push_back(binarize(a.values, a.height, a.width, 0.5));
    gm.push_back(binarize(b.values, b.height, b.width, 0.5));
    names.push_back(name);
  }
  DetectionReport rep = evaluate(pm, gm);

  json images = json::array();
  std::string csv = "name,tp,fp,fn,iou,gt_targets,detected,false_pixels,total_pixels\n";
  for (size_t i = 0; i < rep.images.size(); ++i) {
    const ImageEval& e = rep.images[i];
    images.push_back({{"name", names[i]},
                      {"tp", e.px.tp},
                      {"fp", e.px.fp},
                      {"fn", e.px.fn},
                      {"iou", iou_from(e.px)},
                      {"gt_targets", e.tg.gt_targets},
                      {"detected", e.tg.detected},
                      {"false_pixels", e.tg.false_pixels},
                      {"total_pixels", e.tg.total_pixels}});
    csv += names[i] + "," + std::to_string(e.px.tp) + "," + std::to_string(e.px.fp) + "," +
           std::to_string(e.px.fn) + "," + fmt_exact(iou_from(e.px)) + "," +
           std::to_string(e.tg.gt_targets) + "," + std::to_string(e.tg.detected) + "," +
           std::to_string(e.tg.false_pixels) + "," + std::to_string(e.tg.total_pixels) + "\n";
  }
  json aggregate = {{"iou", rep.iou()}, {"niou", rep.niou()}, {"f", rep.f()},
                    {"pd", rep.pd()},   {"fa", rep.fa()},     {"fa_e6", rep.fa() * 1e6}};
  if (!opt.report.empty())
    write_text_file(opt.report,
                    json({{"images", std::move(images)}, {"aggregate", aggregate}}).dump(2) + "\n");
  if (!opt.csv.empty()) write_text_file(opt.csv, csv);

  char line[256];
  std::snprintf(line, sizeof line,
                "eval: %zu images  IoU %.6f  nIoU %.6f  F %.6f  Pd %.6f  Fa %.3fe-6\n",
                rep.images.size(), rep.iou(), rep.niou(), rep.f(), rep.pd(), rep.fa() * 1e6);
  out << line;
  return 0;
}

int guard(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const GenerationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace lohg::cmd
