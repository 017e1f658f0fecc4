#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "lohg/model.hpp"
#include "oracles.hpp"

using namespace lohg;

namespace {

// Deterministic weighted scalar readout; breaks symmetry so gradients differ
// per element.
template <typename T>
Tensor<T> weighted_readout(const Tensor<T>& y, uint64_t seed = 99) {
  Rng rng(seed);
  Tensor<T> w = test_util::rand_uniform<T>(y.shape(), rng, 0.5, 1.5);
  return sum(mul(y, w));
}

template <typename T>
void zero_all_params(ParamRegistry<T>& reg) {
  for (auto& [name, p] : reg.items()) {
    auto d = p.mutable_data();
    for (auto& x : d) x = T(0);
  }
}

template <typename T>
bool bits_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), sizeof(T) * a.numel()) == 0;
}

}  // namespace

TEST_CASE("euclidean branch: shapes, zero-weight annihilation") {
  Rng rng(41);
  ParamRegistry<double> reg;
  auto branch = EuclideanBranch<double>::create(reg, "euclid", 1, {4, 8}, rng);
  Tensor<double> x = test_util::rand_uniform<double>({1, 1, 8, 8}, rng, 0.0, 1.0);

  auto feats = branch.forward(x);
  REQUIRE(feats.size() == 2);
  CHECK(feats[0].shape() == Shape{1, 4, 8, 8});
  CHECK(feats[1].shape() == Shape{1, 8, 4, 4});

  zero_all_params(reg);
  feats = branch.forward(x);
  for (const auto& f : feats) {
    for (double v : f.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("euclidean branch: gradients through a downsampling stage") {
  Rng rng(4242);
  ParamRegistry<double> reg;
  auto branch = EuclideanBranch<double>::create(reg, "euclid", 1, {2, 3}, rng);
  Tensor<double> x = test_util::rand_uniform<double>({1, 1, 4, 4}, rng, 0.1, 1.0);

  auto leaves = test_util::registry_leaves<double>(reg);
  leaves.push_back(x);
  auto forward = [&]() {
    auto feats = branch.forward(x);
    return add(weighted_readout(feats[0], 7), weighted_readout(feats[1], 8));
  };
  // h = 1e-5: the normalization chain has enough curvature that 1e-4 probes
  // pick up visible second-order truncation error.
  auto report = test_util::fd_check_params<double>(forward, leaves, 1e-5);
  INFO(report.worst);
  CHECK(report.max_rel_err <= 1e-5);
  CHECK(report.elements_checked > 200);
}

TEST_CASE("lorentz conv and norm/activation stages stay on the manifold") {
  Rng rng(7);
  ParamRegistry<double> reg;
  const double k = 1.4;
  auto conv = LorentzConv<double>::create(reg, "lc", 3, 5, 3, 1, 1, rng, kaiming_gain(0.1));
  Tensor<double> s = test_util::rand_uniform<double>({2, 3, 6, 6}, rng, -1.0, 1.0);
  LorentzMap<double> m = map_from_spatial(s, k);

  LorentzMap<double> y = conv.forward(m);
  CHECK(y.full.shape() == Shape{2, 6, 6, 6});
  CHECK(y.k == k);
  CHECK(map_residual_max(y) <= 1e-9);

  // Training moves the temporal taps off their zero init; the reconstruction
  // must hold regardless of kernel contents.
  for (auto& w : conv.conv.w.mutable_data()) w += rng.uniform(-0.2, 0.2);
  CHECK(map_residual_max(conv.forward(m)) <= 1e-9);
}

TEST_CASE("geometric attention: range and zero-weight midpoint") {
  Rng rng(11);
  ParamRegistry<double> reg;
  auto attn = GeometricAttention<double>::create(reg, "attn", 8, rng);
  LorentzMap<double> m =
      map_from_spatial(test_util::rand_uniform<double>({2, 8, 5, 5}, rng, -2.0, 2.0), 1.0);

  Tensor<double> alpha = attn.forward(m);
  REQUIRE(alpha.shape() == Shape{2, 8, 1, 1});
  for (double a : alpha.data()) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }

  zero_all_params(reg);
  alpha = attn.forward(m);
  for (double a : alpha.data()) CHECK(a == 0.5);
}

TEST_CASE("galrcm block: stage-by-stage manifold residuals and shapes") {
  Rng rng(13);
  ParamRegistry<double> reg;
  const double k = 0.8;
  auto block = GalrcmBlock<double>::create(reg, "b", 3, 6, rng);
  LorentzMap<double> x =
      map_from_spatial(test_util::rand_uniform<double>({1, 3, 6, 6}, rng, -1.0, 1.0), k);

  // Walk the block's own members so every intermediate map is inspected.
  LorentzMap<double> h1 = block.conv1.forward(x);
  CHECK(map_residual_max(h1) <= 1e-9);
  LorentzMap<double> h2 = map_from_spatial(block.norm.forward(h1.spatial()), k);
  CHECK(map_residual_max(h2) <= 1e-9);
  LorentzMap<double> h3 = map_from_spatial(leaky_relu(h2.spatial(), 0.1), k);
  CHECK(map_residual_max(h3) <= 1e-9);
  LorentzMap<double> main = block.conv2.forward(h3);
  LorentzMap<double> side = block.shortcut.forward(x);
  CHECK(main.full.shape() == Shape{1, 7, 3, 3});
  CHECK(side.full.shape() == Shape{1, 7, 3, 3});

  LorentzMap<double> out = block.forward(x);
  CHECK(out.full.shape() == Shape{1, 7, 3, 3});
  CHECK(map_residual_max(out) <= 1e-9);
}

TEST_CASE("galrcm block: zero parameters collapse to the origin map") {
  Rng rng(17);
  ParamRegistry<double> reg;
  auto block = GalrcmBlock<double>::create(reg, "b", 2, 4, rng);
  zero_all_params(reg);
  const double k = 2.0;
  LorentzMap<double> x =
      map_from_spatial(test_util::rand_uniform<double>({1, 2, 4, 4}, rng, -1.0, 1.0), k);
  LorentzMap<double> y = block.forward(x);
  Tensor<double> s = y.spatial();
  for (double v : s.data()) CHECK(v == 0.0);
  Tensor<double> t = y.temporal();
  for (double v : t.data()) CHECK(v == doctest::Approx(std::sqrt(k)).epsilon(1e-15));
}

TEST_CASE("galrcm block: finite-difference gradients") {
  Rng rng(1023);
  ParamRegistry<double> reg;
  const double k = 1.3;
  auto block = GalrcmBlock<double>::create(reg, "b", 2, 4, rng);
  Tensor<double> s = test_util::rand_signed_away<double>({1, 2, 4, 4}, rng, 0.05, 1.0);

  auto leaves = test_util::registry_leaves<double>(reg);
  leaves.push_back(s);
  auto forward = [&]() {
    LorentzMap<double> y = block.forward(map_from_spatial(s, k));
    return weighted_readout(y.spatial(), 21);
  };
  auto report = test_util::fd_check_params<double>(forward, leaves);
  INFO(report.worst);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("lorentz encoder: five scales, manifold residuals, determinism") {
  for (uint64_t seed : {100u, 101u}) {
    Rng rng(seed);
    ParamRegistry<float> reg;
    auto enc =
        LorentzEncoder<float>::create(reg, "lorentz", 1, {8, 16, 32, 64, 128}, 1.0f, rng);
    Rng drng(seed + 1000);
    Tensor<float> img = test_util::rand_uniform<float>({1, 1, 64, 64}, drng, 0.0, 1.0);

    auto maps = enc.forward(img);
    REQUIRE(maps.size() == 5);
    int64_t side = 64;
    std::vector<int64_t> widths{8, 16, 32, 64, 128};
    for (size_t i = 0; i < maps.size(); ++i) {
      CHECK(maps[i].full.shape() == Shape{1, 1 + widths[i], side, side});
      CHECK(map_residual_max(maps[i]) <= 1e-4);
      if (i + 1 < maps.size()) side /= 2;
    }

    // Same seed, fresh instance: bit-identical deepest map.
    Rng rng2(seed);
    ParamRegistry<float> reg2;
    auto enc2 =
        LorentzEncoder<float>::create(reg2, "lorentz", 1, {8, 16, 32, 64, 128}, 1.0f, rng2);
    auto maps2 = enc2.forward(img);
    CHECK(bits_equal(maps.back().full, maps2.back().full));
  }
}

TEST_CASE("lorentz encoder: input contract violations") {
  Rng rng(3);
  ParamRegistry<double> reg;
  auto enc = LorentzEncoder<double>::create(reg, "l", 1, {2, 4, 8}, 1.0, rng);
  CHECK_THROWS_AS(enc.forward(Tensor<double>::zeros({1, 1, 10, 10})), DimensionError);
  CHECK_THROWS_AS(enc.forward(Tensor<double>::zeros({1, 10, 10})), DimensionError);
  CHECK_NOTHROW(enc.forward(Tensor<double>::full({1, 1, 12, 12}, 0.5)));
}

TEST_CASE("fusion: origin maps reduce to the euclidean features exactly") {
  Rng rng(19);
  Tensor<double> e = test_util::rand_uniform<double>({1, 3, 4, 4}, rng, -1.0, 1.0);
  LorentzMap<double> origin = map_from_spatial(Tensor<double>::zeros({1, 3, 4, 4}), 1.0);
  Tensor<double> fused = fuse_features(origin, e);
  CHECK(bits_equal(fused, e));

  // Misaligned shapes must be rejected.
  LorentzMap<double> m =
      map_from_spatial(test_util::rand_uniform<double>({1, 3, 4, 4}, rng, -1.0, 1.0), 1.0);
  CHECK_THROWS_AS(fuse_features(m, Tensor<double>::zeros({1, 3, 2, 2})), DimensionError);
}

TEST_CASE("soft iou loss: frozen values and contracts") {
  // 2x2 uniform 0.5 prediction against a single-pixel target.
  Tensor<double> pred = Tensor<double>::full({1, 1, 2, 2}, 0.5);
  Tensor<double> gt = Tensor<double>::from({1, 1, 2, 2}, {1.0, 0.0, 0.0, 0.0});
  CHECK(soft_iou_loss(pred, gt).item() == doctest::Approx(1.0 - 1.5 / 3.5).epsilon(1e-14));

  // Perfect binary prediction: numerator and denominator coincide.
  CHECK(soft_iou_loss(gt, gt).item() == 0.0);

  // All-zero prediction against a nonempty target.
  Tensor<double> zero = Tensor<double>::zeros({1, 1, 2, 2});
  CHECK(soft_iou_loss(zero, gt).item() == doctest::Approx(1.0 - 1.0 / 2.0).epsilon(1e-14));

  CHECK_THROWS_AS(soft_iou_loss(pred, Tensor<double>::zeros({1, 1, 3, 3})), DimensionError);
}

TEST_CASE("decoder: shape chaining and misaligned skip rejection") {
  Rng rng(23);
  ParamRegistry<double> reg;
  auto dec = Decoder<double>::create(reg, "dec", {2, 4}, rng);
  std::vector<Tensor<double>> feats{test_util::rand_uniform<double>({1, 2, 8, 8}, rng, -1, 1),
                                    test_util::rand_uniform<double>({1, 4, 4, 4}, rng, -1, 1)};
  Tensor<double> probs = dec.forward(feats);
  CHECK(probs.shape() == Shape{1, 1, 8, 8});
  for (double p : probs.data()) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }

  feats[0] = test_util::rand_uniform<double>({1, 2, 6, 6}, rng, -1, 1);
  CHECK_THROWS_AS(dec.forward(feats), DimensionError);
  feats.pop_back();
  CHECK_THROWS_AS(dec.forward(feats), DimensionError);
}

TEST_CASE("network: forward shapes, trace, probability range") {
  NetworkOptions opts;
  opts.widths = {4, 8};
  opts.edges = 6;
  Rng rng(31);
  auto net = Network<double>::create(opts, rng);
  Tensor<double> img = test_util::rand_uniform<double>({2, 1, 8, 8}, rng, 0.0, 1.0);

  ForwardTrace<double> trace;
  Tensor<double> probs = net.forward(img, &trace);
  CHECK(probs.shape() == Shape{2, 1, 8, 8});
  for (double p : probs.data()) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  REQUIRE(trace.lorentz.size() == 2);
  REQUIRE(trace.fused.size() == 2);
  REQUIRE(trace.hypergraph.size() == 2);  // one state per batch item
  CHECK(trace.hypergraph[0].P.shape() == Shape{16, 16});
  CHECK(trace.hypergraph[0].H.shape() == Shape{16, 6});
  CHECK(trace.fused[0].shape() == trace.euclid[0].shape());
}

TEST_CASE("network: deterministic init and sgd update semantics") {
  NetworkOptions opts;
  opts.widths = {4, 8};
  opts.edges = 6;
  Rng rng_a(77), rng_b(77);
  auto a = Network<double>::create(opts, rng_a);
  auto b = Network<double>::create(opts, rng_b);
  REQUIRE(a.params.items().size() == b.params.items().size());
  for (size_t i = 0; i < a.params.items().size(); ++i) {
    CHECK(a.params.items()[i].first == b.params.items()[i].first);
    CHECK(bits_equal(a.params.items()[i].second, b.params.items()[i].second));
  }

  Rng drng(5);
  Tensor<double> img = test_util::rand_uniform<double>({1, 1, 8, 8}, drng, 0.0, 1.0);
  Tensor<double> mask = Tensor<double>::zeros({1, 1, 8, 8});
  mask.mutable_data()[10] = 1.0;

  // lr 0: loss computed, parameters bit-identical afterwards.
  double loss0 = train_step(a, img, mask, 0.0);
  CHECK(std::isfinite(loss0));
  for (size_t i = 0; i < a.params.items().size(); ++i) {
    CHECK(bits_equal(a.params.items()[i].second, b.params.items()[i].second));
  }

  // Real step: same starting loss on the twin, parameters move.
  double loss1 = train_step(b, img, mask, 1e-2);
  CHECK(loss1 == loss0);
  bool any_changed = false;
  for (size_t i = 0; i < b.params.items().size(); ++i) {
    if (!bits_equal(a.params.items()[i].second, b.params.items()[i].second)) any_changed = true;
  }
  CHECK(any_changed);
}
