#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "wildnet/netgraph.hpp"

using namespace wildnet;

namespace {

NetworkSpec small_spec() {
  NetworkSpec s;
  s.in_channels = 3;
  s.num_classes = 3;
  s.widths = {4, 5, 6};
  s.strides = {1, 2, 1};
  s.proj_hidden = 5;
  s.proj_channels = 4;
  s.fs_hooks = {"stage1", "stage2"};
  return s;
}

FeatureMap<double> random_image(std::mt19937_64& rng, Index h, Index w, double lo = 0, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  FeatureMap<double> x(3, h, w);
  for (Index i = 0; i < x.values().size(); ++i) x.values().data()[i] = u(rng);
  return x;
}

double max_diff(const FeatureMap<double>& a, const FeatureMap<double>& b) {
  return (a.values() - b.values()).cwiseAbs().maxCoeff();
}

/// Per-channel (x - mean) / max(std, eps) * ts + tm written out with loops.
std::vector<std::vector<double>> hand_stylize(const std::vector<std::vector<double>>& x, const std::vector<double>& tm,
                                              const std::vector<double>& ts, double eps) {
  auto out = x;
  for (std::size_t c = 0; c < x.size(); ++c) {
    double m = 0;
    for (double v : x[c]) m += v;
    m /= static_cast<double>(x[c].size());
    double var = 0;
    for (double v : x[c]) var += (v - m) * (v - m);
    const double sd = std::max(std::sqrt(var / static_cast<double>(x[c].size())), eps);
    for (std::size_t p = 0; p < x[c].size(); ++p) out[c][p] = (x[c][p] - m) / sd * ts[c] + tm[c];
  }
  return out;
}

}  // namespace

TEST_CASE("no hooks: stylized branch equals plain branch exactly") {
  auto spec = small_spec();
  spec.fs_hooks.clear();
  NetworkAssembly<double> a(spec, 1);
  std::mt19937_64 rng(2);
  const auto src = random_image(rng, 8, 8);
  const auto wild = random_image(rng, 8, 8, -1, 3);
  const auto f = a.forward_training(src, wild);
  CHECK(f.plain.logits.values() == f.stylized.logits.values());
  CHECK(f.plain.proj.values.values() == f.stylized.proj.values.values());
}

TEST_CASE("wild image equal to source: stylization is the identity") {
  NetworkAssembly<double> a(small_spec(), 3);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 5; ++t) {
    const auto src = random_image(rng, 8, 10);
    const auto f = a.forward_training(src, src);
    CHECK(max_diff(f.plain.logits, f.stylized.logits) < 1e-5);
    CHECK(max_diff(f.plain.proj.values, f.stylized.proj.values) < 1e-5);
  }
}

TEST_CASE("two 1x1 linear layers with hand-set weights match a hand trace") {
  // x: 2 channels, 3 pixels. Layer 1: 2 -> 2, hooked; layer 2: 2 -> 1.
  SegmentationNet<double> net;
  net.stages.emplace_back(2, 2, 1, 1, 0);
  net.stages.emplace_back(2, 1, 1, 1, 0);
  net.stages[0].weight << 1.0, 2.0, -1.0, 0.5;
  net.stages[0].bias << 0.5, 3.0;
  net.stages[1].weight << 1.0, -0.5;
  net.stages[1].bias << 0.25;
  net.classifier = Conv2d<double>(1, 1, 1, 1, 0);
  net.classifier.weight << 2.0;
  net.classifier.bias << -1.0;

  FeatureMap<double> x(2, 1, 3);
  x.values() << 1, 2, 3, 0, 1, -1;
  const std::vector<double> tm{0.5, 2.0}, ts{1.5, 0.25};

  // layer 1 by hand
  std::vector<std::vector<double>> y1(2, std::vector<double>(3));
  const double w1[2][2] = {{1.0, 2.0}, {-1.0, 0.5}};
  const double b1[2] = {0.5, 3.0};
  for (int o = 0; o < 2; ++o) {
    for (int p = 0; p < 3; ++p) y1[o][p] = w1[o][0] * x(0, 0, p) + w1[o][1] * x(1, 0, p) + b1[o];
  }
  auto z1 = hand_stylize(y1, tm, ts, 1e-5);
  for (auto& ch : z1) {
    for (auto& v : ch) v = std::max(v, 0.0);
  }
  std::vector<double> expect(3);
  for (int p = 0; p < 3; ++p) {
    const double y2 = std::max(1.0 * z1[0][p] - 0.5 * z1[1][p] + 0.25, 0.0);
    expect[static_cast<std::size_t>(p)] = 2.0 * y2 - 1.0;
  }

  StylePlan<double> plan(2);
  ChannelStats<double> target{Vector<double>(2), Vector<double>(2)};
  target.mean << 0.5, 2.0;
  target.std << 1.5, 0.25;
  plan[0] = HookTarget<double>{target, false};
  const auto logits = net.logits(x, &plan, 1e-5);
  for (int p = 0; p < 3; ++p) CHECK(logits(0, 0, p) == doctest::Approx(expect[static_cast<std::size_t>(p)]).epsilon(1e-12));
}

TEST_CASE("stylizing two consecutive layers equals applying the rule layer by layer") {
  SegmentationNet<double> net;
  std::mt19937_64 rng(5);
  net.stages.emplace_back(3, 4, 1, 1, 0);
  net.stages.emplace_back(4, 3, 1, 1, 0);
  for (auto& s : net.stages) s.init(rng);
  net.classifier = Conv2d<double>(3, 2, 1, 1, 0);
  net.classifier.init(rng);
  const auto x = random_image(rng, 3, 4);
  ChannelStats<double> t1{Vector<double>::Constant(4, 0.3), Vector<double>::Constant(4, 1.7)};
  ChannelStats<double> t2{Vector<double>::Constant(3, -0.2), Vector<double>::Constant(3, 0.6)};
  StylePlan<double> plan(2);
  plan[0] = HookTarget<double>{t1, false};
  plan[1] = HookTarget<double>{t2, false};
  const auto got = net.encode(x, &plan, nullptr, nullptr, 1e-5, nullptr);

  auto as_vecs = [](const FeatureMap<double>& m) {
    std::vector<std::vector<double>> v(static_cast<std::size_t>(m.channels()));
    for (Index c = 0; c < m.channels(); ++c) v[static_cast<std::size_t>(c)].assign(m.values().row(c).data(), m.values().row(c).data() + m.pixels());
    return v;
  };
  auto from_vecs = [&](const std::vector<std::vector<double>>& v) {
    FeatureMap<double> m(static_cast<Index>(v.size()), 3, 4);
    for (std::size_t c = 0; c < v.size(); ++c) {
      for (std::size_t p = 0; p < v[c].size(); ++p) m.values()(static_cast<Index>(c), static_cast<Index>(p)) = std::max(v[c][p], 0.0);
    }
    return m;
  };
  auto h = from_vecs(hand_stylize(as_vecs(net.stages[0].forward(x)), std::vector<double>(4, 0.3), std::vector<double>(4, 1.7), 1e-5));
  h = from_vecs(hand_stylize(as_vecs(net.stages[1].forward(h)), std::vector<double>(3, -0.2), std::vector<double>(3, 0.6), 1e-5));
  CHECK(max_diff(got, h) < 1e-12);
}

TEST_CASE("stripped model reproduces the plain training branch") {
  NetworkAssembly<double> a(small_spec(), 6);
  const auto model = a.strip_for_inference();
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const auto src = random_image(rng, 12, 9);
    const auto wild = random_image(rng, 12, 9, -2, 2);
    const auto f = a.forward_training(src, wild);
    CHECK(max_diff(model.logits(src), f.plain.logits) <= 1e-6);
  }
  CHECK(model.parameter_count() == a.parameter_count() - a.projector().parameter_count());
  CHECK(model.fs_hooks == a.spec().fs_hooks);
}

TEST_CASE("parameter count follows the spec") {
  const auto spec = small_spec();
  NetworkAssembly<double> a(spec, 1);
  Index expect = 0, in = spec.in_channels;
  for (Index w : spec.widths) {
    expect += w * in * 9 + w;
    in = w;
  }
  expect += spec.num_classes * in + spec.num_classes;
  const Index proj = spec.proj_hidden * in + spec.proj_hidden + spec.proj_channels * spec.proj_hidden + spec.proj_channels;
  CHECK(a.parameter_count() == expect + proj);
  CHECK(a.projector().parameter_count() == proj);
  Index listed = 0;
  for (const auto& p : a.parameters()) listed += p.values.size();
  CHECK(listed == a.parameter_count());
}

TEST_CASE("same seed gives identical outputs; hooks never touch the plain branch") {
  NetworkAssembly<double> a(small_spec(), 9), b(small_spec(), 9);
  std::mt19937_64 rng(10);
  const auto src = random_image(rng, 8, 8);
  const auto wild = random_image(rng, 8, 8);
  const auto fa = a.forward_training(src, wild);
  const auto fb = b.forward_training(src, wild);
  CHECK(fa.stylized.logits.values() == fb.stylized.logits.values());
  CHECK(fa.plain.proj.values.values() == fb.plain.proj.values.values());
  b.set_fs_hooks({"stage2"});
  CHECK(b.forward_training(src, wild).plain.logits.values() == fa.plain.logits.values());
}

TEST_CASE("evaluation mode bypasses the hooks") {
  NetworkAssembly<double> a(small_spec(), 11);
  std::mt19937_64 rng(12);
  const auto src = random_image(rng, 8, 8);
  HookStats<double> stats;
  a.wild_projection(random_image(rng, 8, 8, -3, 3), &stats);
  const auto plan = a.plan_from(stats);
  REQUIRE(plan[0].has_value());
  a.set_training(false);
  CHECK(a.forward_branch(src, &plan, nullptr).logits.values() == a.forward_branch(src, nullptr, nullptr).logits.values());
  a.set_training(true);
  CHECK(max_diff(a.forward_branch(src, &plan, nullptr).logits, a.forward_branch(src, nullptr, nullptr).logits) > 1e-6);
}

TEST_CASE("invalid hook placement is rejected") {
  auto spec = small_spec();
  spec.fs_hooks = {"stage9"};
  CHECK_THROWS_AS(NetworkAssembly<double>(spec, 1), ConfigError);
  spec.fs_hooks = {"stage3"};
  spec.fs_max_depth = 2;
  CHECK_THROWS_AS(NetworkAssembly<double>(spec, 1), ConfigError);
  NetworkAssembly<double> a(small_spec(), 1);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(a.forward_training(random_image(rng, 8, 8), random_image(rng, 6, 8)), ShapeError);
}

TEST_CASE("backward through the stylized branch matches finite differences") {
  NetworkAssembly<double> a(small_spec(), 13);
  std::mt19937_64 rng(14);
  const auto src = random_image(rng, 6, 6);
  HookStats<double> stats;
  a.wild_projection(random_image(rng, 6, 6, -1, 2), &stats);
  const auto plan = a.plan_from(stats);
  const auto probe = a.forward_branch(src, &plan, nullptr);
  const auto gl = random_image(rng, 6, 6, -1, 1);
  auto gp = probe.proj.values;
  std::normal_distribution<double> g;
  for (Index i = 0; i < gp.values().size(); ++i) gp.values().data()[i] = g(rng);

  auto loss = [&](NetworkAssembly<double>& m) {
    const auto o = m.forward_branch(src, &plan, nullptr);
    return o.logits.values().cwiseProduct(gl.values()).sum() + o.proj.values.values().cwiseProduct(gp.values()).sum();
  };
  auto grads = a.zero_gradients();
  a.backward(probe.trace, gl, gp, grads);
  auto params = a.parameters();
  auto gviews = grads.views();
  REQUIRE(params.size() == gviews.size());
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  for (std::size_t k = 0; k < params.size(); ++k) {
    CHECK(params[k].name == gviews[k].name);
    for (int t = 0; t < 4; ++t) {
      const Index i = pick(rng) % params[k].values.size();
      double& w = params[k].values[i];
      const double keep = w;
      w = keep + 1e-5;
      const double up = loss(a);
      w = keep - 1e-5;
      const double down = loss(a);
      w = keep;
      const double numeric = (up - down) / 2e-5;
      CHECK(gviews[k].values[i] == doctest::Approx(numeric).epsilon(1e-4).scale(1.0));
    }
  }
}
