#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "wildnet/featstats.hpp"

using namespace wildnet;

namespace {

FeatureMap<double> map_2x2() {
  FeatureMap<double> fm(1, 2, 2);
  fm.values() << 1, 2, 3, 4;
  return fm;
}

FeatureMap<double> random_map(std::mt19937_64& rng, Index c, Index h, Index w) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> off(-3, 3), sc(0.2, 4);
  FeatureMap<double> fm(c, h, w);
  for (Index k = 0; k < c; ++k) {
    const double o = off(rng), s = sc(rng);
    for (Index p = 0; p < h * w; ++p) fm.values()(k, p) = o + s * g(rng);
  }
  return fm;
}

ChannelStats<double> random_stats(std::mt19937_64& rng, Index c) {
  std::uniform_real_distribution<double> m(-2, 2), s(0.1, 3);
  ChannelStats<double> st{Vector<double>(c), Vector<double>(c)};
  for (Index k = 0; k < c; ++k) {
    st.mean[k] = m(rng);
    st.std[k] = s(rng);
  }
  return st;
}

}  // namespace

TEST_CASE("stats of the 2x2 map use the population std") {
  const auto st = channel_stats(map_2x2());
  CHECK(st.mean[0] == doctest::Approx(2.5));
  CHECK(st.std[0] == doctest::Approx(std::sqrt(1.25)));
  CHECK(st.std[0] == doctest::Approx(1.1180).epsilon(1e-4));
}

TEST_CASE("constant map has zero std") {
  FeatureMap<double> fm(1, 3, 3);
  fm.values().setConstant(7);
  const auto st = channel_stats(fm);
  CHECK(st.mean[0] == 7);
  CHECK(st.std[0] == 0);
}

TEST_CASE("duplicated channel has identical stats") {
  std::mt19937_64 rng(3);
  auto fm = random_map(rng, 2, 4, 5);
  fm.values().row(1) = fm.values().row(0);
  const auto st = channel_stats(fm);
  CHECK(st.mean[0] == st.mean[1]);
  CHECK(st.std[0] == st.std[1]);
}

TEST_CASE("non-finite input is rejected") {
  auto fm = map_2x2();
  fm(0, 0, 0) = std::nan("");
  CHECK_THROWS_AS(channel_stats(fm), DataError);
}

TEST_CASE("2x2 map stylized to zero mean, unit std") {
  ChannelStats<double> target{Vector<double>::Zero(1), Vector<double>::Ones(1)};
  const auto out = stylize(map_2x2(), target);
  const double expect[] = {-1.3416, -0.4472, 0.4472, 1.3416};
  for (int i = 0; i < 4; ++i) CHECK(out.values()(0, i) == doctest::Approx(expect[i]).epsilon(1e-4));
  // exact form: (x - 2.5) / sqrt(1.25)
  for (int i = 0; i < 4; ++i) CHECK(out.values()(0, i) == doctest::Approx((i + 1 - 2.5) / std::sqrt(1.25)));
}

TEST_CASE("constant channel maps to the target mean") {
  FeatureMap<double> fm(1, 2, 3);
  fm.values().setConstant(-4);
  ChannelStats<double> target{Vector<double>::Constant(1, 5), Vector<double>::Constant(1, 2)};
  const auto out = stylize(fm, target);
  CHECK((out.values().array() == 5).all());
}

TEST_CASE("channel mismatch is a shape error") {
  ChannelStats<double> target{Vector<double>::Zero(2), Vector<double>::Ones(2)};
  CHECK_THROWS_AS(stylize(map_2x2(), target), ShapeError);
}

TEST_CASE("matched stats are a fixed point") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto fm = random_map(rng, 3, 5, 6);
    const auto out = stylize(fm, channel_stats(fm));
    for (Index i = 0; i < fm.values().size(); ++i) {
      CHECK(std::abs(out.values().data()[i] - fm.values().data()[i]) <= 1e-5 * std::max(1.0, std::abs(fm.values().data()[i])));
    }
  }
}

TEST_CASE("stylized moments match the target and order is kept") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    const auto fm = random_map(rng, 4, 6, 7);
    const auto target = random_stats(rng, 4);
    const auto out = stylize(fm, target);
    const auto st = channel_stats(out);
    for (Index c = 0; c < 4; ++c) {
      CHECK(std::abs(st.mean[c] - target.mean[c]) <= 1e-4);
      CHECK(std::abs(st.std[c] - target.std[c]) <= 1e-4);
      for (Index p = 1; p < fm.pixels(); ++p) {
        CHECK((fm.values()(c, p) < fm.values()(c, 0)) == (out.values()(c, p) < out.values()(c, 0)));
      }
    }
  }
}

TEST_CASE("backward matches finite differences") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 10; ++t) {
    const auto fm = random_map(rng, 2, 3, 3);
    const auto target = random_stats(rng, 2);
    FeatureMap<double> w(2, 3, 3);
    std::normal_distribution<double> g;
    for (Index i = 0; i < w.values().size(); ++i) w.values().data()[i] = g(rng);
    auto f = [&](const std::vector<double>& x) {
      FeatureMap<double> m(2, 3, 3);
      std::copy(x.begin(), x.end(), m.values().data());
      return stylize(m, target).values().cwiseProduct(w.values()).sum();
    };
    std::vector<double> x(fm.values().data(), fm.values().data() + fm.values().size());
    const auto numeric = oracle::numeric_grad(f, x, 1e-6);
    const auto analytic = stylize_backward(fm, target, w);
    std::vector<double> a(analytic.values().data(), analytic.values().data() + analytic.values().size());
    CHECK(oracle::rel_error(a, numeric) < 1e-6);
  }
}
