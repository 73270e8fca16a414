#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "wildnet/layers.hpp"

using namespace wildnet;

namespace {

FeatureMap<double> random_map(std::mt19937_64& rng, Index c, Index h, Index w) {
  std::normal_distribution<double> g;
  FeatureMap<double> fm(c, h, w);
  for (Index i = 0; i < fm.values().size(); ++i) fm.values().data()[i] = g(rng);
  return fm;
}

/// Direct 4-loop convolution with zero padding.
FeatureMap<double> naive_conv(const Conv2d<double>& conv, const FeatureMap<double>& x) {
  const Index oh = (x.height() + 2 * conv.pad - conv.kernel) / conv.stride + 1;
  const Index ow = (x.width() + 2 * conv.pad - conv.kernel) / conv.stride + 1;
  FeatureMap<double> y(conv.out_channels, oh, ow);
  for (Index o = 0; o < conv.out_channels; ++o) {
    for (Index r = 0; r < oh; ++r) {
      for (Index c = 0; c < ow; ++c) {
        double s = conv.bias[o];
        for (Index i = 0; i < conv.in_channels; ++i) {
          for (Index ky = 0; ky < conv.kernel; ++ky) {
            for (Index kx = 0; kx < conv.kernel; ++kx) {
              const Index yy = r * conv.stride - conv.pad + ky;
              const Index xx = c * conv.stride - conv.pad + kx;
              if (yy < 0 || xx < 0 || yy >= x.height() || xx >= x.width()) continue;
              s += conv.weight(o, (i * conv.kernel + ky) * conv.kernel + kx) * x(i, yy, xx);
            }
          }
        }
        y(o, r, c) = s;
      }
    }
  }
  return y;
}

}  // namespace

TEST_CASE("convolution matches the direct loop") {
  std::mt19937_64 rng(1);
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {3, 1, 0}, {1, 2, 0}}) {
    Conv2d<double> conv(3, 4, k, s, p);
    conv.init(rng);
    conv.bias.setRandom();
    const auto x = random_map(rng, 3, 7, 6);
    const auto y = conv.forward(x);
    const auto ref = naive_conv(conv, x);
    REQUIRE(y.same_shape(ref));
    CHECK((y.values() - ref.values()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("convolution backward matches finite differences") {
  std::mt19937_64 rng(2);
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}}) {
    Conv2d<double> conv(2, 3, k, s, p);
    conv.init(rng);
    const auto x = random_map(rng, 2, 5, 5);
    Matrix<double> cols;
    const auto y = conv.forward(x, &cols);
    const auto w = random_map(rng, y.channels(), y.height(), y.width());
    Matrix<double> gw = Matrix<double>::Zero(conv.weight.rows(), conv.weight.cols());
    Vector<double> gb = Vector<double>::Zero(conv.bias.size());
    const auto gx = conv.backward(cols, 5, 5, w, gw, gb);

    auto loss_x = [&](const std::vector<double>& v) {
      FeatureMap<double> m(2, 5, 5);
      std::copy(v.begin(), v.end(), m.values().data());
      return conv.forward(m).values().cwiseProduct(w.values()).sum();
    };
    const auto& xv = x.values();
    CHECK(oracle::rel_error({gx.values().data(), gx.values().data() + gx.values().size()},
                            oracle::numeric_grad(loss_x, {xv.data(), xv.data() + xv.size()}, 1e-6)) < 1e-7);

    auto loss_w = [&](const std::vector<double>& v) {
      Conv2d<double> c2 = conv;
      std::copy(v.begin(), v.end(), c2.weight.data());
      return c2.forward(x).values().cwiseProduct(w.values()).sum();
    };
    const auto& wv = conv.weight;
    CHECK(oracle::rel_error({gw.data(), gw.data() + gw.size()},
                            oracle::numeric_grad(loss_w, {wv.data(), wv.data() + wv.size()}, 1e-6)) < 1e-7);
    for (Index o = 0; o < 3; ++o) CHECK(gb[o] == doctest::Approx(w.values().row(o).sum()));
  }
}

TEST_CASE("bilinear resize: constants stay constant, same size is identity") {
  FeatureMap<double> c(2, 4, 5);
  c.values().setConstant(3.25);
  const auto up = BilinearResize<double>(4, 5, 9, 13).forward(c);
  CHECK((up.values().array() - 3.25).abs().maxCoeff() < 1e-12);
  std::mt19937_64 rng(3);
  const auto x = random_map(rng, 2, 4, 5);
  CHECK((BilinearResize<double>(4, 5, 4, 5).forward(x).values() - x.values()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("bilinear backward is the adjoint of forward") {
  std::mt19937_64 rng(4);
  const BilinearResize<double> r(3, 4, 12, 16);
  const auto x = random_map(rng, 2, 3, 4);
  const auto g = random_map(rng, 2, 12, 16);
  const double lhs = r.forward(x).values().cwiseProduct(g.values()).sum();
  const double rhs = x.values().cwiseProduct(r.backward(g).values()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("relu and its backward") {
  FeatureMap<double> x(1, 1, 4);
  x.values() << -1, 0, 2, -3;
  FeatureMap<double> g(1, 1, 4);
  g.values() << 1, 1, 1, 1;
  const auto pre = x;
  relu_inplace(x);
  relu_backward_inplace(pre, g);
  CHECK(x.values() == (Matrix<double>(1, 4) << 0, 0, 2, 0).finished());
  CHECK(g.values() == (Matrix<double>(1, 4) << 0, 0, 1, 0).finished());
}

TEST_CASE("wrong input channel count is rejected") {
  Conv2d<float> conv(3, 2, 3, 1, 1);
  CHECK_THROWS_AS(conv.forward(FeatureMap<float>(2, 4, 4)), ShapeError);
}
