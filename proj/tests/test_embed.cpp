#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "wildnet/embed.hpp"

using namespace wildnet;

namespace {

ProjectedGrid<double> random_grid(std::mt19937_64& rng, Index c, Index h, Index w) {
  std::normal_distribution<double> g;
  ProjectedGrid<double> grid{FeatureMap<double>(c, h, w), {}, kDefaultNormEps};
  for (Index i = 0; i < grid.values.values().size(); ++i) grid.values.values().data()[i] = g(rng);
  return grid;
}

}  // namespace

TEST_CASE("pixel (3,4) normalizes to (0.6,0.8)") {
  ProjectedGrid<double> grid{FeatureMap<double>(2, 1, 1), {}, kDefaultNormEps};
  grid.values.values() << 3, 4;
  const auto out = normalize_grid(grid);
  CHECK(out.values.values()(0, 0) == doctest::Approx(0.6));
  CHECK(out.values.values()(1, 0) == doctest::Approx(0.8));
}

TEST_CASE("zero vector stays zero, unit vector is unchanged") {
  ProjectedGrid<double> grid{FeatureMap<double>(3, 1, 2), {}, kDefaultNormEps};
  grid.values.values().col(1) << 0, 1, 0;
  const auto out = normalize_grid(grid);
  CHECK(out.values.values().col(0).isZero());
  CHECK((out.values.values().col(1) - grid.values.values().col(1)).norm() < 1e-7);
}

TEST_CASE("non-finite projection is rejected") {
  ProjectedGrid<float> grid{FeatureMap<float>(1, 1, 1), {}, 1e-12f};
  grid.values.values()(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(normalize_grid(grid), DataError);
}

TEST_CASE("normalization is idempotent and scale invariant") {
  std::mt19937_64 rng(1);
  auto grid = random_grid(rng, 5, 4, 4);
  const auto once = normalize_grid(grid);
  const auto twice = normalize_grid(once);
  CHECK((once.values.values() - twice.values.values()).cwiseAbs().maxCoeff() < 1e-12);
  grid.values.values() *= 17.5;
  CHECK((normalize_grid(grid).values.values() - once.values.values()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lattice picks") {
  CHECK(uniform_lattice(4, 2) == std::vector<Index>{1, 3});
  const auto big = uniform_lattice(192, 64);
  for (Index i = 0; i < 64; ++i) CHECK(big[static_cast<std::size_t>(i)] == 3 * i + 1);
  const auto same = uniform_lattice(7, 7);
  for (Index i = 0; i < 7; ++i) CHECK(same[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("4x4 to 2x2 keeps rows and cols 1 and 3") {
  std::mt19937_64 rng(2);
  const auto grid = random_grid(rng, 2, 4, 4);
  const auto sub = uniform_subsample(grid, 2, 2);
  const std::vector<GridIndex> expect{{1, 1}, {1, 3}, {3, 1}, {3, 3}};
  CHECK(sub.index_map == expect);
  for (Index p = 0; p < 4; ++p) {
    const auto& g = expect[static_cast<std::size_t>(p)];
    CHECK(sub.values.values().col(p) == grid.values.values().col(g.row * 4 + g.col));
  }
}

TEST_CASE("same-size subsample is the identity") {
  std::mt19937_64 rng(3);
  const auto grid = random_grid(rng, 3, 5, 6);
  const auto sub = uniform_subsample(grid, 5, 6);
  CHECK(sub.values.values() == grid.values.values());
  CHECK(sub.index_map.size() == 30);
  CHECK_THROWS_AS(uniform_subsample(grid, 6, 6), ParameterError);
  CHECK_THROWS_AS(uniform_subsample(grid, 0, 2), ParameterError);
}

TEST_CASE("grids of equal size share index maps") {
  std::mt19937_64 rng(4);
  const auto a = random_grid(rng, 3, 12, 9);
  const auto b = random_grid(rng, 7, 12, 9);
  CHECK(uniform_subsample(a, 5, 4).index_map == uniform_subsample(b, 5, 4).index_map);
}

TEST_CASE("subsampling and normalizing commute") {
  std::mt19937_64 rng(5);
  const auto grid = random_grid(rng, 4, 9, 9);
  const auto a = normalize_grid(uniform_subsample(grid, 3, 3));
  const auto b = uniform_subsample(normalize_grid(grid), 3, 3);
  CHECK((a.values.values() - b.values.values()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("random subsample is seeded, distinct and sorted") {
  std::mt19937_64 rng(6);
  const auto grid = random_grid(rng, 2, 8, 8);
  std::mt19937_64 r1(9), r2(9);
  const auto a = random_subsample(grid, 4, 4, r1);
  const auto b = random_subsample(grid, 4, 4, r2);
  CHECK(a.index_map == b.index_map);
  for (std::size_t i = 1; i < a.index_map.size(); ++i) {
    const auto& p = a.index_map[i - 1];
    const auto& q = a.index_map[i];
    CHECK(p.row * 8 + p.col < q.row * 8 + q.col);
  }
}

TEST_CASE("normalize backward matches finite differences") {
  std::mt19937_64 rng(7);
  const auto grid = random_grid(rng, 3, 2, 2);
  FeatureMap<double> w(3, 2, 2);
  std::normal_distribution<double> g;
  for (Index i = 0; i < w.values().size(); ++i) w.values().data()[i] = g(rng);
  auto f = [&](const std::vector<double>& x) {
    ProjectedGrid<double> m{FeatureMap<double>(3, 2, 2), {}, kDefaultNormEps};
    std::copy(x.begin(), x.end(), m.values.values().data());
    return normalize_grid(m).values.values().cwiseProduct(w.values()).sum();
  };
  const auto& v = grid.values.values();
  const auto numeric = oracle::numeric_grad(f, std::vector<double>(v.data(), v.data() + v.size()), 1e-6);
  const auto analytic = normalize_backward(grid, w);
  const auto& av = analytic.values();
  CHECK(oracle::rel_error(std::vector<double>(av.data(), av.data() + av.size()), numeric) < 1e-6);
}

TEST_CASE("scatter_add accumulates at the picked pixels") {
  std::vector<GridIndex> picks{{0, 1}, {1, 0}};
  Matrix<double> sub(1, 2);
  sub << 2, 3;
  FeatureMap<double> full(1, 2, 2);
  scatter_add(picks, sub, full);
  scatter_add(picks, sub, full);
  CHECK(full(0, 0, 1) == 4);
  CHECK(full(0, 1, 0) == 6);
  CHECK(full(0, 0, 0) == 0);
}
