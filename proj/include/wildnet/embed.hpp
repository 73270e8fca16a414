#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "wildnet/tensor.hpp"

namespace wildnet {

/// Source-grid coordinate of a subsampled pixel.
struct GridIndex {
  Index row = 0;
  Index col = 0;

  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

inline constexpr double kDefaultNormEps = 1e-12;

/// Per-pixel embeddings from the projection head. `index_map` is empty for a
/// full grid and lists the source coordinates (row-major) after subsampling.
template <typename Scalar>
struct ProjectedGrid {
  FeatureMap<Scalar> values;
  std::vector<GridIndex> index_map;
  Scalar norm_eps = static_cast<Scalar>(kDefaultNormEps);

  Index channels() const { return values.channels(); }
  Index pixels() const { return values.pixels(); }
};

/// Divides every pixel vector by max(||v||_2, eps).
template <typename Scalar>
ProjectedGrid<Scalar> normalize_grid(const ProjectedGrid<Scalar>& grid) {
  if (!grid.values.all_finite()) {
    throw DataError("embed", "projected grid contains non-finite values");
  }
  ProjectedGrid<Scalar> out = grid;
  auto& v = out.values.values();
  const Vector<Scalar> norms = grid.values.values().colwise().norm().transpose();
  for (Index p = 0; p < v.cols(); ++p) {
    v.col(p) /= std::max(norms[p], grid.norm_eps);
  }
  return out;
}

/// Backward of `normalize_grid`: given dL/dy for y = x / max(|x|, eps),
/// returns dL/dx.
template <typename Scalar>
FeatureMap<Scalar> normalize_backward(const ProjectedGrid<Scalar>& input, const FeatureMap<Scalar>& grad_out) {
  const auto& x = input.values.values();
  FeatureMap<Scalar> grad(x.rows(), input.values.height(), input.values.width());
  for (Index p = 0; p < x.cols(); ++p) {
    const Scalar norm = x.col(p).norm();
    const auto g = grad_out.values().col(p);
    if (norm > input.norm_eps) {
      const Scalar inv = Scalar(1) / norm;
      const auto y = x.col(p) * inv;
      grad.values().col(p) = (g - y * y.dot(g)) * inv;
    } else {
      grad.values().col(p) = g / input.norm_eps;
    }
  }
  return grad;
}

/// Lattice positions floor((i + 0.5) * in / out) for i in [0, out).
inline std::vector<Index> uniform_lattice(Index in, Index out) {
  std::vector<Index> idx(static_cast<std::size_t>(out));
  for (Index i = 0; i < out; ++i) {
    // Integer form of floor((2i + 1) * in / (2 out)) avoids rounding drift.
    idx[static_cast<std::size_t>(i)] = ((2 * i + 1) * in) / (2 * out);
  }
  return idx;
}

template <typename Scalar>
ProjectedGrid<Scalar> gather_pixels(const ProjectedGrid<Scalar>& grid, const std::vector<GridIndex>& picks,
                                    Index out_h, Index out_w) {
  const Index w = grid.values.width();
  Matrix<Scalar> values(grid.channels(), out_h * out_w);
  for (Index p = 0; p < out_h * out_w; ++p) {
    const GridIndex& g = picks[static_cast<std::size_t>(p)];
    values.col(p) = grid.values.values().col(g.row * w + g.col);
  }
  ProjectedGrid<Scalar> out;
  out.values = FeatureMap<Scalar>(out_h, out_w, std::move(values));
  out.norm_eps = grid.norm_eps;
  out.index_map = picks;
  return out;
}

/// Selects an out_h x out_w sub-grid on a half-cell-offset uniform lattice.
/// Two grids of equal size subsampled this way are pixel-aligned.
template <typename Scalar>
ProjectedGrid<Scalar> uniform_subsample(const ProjectedGrid<Scalar>& grid, Index out_h, Index out_w) {
  const Index h = grid.values.height();
  const Index w = grid.values.width();
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w) {
    throw ParameterError("embed", "subsample size must be within the input grid");
  }
  const auto rows = uniform_lattice(h, out_h);
  const auto cols = uniform_lattice(w, out_w);
  std::vector<GridIndex> picks;
  picks.reserve(static_cast<std::size_t>(out_h * out_w));
  for (Index r : rows) {
    for (Index c : cols) picks.push_back({r, c});
  }
  return gather_pixels(grid, picks, out_h, out_w);
}

/// Seeded choice of out_h*out_w distinct pixels, returned in row-major order.
/// Only used for the sampling-method ablation.
template <typename Scalar>
ProjectedGrid<Scalar> random_subsample(const ProjectedGrid<Scalar>& grid, Index out_h, Index out_w,
                                       std::mt19937_64& rng) {
  const Index h = grid.values.height();
  const Index w = grid.values.width();
  if (out_h < 1 || out_w < 1 || out_h * out_w > h * w) {
    throw ParameterError("embed", "subsample size must be within the input grid");
  }
  std::vector<Index> all(static_cast<std::size_t>(h * w));
  std::iota(all.begin(), all.end(), Index{0});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(out_h * out_w));
  std::sort(all.begin(), all.end());
  std::vector<GridIndex> picks;
  picks.reserve(all.size());
  for (Index p : all) picks.push_back({p / w, p % w});
  return gather_pixels(grid, picks, out_h, out_w);
}

/// Scatters a gradient on a subsampled grid back onto the full grid.
template <typename Scalar>
void scatter_add(const std::vector<GridIndex>& picks, const Matrix<Scalar>& grad_sub, FeatureMap<Scalar>& grad_full) {
  const Index w = grad_full.width();
  for (Index p = 0; p < static_cast<Index>(picks.size()); ++p) {
    const GridIndex& g = picks[static_cast<std::size_t>(p)];
    grad_full.values().col(g.row * w + g.col) += grad_sub.col(p);
  }
}

}  // namespace wildnet
