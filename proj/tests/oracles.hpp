#pragma once
// Naive reference implementations used by the unit tests and the acceptance
// runner. They work on plain nested vectors in double precision and share no
// code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <vector>

#include "wildnet/embed.hpp"
#include "wildnet/losses.hpp"
#include "wildnet/wilddict.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Vecs = std::vector<Vec>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline Vec unit(Vec v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
  return v;
}

inline Vec random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g;
  Vec v(dim);
  for (auto& x : v) x = g(rng);
  return unit(v);
}

/// Index of the stored vector with the largest dot product; first wins ties.
inline std::size_t scan_nearest(const Vecs& store, const Vec& q) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < store.size(); ++k) {
    if (dot(store[k], q) > dot(store[best], q)) best = k;
  }
  return best;
}

/// -log(e^{pos/t} / (e^{pos/t} + sum_neg e^{neg/t})) by direct evaluation.
inline double nce_term(const Vec& anchor, const Vec& positive, const Vecs& negatives, double tau) {
  const double num = std::exp(dot(anchor, positive) / tau);
  double den = num;
  for (const auto& n : negatives) den += std::exp(dot(anchor, n) / tau);
  return -std::log(num / den);
}

struct Instance {
  Vecs anchors;
  Vecs positives;
  std::vector<std::int32_t> labels;
  Vecs store;  // oldest first
  double tau = 0.07;
  std::int32_t ignore = 255;
};

inline Vecs negatives_of(const Instance& in, std::size_t i) {
  Vecs out;
  for (std::size_t j = 0; j < in.anchors.size(); ++j) {
    if (in.labels[j] != in.ignore && in.labels[j] != in.labels[i]) out.push_back(in.positives[j]);
  }
  return out;
}

inline double sce(const Instance& in) {
  double sum = 0;
  int valid = 0;
  for (std::size_t i = 0; i < in.anchors.size(); ++i) {
    if (in.labels[i] == in.ignore) continue;
    sum += nce_term(in.anchors[i], in.positives[i], negatives_of(in, i), in.tau);
    ++valid;
  }
  return valid ? sum / valid : 0.0;
}

inline double wce(const Instance& in) {
  double sum = 0;
  int valid = 0;
  for (std::size_t i = 0; i < in.anchors.size(); ++i) {
    if (in.labels[i] == in.ignore) continue;
    const Vec& q = in.store[scan_nearest(in.store, in.positives[i])];
    sum += nce_term(in.anchors[i], q, negatives_of(in, i), in.tau);
    ++valid;
  }
  return valid ? sum / valid : 0.0;
}

/// Random contrastive instance: n anchors on a 1 x n grid, `dim` channels,
/// labels in [0, classes) with some ignored, `store_n` store entries.
inline Instance random_instance(std::mt19937_64& rng, std::size_t n, std::size_t dim, int classes,
                                std::size_t store_n, double ignore_rate = 0.15) {
  Instance in;
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::bernoulli_distribution ign(ignore_rate);
  std::uniform_real_distribution<double> tau(0.05, 1.0);
  in.tau = tau(rng);
  for (std::size_t i = 0; i < n; ++i) {
    in.anchors.push_back(random_unit(rng, dim));
    in.positives.push_back(random_unit(rng, dim));
    in.labels.push_back(ign(rng) ? in.ignore : cls(rng));
  }
  for (std::size_t k = 0; k < store_n; ++k) in.store.push_back(random_unit(rng, dim));
  return in;
}

template <typename S>
wildnet::ProjectedGrid<S> to_grid(const Vecs& v) {
  const auto n = static_cast<wildnet::Index>(v.size());
  const auto c = static_cast<wildnet::Index>(v.front().size());
  wildnet::ProjectedGrid<S> g{wildnet::FeatureMap<S>(c, 1, n), {}, static_cast<S>(wildnet::kDefaultNormEps)};
  for (wildnet::Index i = 0; i < n; ++i) {
    for (wildnet::Index k = 0; k < c; ++k) g.values.values()(k, i) = static_cast<S>(v[i][k]);
    g.index_map.push_back({0, i});
  }
  return g;
}

template <typename S>
wildnet::CELBatch<S> to_batch(const Instance& in) {
  return {to_grid<S>(in.anchors), to_grid<S>(in.positives), in.labels, static_cast<S>(in.tau), in.ignore};
}

template <typename S>
wildnet::ContentStore<S> to_store(const Vecs& entries, wildnet::Index capacity = 0) {
  const auto c = static_cast<wildnet::Index>(entries.front().size());
  wildnet::ContentStore<S> store(c, capacity > 0 ? capacity : static_cast<wildnet::Index>(entries.size()));
  for (const auto& e : entries) {
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> col(c, 1);
    for (wildnet::Index k = 0; k < c; ++k) col(k, 0) = static_cast<S>(e[k]);
    store.push(col);
  }
  return store;
}

/// sum_i p_i (log p_i - log q_i) per pixel with both clamped at 1e-8, averaged.
inline double kl(const Vecs& p, const Vecs& q) {
  double s = 0;
  for (std::size_t px = 0; px < p.size(); ++px) {
    for (std::size_t k = 0; k < p[px].size(); ++k) {
      s += p[px][k] * (std::log(std::max(p[px][k], 1e-8)) - std::log(std::max(q[px][k], 1e-8)));
    }
  }
  return s / static_cast<double>(p.size());
}

inline Vec random_simplex(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  Vec v(k);
  double s = 0;
  for (auto& x : v) s += (x = e(rng));
  for (auto& x : v) x /= s;
  return v;
}

/// Per-class IoU from pixel index sets; classes absent from both are skipped.
inline double miou_sets(const std::vector<int>& pred, const std::vector<int>& gt, int classes, int ignore) {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    std::set<std::size_t> p, g;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      if (pred[i] == c) p.insert(i);
      if (gt[i] == c) g.insert(i);
    }
    std::vector<std::size_t> inter, uni;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(inter));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(uni));
    if (uni.empty()) continue;
    sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    ++present;
  }
  return present ? sum / present : 0.0;
}

/// Central finite difference of f with respect to every entry of x.
inline std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-4) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// max |a - b| / max(1, |b|) style relative error over a vector.
inline double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace oracle
