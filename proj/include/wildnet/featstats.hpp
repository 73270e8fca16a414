#pragma once

#include <algorithm>
#include <cmath>

#include "wildnet/tensor.hpp"

namespace wildnet {

/// Channel-wise mean and population standard deviation of a feature map.
template <typename Scalar>
struct ChannelStats {
  Vector<Scalar> mean;
  Vector<Scalar> std;

  Index channels() const { return mean.size(); }
};

inline constexpr double kDefaultStylizeEps = 1e-5;

template <typename Scalar>
ChannelStats<Scalar> channel_stats(const FeatureMap<Scalar>& fm) {
  if (!fm.all_finite()) {
    throw DataError("featstats", "feature map contains non-finite values");
  }
  const auto& v = fm.values();
  const Scalar n = static_cast<Scalar>(fm.pixels());
  ChannelStats<Scalar> stats;
  stats.mean.resize(fm.channels());
  stats.std.resize(fm.channels());
  // Sequential sums: vectorized row reductions depend on row alignment, so
  // equal channels could get different statistics. Two-pass variance keeps
  // precision for offset channels.
  for (Index c = 0; c < fm.channels(); ++c) {
    const Scalar* row = v.data() + c * v.cols();
    Scalar sum = 0;
    for (Index p = 0; p < v.cols(); ++p) sum += row[p];
    const Scalar mean = sum / n;
    Scalar sq = 0;
    for (Index p = 0; p < v.cols(); ++p) sq += (row[p] - mean) * (row[p] - mean);
    stats.mean[c] = mean;
    stats.std[c] = std::sqrt(sq / n);
  }
  return stats;
}

/// Re-normalizes every channel of `source` to the given target statistics:
///   out = target.std * (x - mean(x)) / max(std(x), eps) + target.mean
/// The source map is left untouched.
template <typename Scalar>
FeatureMap<Scalar> stylize(const FeatureMap<Scalar>& source, const ChannelStats<Scalar>& target,
                           Scalar eps = static_cast<Scalar>(kDefaultStylizeEps)) {
  if (target.channels() != source.channels() || target.std.size() != source.channels()) {
    throw ShapeError("featstats", "target statistics do not match source channel count");
  }
  const ChannelStats<Scalar> own = channel_stats(source);
  FeatureMap<Scalar> out(source.channels(), source.height(), source.width());
  for (Index c = 0; c < source.channels(); ++c) {
    const Scalar denom = std::max(own.std[c], eps);
    const Scalar gain = target.std[c] / denom;
    out.values().row(c) =
        ((source.values().row(c).array() - own.mean[c]) * gain + target.mean[c]).matrix();
  }
  return out;
}

/// Gradient of `stylize` with respect to `source`. Target statistics are
/// constants; the source's own mean and std are differentiated through.
template <typename Scalar>
FeatureMap<Scalar> stylize_backward(const FeatureMap<Scalar>& source, const ChannelStats<Scalar>& target,
                                    const FeatureMap<Scalar>& grad_out,
                                    Scalar eps = static_cast<Scalar>(kDefaultStylizeEps)) {
  if (!grad_out.same_shape(source)) {
    throw ShapeError("featstats", "gradient shape does not match source");
  }
  const ChannelStats<Scalar> own = channel_stats(source);
  const Scalar n = static_cast<Scalar>(source.pixels());
  FeatureMap<Scalar> grad_in(source.channels(), source.height(), source.width());
  for (Index c = 0; c < source.channels(); ++c) {
    const auto g = grad_out.values().row(c).array();
    const Scalar g_mean = g.sum() / n;
    if (own.std[c] > eps) {
      const Scalar inv = Scalar(1) / own.std[c];
      const auto xhat = (source.values().row(c).array() - own.mean[c]) * inv;
      const Scalar gx_mean = (g * xhat).sum() / n;
      grad_in.values().row(c) = ((g - g_mean - xhat * gx_mean) * (target.std[c] * inv)).matrix();
    } else {
      // Clamped denominator is a constant, only the mean is differentiated.
      grad_in.values().row(c) = ((g - g_mean) * (target.std[c] / eps)).matrix();
    }
  }
  return grad_in;
}

}  // namespace wildnet
