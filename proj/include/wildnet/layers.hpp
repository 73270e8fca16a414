#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "wildnet/tensor.hpp"

namespace wildnet {

/// 2-D convolution lowered to im2col + GEMM. Weight is [out, in*k*k] with
/// (in, ky, kx) ordering along columns.
template <typename Scalar>
struct Conv2d {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 1;
  Index stride = 1;
  Index pad = 0;
  Matrix<Scalar> weight;
  Vector<Scalar> bias;

  Conv2d() = default;
  Conv2d(Index in, Index out, Index k, Index s, Index p)
      : in_channels(in),
        out_channels(out),
        kernel(k),
        stride(s),
        pad(p),
        weight(Matrix<Scalar>::Zero(out, in * k * k)),
        bias(Vector<Scalar>::Zero(out)) {}

  Index out_size(Index n) const { return (n + 2 * pad - kernel) / stride + 1; }
  Index parameter_count() const { return weight.size() + bias.size(); }

  /// He-normal weights, zero bias.
  void init(std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(weight.cols())));
    for (Index i = 0; i < weight.size(); ++i) weight.data()[i] = static_cast<Scalar>(dist(rng));
    bias.setZero();
  }

  Matrix<Scalar> im2col(const FeatureMap<Scalar>& x) const {
    if (kernel == 1 && stride == 1 && pad == 0) return x.values();
    const Index oh = out_size(x.height());
    const Index ow = out_size(x.width());
    Matrix<Scalar> cols = Matrix<Scalar>::Zero(in_channels * kernel * kernel, oh * ow);
    for (Index c = 0; c < in_channels; ++c) {
      const auto src = x.plane(c);
      for (Index ky = 0; ky < kernel; ++ky) {
        for (Index kx = 0; kx < kernel; ++kx) {
          Scalar* dst = cols.row((c * kernel + ky) * kernel + kx).data();
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= x.height()) continue;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < x.width()) dst[oy * ow + ox] = src(iy, ix);
            }
          }
        }
      }
    }
    return cols;
  }

  FeatureMap<Scalar> col2im(const Matrix<Scalar>& cols, Index h, Index w) const {
    FeatureMap<Scalar> x(in_channels, h, w);
    if (kernel == 1 && stride == 1 && pad == 0) {
      x.values() = cols;
      return x;
    }
    const Index oh = out_size(h);
    const Index ow = out_size(w);
    for (Index c = 0; c < in_channels; ++c) {
      auto dst = x.plane(c);
      for (Index ky = 0; ky < kernel; ++ky) {
        for (Index kx = 0; kx < kernel; ++kx) {
          const Scalar* src = cols.row((c * kernel + ky) * kernel + kx).data();
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) dst(iy, ix) += src[oy * ow + ox];
            }
          }
        }
      }
    }
    return x;
  }

  /// Forward pass; `cols` receives the lowered input for the backward pass.
  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, Matrix<Scalar>* cols_out = nullptr) const {
    if (x.channels() != in_channels) {
      throw ShapeError("netgraph", "convolution expects " + std::to_string(in_channels) + " input channels, got " +
                                       std::to_string(x.channels()));
    }
    const Index oh = out_size(x.height());
    const Index ow = out_size(x.width());
    Matrix<Scalar> cols = im2col(x);
    Matrix<Scalar> y = weight * cols;
    y.colwise() += bias;
    if (cols_out) *cols_out = std::move(cols);
    return FeatureMap<Scalar>(oh, ow, std::move(y));
  }

  /// Accumulates parameter gradients and returns dL/dx.
  FeatureMap<Scalar> backward(const Matrix<Scalar>& cols, Index in_h, Index in_w, const FeatureMap<Scalar>& grad_out,
                              Matrix<Scalar>& grad_weight, Vector<Scalar>& grad_bias, bool need_input_grad = true) const {
    grad_weight.noalias() += grad_out.values() * cols.transpose();
    grad_bias += grad_out.values().rowwise().sum();
    if (!need_input_grad) return {};
    const Matrix<Scalar> grad_cols = weight.transpose() * grad_out.values();
    return col2im(grad_cols, in_h, in_w);
  }
};

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& x) {
  x.values() = x.values().cwiseMax(Scalar(0));
}

/// Zeroes the gradient where the pre-activation was not positive.
template <typename Scalar>
void relu_backward_inplace(const FeatureMap<Scalar>& pre, FeatureMap<Scalar>& grad) {
  grad.values() = (pre.values().array() > Scalar(0)).select(grad.values(), Scalar(0));
}

/// Dense 1-D linear interpolation operator (out x in), half-pixel centers.
template <typename Scalar>
Matrix<Scalar> bilinear_axis(Index in, Index out) {
  Matrix<Scalar> r = Matrix<Scalar>::Zero(out, in);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    const double t = src - static_cast<double>(lo);
    r(i, lo) += static_cast<Scalar>(1.0 - t);
    r(i, hi) += static_cast<Scalar>(t);
  }
  return r;
}

/// Bilinear resize of every channel; a linear map so backward is its
/// transpose.
template <typename Scalar>
class BilinearResize {
 public:
  BilinearResize(Index in_h, Index in_w, Index out_h, Index out_w)
      : rows_(bilinear_axis<Scalar>(in_h, out_h)), cols_(bilinear_axis<Scalar>(in_w, out_w)) {}

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) const {
    FeatureMap<Scalar> y(x.channels(), rows_.rows(), cols_.rows());
    for (Index c = 0; c < x.channels(); ++c) y.plane(c).noalias() = rows_ * x.plane(c) * cols_.transpose();
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& grad) const {
    FeatureMap<Scalar> g(grad.channels(), rows_.cols(), cols_.cols());
    for (Index c = 0; c < grad.channels(); ++c) g.plane(c).noalias() = rows_.transpose() * grad.plane(c) * cols_;
    return g;
  }

 private:
  Matrix<Scalar> rows_;
  Matrix<Scalar> cols_;
};

}  // namespace wildnet
