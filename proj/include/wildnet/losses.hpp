#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wildnet/embed.hpp"
#include "wildnet/tensor.hpp"
#include "wildnet/wilddict.hpp"

namespace wildnet {

inline constexpr double kProbClamp = 1e-8;
inline constexpr double kDefaultTau = 0.07;

/// Per-pixel softmax distribution, [K, H, W].
template <typename Scalar>
struct SegPrediction {
  FeatureMap<Scalar> probs;

  Index classes() const { return probs.channels(); }
};

template <typename Scalar>
SegPrediction<Scalar> softmax(const FeatureMap<Scalar>& logits) {
  SegPrediction<Scalar> out{FeatureMap<Scalar>(logits.channels(), logits.height(), logits.width())};
  const auto& z = logits.values();
  auto& p = out.probs.values();
  for (Index px = 0; px < logits.pixels(); ++px) {
    const Scalar m = z.col(px).maxCoeff();
    p.col(px) = (z.col(px).array() - m).exp().matrix();
    p.col(px) /= p.col(px).sum();
  }
  return out;
}

/// A reduced loss and the number of elements that contributed to it.
/// `valid == 0` flags a degenerate input (the value is then 0).
template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  Index valid = 0;

  bool no_valid() const { return valid == 0; }
};

namespace detail {

inline void check_label(std::int32_t id, Index classes, std::int32_t ignore_id, const char* module) {
  if (id != ignore_id && (id < 0 || id >= classes)) {
    throw DataError(module, "label id " + std::to_string(id) + " outside [0, " + std::to_string(classes) +
                                ") and not the ignore id");
  }
}

template <typename Scalar>
void check_aligned(const FeatureMap<Scalar>& m, const LabelGrid& label) {
  if (m.height() != label.rows() || m.width() != label.cols()) {
    throw ShapeError("losses", "prediction and label grids are not aligned");
  }
}

}  // namespace detail

/// Mean over non-ignored pixels of -log p[true class], probabilities clamped
/// at 1e-8.
template <typename Scalar>
LossValue<Scalar> seg_ce(const SegPrediction<Scalar>& pred, const LabelGrid& label,
                         std::int32_t ignore_id = kIgnoreId) {
  detail::check_aligned(pred.probs, label);
  const Scalar clamp = static_cast<Scalar>(kProbClamp);
  LossValue<Scalar> out;
  for (Index px = 0; px < pred.probs.pixels(); ++px) {
    const std::int32_t y = label.data()[px];
    detail::check_label(y, pred.classes(), ignore_id, "losses");
    if (y == ignore_id) continue;
    out.value -= std::log(std::max(pred.probs.values()(y, px), clamp));
    ++out.valid;
  }
  if (out.valid > 0) out.value /= static_cast<Scalar>(out.valid);
  return out;
}

/// Same loss evaluated from logits with log-softmax; fills dL/dlogits when
/// `grad` is given.
template <typename Scalar>
LossValue<Scalar> seg_ce_logits(const FeatureMap<Scalar>& logits, const LabelGrid& label, std::int32_t ignore_id,
                                FeatureMap<Scalar>* grad) {
  detail::check_aligned(logits, label);
  const auto& z = logits.values();
  LossValue<Scalar> out;
  if (grad) *grad = FeatureMap<Scalar>(logits.channels(), logits.height(), logits.width());
  for (Index px = 0; px < logits.pixels(); ++px) {
    const std::int32_t y = label.data()[px];
    detail::check_label(y, logits.channels(), ignore_id, "losses");
    if (y == ignore_id) continue;
    const Scalar m = z.col(px).maxCoeff();
    const auto e = (z.col(px).array() - m).exp();
    const Scalar sum = e.sum();
    out.value += std::log(sum) + m - z(y, px);
    ++out.valid;
    if (grad) {
      grad->values().col(px) = (e / sum).matrix();
      grad->values()(y, px) -= Scalar(1);
    }
  }
  if (out.valid > 0) {
    out.value /= static_cast<Scalar>(out.valid);
    if (grad) grad->values() /= static_cast<Scalar>(out.valid);
  }
  return out;
}

/// Mean per-pixel KL(p_src || p_stylized), probabilities clamped at 1e-8.
/// p_src is a constant target.
template <typename Scalar>
Scalar scr_loss(const SegPrediction<Scalar>& p_src, const SegPrediction<Scalar>& p_stylized) {
  if (!p_src.probs.same_shape(p_stylized.probs)) {
    throw ShapeError("losses", "consistency inputs differ in shape");
  }
  const Scalar clamp = static_cast<Scalar>(kProbClamp);
  const auto ps = p_src.probs.values().array();
  const auto pw = p_stylized.probs.values().array();
  const Scalar kl = (ps * (ps.max(clamp).log() - pw.max(clamp).log())).sum();
  return kl / static_cast<Scalar>(p_src.probs.pixels());
}

/// `scr_loss` plus its gradient with respect to the stylized-branch logits.
template <typename Scalar>
Scalar scr_loss_logits(const SegPrediction<Scalar>& p_src, const FeatureMap<Scalar>& stylized_logits,
                       FeatureMap<Scalar>* grad) {
  const SegPrediction<Scalar> pw = softmax(stylized_logits);
  const Scalar value = scr_loss(p_src, pw);
  if (grad) {
    const Scalar clamp = static_cast<Scalar>(kProbClamp);
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(stylized_logits.pixels());
    *grad = FeatureMap<Scalar>(stylized_logits.channels(), stylized_logits.height(), stylized_logits.width());
    const auto& ps = p_src.probs.values();
    const auto& q = pw.probs.values();
    for (Index px = 0; px < stylized_logits.pixels(); ++px) {
      // dL/dq_k, zero where the clamp is active.
      Vector<Scalar> g(q.rows());
      for (Index k = 0; k < q.rows(); ++k) g[k] = q(k, px) > clamp ? -ps(k, px) / q(k, px) : Scalar(0);
      const Scalar gq = g.dot(q.col(px));
      grad->values().col(px) = (q.col(px).array() * (g.array() - gq)).matrix() * inv_n;
    }
  }
  return value;
}

/// Anchors (plain-source embeddings), positives (wild-stylized embeddings at
/// the same sampled positions) and the class label of each sampled pixel.
template <typename Scalar>
struct CELBatch {
  ProjectedGrid<Scalar> anchors;
  ProjectedGrid<Scalar> positives;
  std::vector<std::int32_t> labels;
  Scalar tau = static_cast<Scalar>(kDefaultTau);
  std::int32_t ignore_id = kIgnoreId;

  Index size() const { return anchors.pixels(); }

  void validate() const {
    if (!(tau > Scalar(0))) throw ParameterError("losses", "temperature must be positive");
    if (!anchors.values.same_shape(positives.values)) {
      throw ShapeError("losses", "anchors and positives differ in shape");
    }
    if (anchors.index_map != positives.index_map) {
      throw ShapeError("losses", "anchors and positives were sampled on different index maps");
    }
    if (static_cast<Index>(labels.size()) != anchors.pixels()) {
      throw ShapeError("losses", "one label per sampled pixel is required");
    }
  }

  bool valid(Index i) const { return labels[static_cast<std::size_t>(i)] != ignore_id; }

  bool negative(Index i, Index j) const {
    return valid(i) && valid(j) && labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(j)];
  }
};

/// Gradients of a contrastive loss with respect to the normalized anchor and
/// positive embeddings, each [C, N].
template <typename Scalar>
struct ContrastiveGrad {
  Matrix<Scalar> anchors;
  Matrix<Scalar> positives;
};

namespace detail {

/// -log(exp(pos) / (exp(pos) + sum exp(neg_j))) for logits already divided by
/// tau. Writes the softmax weight of the positive and of every negative.
template <typename Scalar>
Scalar info_nce(Scalar pos, const Eigen::Ref<const Vector<Scalar>>& row, const std::vector<Index>& negs,
                Scalar& w_pos, Vector<Scalar>& w_row) {
  Scalar m = pos;
  for (Index j : negs) m = std::max(m, row[j]);
  Scalar den = std::exp(pos - m);
  for (Index j : negs) den += std::exp(row[j] - m);
  w_pos = std::exp(pos - m) / den;
  w_row.setZero(row.size());
  for (Index j : negs) w_row[j] = std::exp(row[j] - m) / den;
  return std::log(den) - (pos - m);
}

}  // namespace detail

/// Source content extension loss: anchor i is pulled toward its stylized
/// counterpart and pushed from stylized pixels of other classes. Ignored
/// pixels take no part; same-class pixels at other positions are neither
/// positives nor negatives.
template <typename Scalar>
LossValue<Scalar> sce_loss(const CELBatch<Scalar>& batch, ContrastiveGrad<Scalar>* grad = nullptr) {
  batch.validate();
  const auto& a = batch.anchors.values.values();
  const auto& p = batch.positives.values.values();
  const Index n = batch.size();
  const Matrix<Scalar> sim = (a.transpose() * p) / batch.tau;
  Matrix<Scalar> g = Matrix<Scalar>::Zero(n, n);

  LossValue<Scalar> out;
  std::vector<Index> negs;
  Vector<Scalar> w_row;
  for (Index i = 0; i < n; ++i) {
    if (!batch.valid(i)) continue;
    negs.clear();
    for (Index j = 0; j < n; ++j) {
      if (batch.negative(i, j)) negs.push_back(j);
    }
    Scalar w_pos;
    out.value += detail::info_nce<Scalar>(sim(i, i), sim.row(i).transpose(), negs, w_pos, w_row);
    ++out.valid;
    g.row(i) = w_row.transpose();
    g(i, i) += w_pos - Scalar(1);
  }
  if (out.valid == 0) {
    if (grad) *grad = {Matrix<Scalar>::Zero(a.rows(), n), Matrix<Scalar>::Zero(a.rows(), n)};
    return out;
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(out.valid);
  out.value *= inv;
  if (grad) {
    g *= inv / batch.tau;
    grad->anchors = p * g.transpose();
    grad->positives = a * g;
  }
  return out;
}

/// Wild content extension loss. For each valid anchor the positive is the
/// store entry nearest to the stylized embedding at the same position; the
/// negatives are those of `sce_loss`. Retrieved entries are constants.
template <typename Scalar>
LossValue<Scalar> wce_loss(const CELBatch<Scalar>& batch, const ContentStore<Scalar>& store,
                           ContrastiveGrad<Scalar>* grad = nullptr, std::vector<Index>* retrieved = nullptr) {
  batch.validate();
  if (store.empty()) {
    throw EmptyStoreError("losses", "wild content loss queried an empty store");
  }
  const auto& a = batch.anchors.values.values();
  const auto& p = batch.positives.values.values();
  const Index n = batch.size();
  const Matrix<Scalar> sim = (a.transpose() * p) / batch.tau;
  const auto nn = store.nearest_batch(p);
  if (retrieved) *retrieved = nn;

  Matrix<Scalar> g = Matrix<Scalar>::Zero(n, n);
  Matrix<Scalar> g_anchor_direct = Matrix<Scalar>::Zero(a.rows(), n);
  LossValue<Scalar> out;
  std::vector<Index> negs;
  Vector<Scalar> w_row;
  for (Index i = 0; i < n; ++i) {
    if (!batch.valid(i)) continue;
    negs.clear();
    for (Index j = 0; j < n; ++j) {
      if (batch.negative(i, j)) negs.push_back(j);
    }
    const auto q = store.entry(nn[static_cast<std::size_t>(i)]);
    const Scalar pos = a.col(i).dot(q) / batch.tau;
    Scalar w_pos;
    out.value += detail::info_nce<Scalar>(pos, sim.row(i).transpose(), negs, w_pos, w_row);
    ++out.valid;
    g.row(i) = w_row.transpose();
    g_anchor_direct.col(i) = (w_pos - Scalar(1)) * q;
  }
  if (out.valid == 0) {
    if (grad) *grad = {Matrix<Scalar>::Zero(a.rows(), n), Matrix<Scalar>::Zero(a.rows(), n)};
    return out;
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(out.valid);
  out.value *= inv;
  if (grad) {
    const Scalar scale = inv / batch.tau;
    grad->anchors = (p * g.transpose() + g_anchor_direct) * scale;
    grad->positives = (a * g) * scale;
  }
  return out;
}

/// Content extension loss: unit-weight sum of the source and wild terms.
template <typename Scalar>
Scalar cel_loss(const CELBatch<Scalar>& batch, const ContentStore<Scalar>& store) {
  return sce_loss(batch).value + wce_loss(batch, store).value;
}

/// Non-negative multipliers applied to each objective.
struct LossWeights {
  double orig = 1.0;
  double cel = 1.0;
  double sel = 1.0;
  double scr = 1.0;

  void validate() const {
    if (orig < 0 || cel < 0 || sel < 0 || scr < 0) {
      throw ParameterError("losses", "loss weights must be non-negative");
    }
  }

  /// Whether the stylized branch contributes to the objective at all.
  bool uses_stylized_branch() const { return cel > 0 || sel > 0 || scr > 0; }
};

struct LossTerms {
  double l_orig = 0;
  double l_sce = 0;
  double l_wce = 0;
  double l_sel = 0;
  double l_scr = 0;
  LossWeights weights;
  double total = 0;
};

inline double total_loss(const LossTerms& t) {
  t.weights.validate();
  return t.weights.orig * t.l_orig + t.weights.cel * (t.l_sce + t.l_wce) + t.weights.sel * t.l_sel +
         t.weights.scr * t.l_scr;
}

}  // namespace wildnet
