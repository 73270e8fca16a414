#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wildnet/embed.hpp"
#include "wildnet/featstats.hpp"
#include "wildnet/layers.hpp"
#include "wildnet/losses.hpp"
#include "wildnet/tensor.hpp"

namespace wildnet {

/// Shape of the desk-scale encoder. Stage i is a 3x3 convolution followed by
/// ReLU; its hook point is the convolution output, where a residual backbone
/// would have its first batch normalization.
struct NetworkSpec {
  Index in_channels = 3;
  Index num_classes = 4;
  std::vector<Index> widths{16, 24, 32, 32, 32};
  std::vector<Index> strides{1, 2, 2, 1, 1};
  Index proj_hidden = 32;
  Index proj_channels = 16;
  std::vector<std::string> fs_hooks{"stage1", "stage2"};
  /// Hooks may only sit on the first `fs_max_depth` stages.
  Index fs_max_depth = 3;
  double fs_eps = kDefaultStylizeEps;
  double norm_eps = kDefaultNormEps;

  Index stage_count() const { return static_cast<Index>(widths.size()); }
  static std::string stage_name(Index i) { return "stage" + std::to_string(i + 1); }
  /// Total downsampling factor of the encoder.
  Index output_stride() const {
    Index s = 1;
    for (Index v : strides) s *= v;
    return s;
  }
  void validate() const;
};

/// Target statistics for one hook. `relative` targets are multiplied
/// element-wise into the feature's own statistics (random-style ablation).
template <typename Scalar>
struct HookTarget {
  ChannelStats<Scalar> stats;
  bool relative = false;
};

template <typename Scalar>
using StylePlan = std::vector<std::optional<HookTarget<Scalar>>>;

template <typename Scalar>
using HookStats = std::vector<std::optional<ChannelStats<Scalar>>>;

template <typename Scalar>
struct StageTrace {
  Index in_h = 0;
  Index in_w = 0;
  Matrix<Scalar> cols;
  FeatureMap<Scalar> conv_out;
  std::optional<ChannelStats<Scalar>> fs_target;
  FeatureMap<Scalar> pre_relu;
};

/// Everything the backward pass needs from one forward pass.
template <typename Scalar>
struct ForwardTrace {
  std::vector<StageTrace<Scalar>> stages;
  FeatureMap<Scalar> features;
  FeatureMap<Scalar> logits_low;
  FeatureMap<Scalar> proj_hidden_pre;
  FeatureMap<Scalar> proj_hidden;
  ProjectedGrid<Scalar> proj_raw;
  Index image_h = 0;
  Index image_w = 0;
};

template <typename Scalar>
struct BranchOutput {
  FeatureMap<Scalar> logits;
  ProjectedGrid<Scalar> proj;
  ForwardTrace<Scalar> trace;
};

template <typename Scalar>
struct ConvGrad {
  Matrix<Scalar> weight;
  Vector<Scalar> bias;

  explicit ConvGrad(const Conv2d<Scalar>& conv)
      : weight(Matrix<Scalar>::Zero(conv.weight.rows(), conv.weight.cols())),
        bias(Vector<Scalar>::Zero(conv.bias.size())) {}
};

/// Named view of a parameter (or gradient) buffer as a flat vector.
template <typename Scalar>
struct ParamView {
  std::string name;
  Eigen::Map<Vector<Scalar>> values;
  Index rows = 0;
  Index cols = 0;
};

template <typename Scalar>
ParamView<Scalar> view_of(std::string name, Matrix<Scalar>& m) {
  return {std::move(name), Eigen::Map<Vector<Scalar>>(m.data(), m.size()), m.rows(), m.cols()};
}

template <typename Scalar>
ParamView<Scalar> view_of(std::string name, Vector<Scalar>& v) {
  return {std::move(name), Eigen::Map<Vector<Scalar>>(v.data(), v.size()), v.size(), 1};
}

/// Backbone plus classifier: the part that survives stripping.
template <typename Scalar>
struct SegmentationNet {
  std::vector<Conv2d<Scalar>> stages;
  Conv2d<Scalar> classifier;

  Index stage_count() const { return static_cast<Index>(stages.size()); }

  Index parameter_count() const {
    Index n = classifier.parameter_count();
    for (const auto& s : stages) n += s.parameter_count();
    return n;
  }

  /// Runs the encoder. Hooks with a target in `plan` are stylized; stages
  /// listed in `record_at` have their conv-output statistics recorded.
  FeatureMap<Scalar> encode(const FeatureMap<Scalar>& image, const StylePlan<Scalar>* plan,
                            const std::vector<bool>* record_at, HookStats<Scalar>* recorded, Scalar fs_eps,
                            ForwardTrace<Scalar>* trace) const {
    FeatureMap<Scalar> x = image;
    if (recorded) recorded->assign(stages.size(), std::nullopt);
    if (trace) trace->stages.assign(stages.size(), StageTrace<Scalar>{});
    for (Index i = 0; i < stage_count(); ++i) {
      const auto si = static_cast<std::size_t>(i);
      StageTrace<Scalar>* st = trace ? &trace->stages[si] : nullptr;
      if (st) {
        st->in_h = x.height();
        st->in_w = x.width();
      }
      FeatureMap<Scalar> y = stages[si].forward(x, st ? &st->cols : nullptr);
      if (record_at && (*record_at)[si] && recorded) (*recorded)[si] = channel_stats(y);
      if (plan && (*plan)[si]) {
        const HookTarget<Scalar>& hook = *(*plan)[si];
        ChannelStats<Scalar> target = hook.stats;
        if (hook.relative) {
          const ChannelStats<Scalar> own = channel_stats(y);
          target.mean = own.mean.cwiseProduct(hook.stats.mean);
          target.std = own.std.cwiseProduct(hook.stats.std);
        }
        FeatureMap<Scalar> styled = stylize(y, target, fs_eps);
        if (st) {
          st->conv_out = std::move(y);
          st->fs_target = target;
        }
        y = std::move(styled);
      }
      if (st) st->pre_relu = y;
      relu_inplace(y);
      x = std::move(y);
    }
    return x;
  }

  /// Full-resolution class logits from encoder features.
  FeatureMap<Scalar> classify(const FeatureMap<Scalar>& features, Index out_h, Index out_w,
                              ForwardTrace<Scalar>* trace) const {
    FeatureMap<Scalar> low = classifier.forward(features);
    BilinearResize<Scalar> up(low.height(), low.width(), out_h, out_w);
    FeatureMap<Scalar> logits = up.forward(low);
    if (trace) trace->logits_low = std::move(low);
    return logits;
  }

  FeatureMap<Scalar> logits(const FeatureMap<Scalar>& image, const StylePlan<Scalar>* plan = nullptr,
                            Scalar fs_eps = static_cast<Scalar>(kDefaultStylizeEps)) const {
    const FeatureMap<Scalar> f = encode(image, plan, nullptr, nullptr, fs_eps, nullptr);
    return classify(f, image.height(), image.width(), nullptr);
  }

  SegPrediction<Scalar> predict(const FeatureMap<Scalar>& image) const { return softmax(logits(image)); }

  LabelGrid predict_labels(const FeatureMap<Scalar>& image) const { return argmax_labels(logits(image)); }

  std::vector<ParamView<Scalar>> parameters() {
    std::vector<ParamView<Scalar>> out;
    for (Index i = 0; i < stage_count(); ++i) {
      auto& s = stages[static_cast<std::size_t>(i)];
      const std::string name = NetworkSpec::stage_name(i);
      out.push_back(view_of(name + ".weight", s.weight));
      out.push_back(view_of(name + ".bias", s.bias));
    }
    out.push_back(view_of(std::string("classifier.weight"), classifier.weight));
    out.push_back(view_of(std::string("classifier.bias"), classifier.bias));
    return out;
  }
};

template <typename Scalar>
struct ProjectionHead {
  Conv2d<Scalar> hidden;
  Conv2d<Scalar> out;

  Index parameter_count() const { return hidden.parameter_count() + out.parameter_count(); }
};

/// Gradients for every trainable parameter of an assembly.
template <typename Scalar>
struct Gradients {
  std::vector<ConvGrad<Scalar>> stages;
  ConvGrad<Scalar> classifier;
  ConvGrad<Scalar> proj_hidden;
  ConvGrad<Scalar> proj_out;

  template <typename Net, typename Head>
  Gradients(const Net& net, const Head& head)
      : classifier(net.classifier), proj_hidden(head.hidden), proj_out(head.out) {
    for (const auto& s : net.stages) stages.emplace_back(s);
  }

  void scale(Scalar k) {
    for (auto& g : stages) {
      g.weight *= k;
      g.bias *= k;
    }
    for (ConvGrad<Scalar>* g : {&classifier, &proj_hidden, &proj_out}) {
      g->weight *= k;
      g->bias *= k;
    }
  }

  /// Same order as NetworkAssembly::parameters().
  std::vector<ParamView<Scalar>> views() {
    std::vector<ParamView<Scalar>> out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string name = NetworkSpec::stage_name(static_cast<Index>(i));
      out.push_back(view_of(name + ".weight", stages[i].weight));
      out.push_back(view_of(name + ".bias", stages[i].bias));
    }
    out.push_back(view_of(std::string("classifier.weight"), classifier.weight));
    out.push_back(view_of(std::string("classifier.bias"), classifier.bias));
    out.push_back(view_of(std::string("projector.hidden.weight"), proj_hidden.weight));
    out.push_back(view_of(std::string("projector.hidden.bias"), proj_hidden.bias));
    out.push_back(view_of(std::string("projector.out.weight"), proj_out.weight));
    out.push_back(view_of(std::string("projector.out.bias"), proj_out.bias));
    return out;
  }
};

/// Inference-only model: backbone + classifier, plus the hook names it was
/// trained with (feature stylization has no parameters, so the preview tool
/// can still apply it).
template <typename Scalar>
struct InferenceModel {
  SegmentationNet<Scalar> net;
  std::vector<std::string> fs_hooks;
  Index num_classes = 0;
  double fs_eps = kDefaultStylizeEps;

  Index parameter_count() const { return net.parameter_count(); }
  FeatureMap<Scalar> logits(const FeatureMap<Scalar>& image) const { return net.logits(image); }
  SegPrediction<Scalar> predict(const FeatureMap<Scalar>& image) const { return net.predict(image); }
  LabelGrid predict_labels(const FeatureMap<Scalar>& image) const { return net.predict_labels(image); }
};

/// Outputs of the three-branch training forward pass.
template <typename Scalar>
struct TrainingForward {
  BranchOutput<Scalar> plain;
  BranchOutput<Scalar> stylized;
  ProjectedGrid<Scalar> proj_wild;
  HookStats<Scalar> wild_stats;
};

/// Feature extractor with stylization hooks, classifier and projection head.
template <typename Scalar>
class NetworkAssembly {
 public:
  NetworkAssembly() = default;

  NetworkAssembly(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    Index in = spec_.in_channels;
    for (Index i = 0; i < spec_.stage_count(); ++i) {
      const Index out = spec_.widths[static_cast<std::size_t>(i)];
      Conv2d<Scalar> conv(in, out, 3, spec_.strides[static_cast<std::size_t>(i)], 1);
      conv.init(rng);
      net_.stages.push_back(std::move(conv));
      in = out;
    }
    net_.classifier = Conv2d<Scalar>(in, spec_.num_classes, 1, 1, 0);
    net_.classifier.init(rng);
    projector_.hidden = Conv2d<Scalar>(in, spec_.proj_hidden, 1, 1, 0);
    projector_.hidden.init(rng);
    projector_.out = Conv2d<Scalar>(spec_.proj_hidden, spec_.proj_channels, 1, 1, 0);
    projector_.out.init(rng);
    rebuild_hooks();
  }

  const NetworkSpec& spec() const { return spec_; }
  SegmentationNet<Scalar>& net() { return net_; }
  const SegmentationNet<Scalar>& net() const { return net_; }
  ProjectionHead<Scalar>& projector() { return projector_; }
  const ProjectionHead<Scalar>& projector() const { return projector_; }

  /// In evaluation mode stylization hooks are bypassed.
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  void set_fs_hooks(std::vector<std::string> hooks) {
    spec_.fs_hooks = std::move(hooks);
    spec_.validate();
    rebuild_hooks();
  }
  const std::vector<bool>& hook_mask() const { return hook_mask_; }

  Index parameter_count() const { return net_.parameter_count() + projector_.parameter_count(); }

  std::vector<ParamView<Scalar>> parameters() {
    auto out = net_.parameters();
    out.push_back(view_of(std::string("projector.hidden.weight"), projector_.hidden.weight));
    out.push_back(view_of(std::string("projector.hidden.bias"), projector_.hidden.bias));
    out.push_back(view_of(std::string("projector.out.weight"), projector_.out.weight));
    out.push_back(view_of(std::string("projector.out.bias"), projector_.out.bias));
    return out;
  }

  Gradients<Scalar> zero_gradients() const { return Gradients<Scalar>(net_, projector_); }

  /// One branch: encoder (optionally stylized), classifier logits at image
  /// resolution and the normalized projection grid.
  BranchOutput<Scalar> forward_branch(const FeatureMap<Scalar>& image, const StylePlan<Scalar>* plan,
                                      HookStats<Scalar>* record, bool with_projection = true) const {
    BranchOutput<Scalar> out;
    out.trace.image_h = image.height();
    out.trace.image_w = image.width();
    const StylePlan<Scalar>* active = training_ ? plan : nullptr;
    out.trace.features = net_.encode(image, active, record ? &hook_mask_ : nullptr, record,
                                     static_cast<Scalar>(spec_.fs_eps), &out.trace);
    out.logits = net_.classify(out.trace.features, image.height(), image.width(), &out.trace);
    if (with_projection) out.proj = project(out.trace.features, &out.trace);
    return out;
  }

  /// Wild pass first (records hook statistics, no gradient), then the plain
  /// source pass, then the source pass stylized with the wild statistics.
  TrainingForward<Scalar> forward_training(const FeatureMap<Scalar>& source, const FeatureMap<Scalar>& wild) const {
    if (source.height() != wild.height() || source.width() != wild.width()) {
      throw ShapeError("netgraph", "source and wild images differ in spatial size");
    }
    TrainingForward<Scalar> out;
    out.proj_wild = wild_projection(wild, &out.wild_stats);
    out.plain = forward_branch(source, nullptr, nullptr);
    const StylePlan<Scalar> plan = plan_from(out.wild_stats);
    out.stylized = forward_branch(source, &plan, nullptr);
    return out;
  }

  /// Forward-only wild pass: hook statistics and the normalized projection.
  ProjectedGrid<Scalar> wild_projection(const FeatureMap<Scalar>& wild, HookStats<Scalar>* stats) const {
    HookStats<Scalar> local;
    HookStats<Scalar>* rec = stats ? stats : &local;
    const FeatureMap<Scalar> f =
        net_.encode(wild, nullptr, &hook_mask_, rec, static_cast<Scalar>(spec_.fs_eps), nullptr);
    return project(f, nullptr);
  }

  /// Absolute targets at every hook that has recorded statistics.
  StylePlan<Scalar> plan_from(const HookStats<Scalar>& stats) const {
    StylePlan<Scalar> plan(net_.stages.size());
    for (std::size_t i = 0; i < plan.size() && i < stats.size(); ++i) {
      if (hook_mask_[i] && stats[i]) plan[i] = HookTarget<Scalar>{*stats[i], false};
    }
    return plan;
  }

  /// Relative targets: own statistics scaled by factors in [lo, hi].
  StylePlan<Scalar> random_plan(std::mt19937_64& rng, double lo = 0.5, double hi = 1.5) const {
    std::uniform_real_distribution<double> dist(lo, hi);
    StylePlan<Scalar> plan(net_.stages.size());
    for (std::size_t i = 0; i < plan.size(); ++i) {
      if (!hook_mask_[i]) continue;
      const Index c = net_.stages[i].out_channels;
      HookTarget<Scalar> t;
      t.relative = true;
      t.stats.mean.resize(c);
      t.stats.std.resize(c);
      for (Index k = 0; k < c; ++k) t.stats.mean[k] = static_cast<Scalar>(dist(rng));
      for (Index k = 0; k < c; ++k) t.stats.std[k] = static_cast<Scalar>(dist(rng));
      plan[i] = t;
    }
    return plan;
  }

  /// Backpropagates dL/dlogits (image resolution) and dL/dproj (normalized
  /// grid) through one branch, accumulating into `grads`. Either gradient may
  /// be empty.
  void backward(const ForwardTrace<Scalar>& trace, const FeatureMap<Scalar>& grad_logits,
                const FeatureMap<Scalar>& grad_proj, Gradients<Scalar>& grads) const {
    const FeatureMap<Scalar>& f = trace.features;
    FeatureMap<Scalar> grad_f(f.channels(), f.height(), f.width());
    if (!grad_logits.empty()) {
      BilinearResize<Scalar> up(trace.logits_low.height(), trace.logits_low.width(), trace.image_h, trace.image_w);
      const FeatureMap<Scalar> g_low = up.backward(grad_logits);
      grad_f.values() += net_.classifier
                             .backward(f.values(), f.height(), f.width(), g_low, grads.classifier.weight,
                                       grads.classifier.bias)
                             .values();
    }
    if (!grad_proj.empty()) {
      const FeatureMap<Scalar> g_raw = normalize_backward(trace.proj_raw, grad_proj);
      FeatureMap<Scalar> g_hidden = projector_.out.backward(
          trace.proj_hidden.values(), f.height(), f.width(), g_raw, grads.proj_out.weight, grads.proj_out.bias);
      relu_backward_inplace(trace.proj_hidden_pre, g_hidden);
      grad_f.values() += projector_.hidden
                             .backward(f.values(), f.height(), f.width(), g_hidden, grads.proj_hidden.weight,
                                       grads.proj_hidden.bias)
                             .values();
    }
    FeatureMap<Scalar> g = std::move(grad_f);
    for (Index i = net_.stage_count() - 1; i >= 0; --i) {
      const auto si = static_cast<std::size_t>(i);
      const StageTrace<Scalar>& st = trace.stages[si];
      relu_backward_inplace(st.pre_relu, g);
      if (st.fs_target) {
        g = stylize_backward(st.conv_out, *st.fs_target, g, static_cast<Scalar>(spec_.fs_eps));
      }
      g = net_.stages[si].backward(st.cols, st.in_h, st.in_w, g, grads.stages[si].weight, grads.stages[si].bias,
                                   i > 0);
    }
  }

  InferenceModel<Scalar> strip_for_inference() const {
    return InferenceModel<Scalar>{net_, spec_.fs_hooks, spec_.num_classes, spec_.fs_eps};
  }

 private:
  ProjectedGrid<Scalar> project(const FeatureMap<Scalar>& features, ForwardTrace<Scalar>* trace) const {
    FeatureMap<Scalar> pre = projector_.hidden.forward(features);
    FeatureMap<Scalar> hidden = pre;
    relu_inplace(hidden);
    ProjectedGrid<Scalar> raw;
    raw.values = projector_.out.forward(hidden);
    raw.norm_eps = static_cast<Scalar>(spec_.norm_eps);
    ProjectedGrid<Scalar> normalized = normalize_grid(raw);
    if (trace) {
      trace->proj_hidden_pre = std::move(pre);
      trace->proj_hidden = std::move(hidden);
      trace->proj_raw = std::move(raw);
    }
    return normalized;
  }

  void rebuild_hooks() {
    hook_mask_.assign(static_cast<std::size_t>(spec_.stage_count()), false);
    for (const auto& name : spec_.fs_hooks) {
      for (Index i = 0; i < spec_.stage_count(); ++i) {
        if (NetworkSpec::stage_name(i) == name) hook_mask_[static_cast<std::size_t>(i)] = true;
      }
    }
  }

  NetworkSpec spec_;
  SegmentationNet<Scalar> net_;
  ProjectionHead<Scalar> projector_;
  std::vector<bool> hook_mask_;
  bool training_ = true;
};

inline void NetworkSpec::validate() const {
  if (in_channels < 1 || num_classes < 1) throw ConfigError("netgraph", "channel and class counts must be positive");
  if (widths.empty() || widths.size() != strides.size()) {
    throw ConfigError("netgraph", "stage widths and strides must be non-empty and equally long");
  }
  for (Index w : widths) {
    if (w < 1) throw ConfigError("netgraph", "stage widths must be positive");
  }
  for (Index s : strides) {
    if (s < 1 || s > 2) throw ConfigError("netgraph", "stage strides must be 1 or 2");
  }
  if (proj_hidden < 1 || proj_channels < 1) throw ConfigError("netgraph", "projection sizes must be positive");
  if (fs_max_depth < 0) throw ConfigError("netgraph", "fs_max_depth must be non-negative");
  for (const auto& hook : fs_hooks) {
    Index found = -1;
    for (Index i = 0; i < stage_count(); ++i) {
      if (stage_name(i) == hook) found = i;
    }
    if (found < 0) throw ConfigError("netgraph", "unknown hook '" + hook + "'");
    if (found >= fs_max_depth) {
      throw ConfigError("netgraph", "hook '" + hook + "' is deeper than fs_max_depth " + std::to_string(fs_max_depth));
    }
  }
}

}  // namespace wildnet
