#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wildnet/tensor.hpp"

namespace wildnet {

/// RGB image, [3, H, W], values in [0, 1].
using Image = FeatureMap<float>;

struct LabeledSample {
  std::string name;
  Image image;
  LabelGrid label;
};

struct WildSample {
  std::string name;
  Image image;
};

enum class DatasetRole { Source, Wild, Eval };

/// Immutable, ordered collection of samples. Labeled roles carry one label
/// grid per image; the wild role carries none.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::string name, DatasetRole role) : name_(std::move(name)), role_(role) {}

  const std::string& name() const { return name_; }
  DatasetRole role() const { return role_; }
  bool labeled() const { return role_ != DatasetRole::Wild; }
  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }

  const Image& image(std::size_t i) const { return images_[i]; }
  const LabelGrid& label(std::size_t i) const { return labels_[i]; }
  const std::string& stem(std::size_t i) const { return stems_[i]; }

  LabeledSample labeled_sample(std::size_t i) const { return {stems_[i], images_[i], labels_[i]}; }
  WildSample wild_sample(std::size_t i) const { return {stems_[i], images_[i]}; }

  void add(std::string stem, Image image, LabelGrid label);
  void add(std::string stem, Image image);

  /// First `n` samples (the wild-image-count ablation).
  Dataset head(std::size_t n) const;

 private:
  std::string name_;
  DatasetRole role_ = DatasetRole::Source;
  std::vector<std::string> stems_;
  std::vector<Image> images_;
  std::vector<LabelGrid> labels_;
};

/// raw id -> train id. Ids absent from the table map to the ignore id.
struct LabelMapping {
  std::map<std::int32_t, std::int32_t> table;

  /// Two-column CSV (raw_id,train_id); a header line and '#' comments are
  /// skipped.
  static LabelMapping from_csv(const std::filesystem::path& path);
};

LabelGrid remap_labels(const LabelGrid& raw, const LabelMapping& mapping, std::int32_t ignore_id = kIgnoreId);

/// Reads root/images/*.{png,jpg,jpeg} (and root/labels/<stem>.png for
/// labeled roles) in lexicographic stem order. When `mapping` is given,
/// labels are remapped through it.
Dataset load_dataset(const std::filesystem::path& root, const std::optional<LabelMapping>& mapping, DatasetRole role,
                     std::int32_t num_classes = 0, std::int32_t ignore_id = kIgnoreId);

/// Writes images/<stem>.png and, for labeled sets, labels/<stem>.png.
void write_dataset(const Dataset& ds, const std::filesystem::path& root);

Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);
LabelGrid read_label(const std::filesystem::path& path);
void write_label(const std::filesystem::path& path, const LabelGrid& label);

Image resize_bilinear(const Image& image, Index out_h, Index out_w);
LabelGrid resize_nearest(const LabelGrid& label, Index out_h, Index out_w);

struct AugmentConfig {
  Index crop_h = 768;
  Index crop_w = 768;
  double scale_min = 0.5;
  double scale_max = 2.0;
};

/// Random scale (bilinear image, nearest label) then a synchronized random
/// crop; regions outside the scaled image are zero / ignore.
LabeledSample augment(const LabeledSample& sample, std::mt19937_64& rng, const AugmentConfig& cfg,
                      std::int32_t ignore_id = kIgnoreId);

/// Resize so the short side covers the crop, then random crop.
WildSample prepare_wild(const WildSample& sample, std::mt19937_64& rng, Index crop_h, Index crop_w);

/// Deterministic stream of reshuffled epochs: draw k is a pure function of
/// (seed, k), so a resumed run sees the same sequence.
class EpochSampler {
 public:
  EpochSampler(std::size_t size, std::uint64_t seed);
  std::size_t draw(std::uint64_t k) const;
  std::size_t size() const { return size_; }

 private:
  std::size_t size_;
  std::uint64_t seed_;
  mutable std::uint64_t cached_epoch_ = ~std::uint64_t{0};
  mutable std::vector<std::size_t> order_;
};

struct PairBatch {
  std::vector<LabeledSample> sources;
  std::vector<WildSample> wilds;

  std::size_t size() const { return sources.size(); }
};

/// Random (source, wild) pairs. The i-th source draw of an iteration pairs
/// with the i-th wild draw; both are augmented to the same crop.
class PairSampler {
 public:
  PairSampler(const Dataset& source, const Dataset& wild, std::size_t batch_size, std::uint64_t seed,
              AugmentConfig augment, std::int32_t ignore_id = kIgnoreId);

  PairBatch batch(std::uint64_t iteration) const;

 private:
  const Dataset* source_;
  const Dataset* wild_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  AugmentConfig augment_;
  std::int32_t ignore_id_;
  EpochSampler source_order_;
  EpochSampler wild_order_;
};

/// Bounded hand-off queue: `push` blocks while `depth` items are waiting.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t depth) : depth_(depth == 0 ? 1 : depth) {}

  void push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < depth_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t depth() const { return depth_; }

 private:
  std::size_t depth_;
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  bool closed_ = false;
};

/// Desk-scale multi-domain generator settings.
struct SynthConfig {
  std::int32_t classes = 4;
  Index size = 96;
  std::size_t source_train = 200;
  std::size_t eval_per_domain = 40;
  std::size_t unseen_domains = 2;
  std::size_t wild = 64;
  std::uint64_t seed = 0;
};

/// Source train/val share one style; unseen domains keep the same content
/// distribution under other styles; the wild set is unlabeled and mixes
/// novel patterns with random styles.
struct SynthData {
  Dataset source;
  Dataset source_val;
  std::vector<Dataset> unseen;
  Dataset wild;
};

SynthData synth_toy(const SynthConfig& cfg);

/// splitmix64 finalizer; combines seeds and counters into RNG seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace wildnet
