#include "wildnet/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "wildnet/layers.hpp"

namespace wildnet {

namespace fs = std::filesystem;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void Dataset::add(std::string stem, Image image, LabelGrid label) {
  if (!labeled()) throw DataError("datapipe", "wild dataset cannot hold labels");
  if (label.rows() != image.height() || label.cols() != image.width()) {
    throw ShapeError("datapipe", "label for '" + stem + "' is not aligned with its image");
  }
  stems_.push_back(std::move(stem));
  images_.push_back(std::move(image));
  labels_.push_back(std::move(label));
}

void Dataset::add(std::string stem, Image image) {
  if (labeled()) throw DataError("datapipe", "labeled dataset sample '" + stem + "' needs a label");
  stems_.push_back(std::move(stem));
  images_.push_back(std::move(image));
}

Dataset Dataset::head(std::size_t n) const {
  Dataset out(name_, role_);
  const std::size_t m = std::min(n, size());
  out.stems_.assign(stems_.begin(), stems_.begin() + static_cast<std::ptrdiff_t>(m));
  out.images_.assign(images_.begin(), images_.begin() + static_cast<std::ptrdiff_t>(m));
  if (labeled()) out.labels_.assign(labels_.begin(), labels_.begin() + static_cast<std::ptrdiff_t>(m));
  return out;
}

LabelMapping LabelMapping::from_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("datapipe", "cannot open mapping file " + path.string());
  LabelMapping m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }),
               line.end());
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("datapipe", "mapping line " + std::to_string(line_no) + " lacks a comma");
    const std::string a = line.substr(0, comma);
    const std::string b = line.substr(comma + 1);
    if (!std::isdigit(static_cast<unsigned char>(a[0])) && a[0] != '-') continue;  // header
    try {
      m.table[std::stoi(a)] = std::stoi(b);
    } catch (const std::exception&) {
      throw DataError("datapipe", "mapping line " + std::to_string(line_no) + " is not two integers");
    }
  }
  return m;
}

LabelGrid remap_labels(const LabelGrid& raw, const LabelMapping& mapping, std::int32_t ignore_id) {
  LabelGrid out(raw.rows(), raw.cols());
  for (Index i = 0; i < raw.size(); ++i) {
    const auto it = mapping.table.find(raw.data()[i]);
    out.data()[i] = it == mapping.table.end() ? ignore_id : it->second;
  }
  return out;
}

Image read_image(const fs::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("datapipe", "cannot decode image " + path.string());
  Image img(3, bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      for (int k = 0; k < 3; ++k) img(k, r, c) = static_cast<float>(row[c][2 - k]) / 255.0f;
    }
  }
  return img;
}

void write_image(const fs::path& path, const Image& image) {
  if (image.channels() != 3) throw ShapeError("datapipe", "only 3-channel images can be written");
  cv::Mat bgr(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3);
  for (int r = 0; r < bgr.rows; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      for (int k = 0; k < 3; ++k) {
        const float v = std::clamp(image(k, r, c), 0.0f, 1.0f);
        row[c][2 - k] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path.string(), bgr)) throw DataError("datapipe", "cannot write image " + path.string());
}

LabelGrid read_label(const fs::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("datapipe", "cannot decode label " + path.string());
  if (m.channels() != 1) throw DataError("datapipe", "label " + path.string() + " is not single-channel");
  cv::Mat ids;
  m.convertTo(ids, CV_32S);
  LabelGrid out(ids.rows, ids.cols);
  for (int r = 0; r < ids.rows; ++r) {
    const auto* row = ids.ptr<std::int32_t>(r);
    for (int c = 0; c < ids.cols; ++c) out(r, c) = row[c];
  }
  return out;
}

void write_label(const fs::path& path, const LabelGrid& label) {
  cv::Mat m(static_cast<int>(label.rows()), static_cast<int>(label.cols()), CV_8UC1);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      const std::int32_t v = label(r, c);
      if (v < 0 || v > 255) throw DataError("datapipe", "label id does not fit an 8-bit PNG");
      m.at<unsigned char>(r, c) = static_cast<unsigned char>(v);
    }
  }
  if (!cv::imwrite(path.string(), m)) throw DataError("datapipe", "cannot write label " + path.string());
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

const char* role_name(DatasetRole role) {
  switch (role) {
    case DatasetRole::Source: return "source";
    case DatasetRole::Wild: return "wild";
    case DatasetRole::Eval: return "eval";
  }
  return "?";
}

}  // namespace

Dataset load_dataset(const fs::path& root, const std::optional<LabelMapping>& mapping, DatasetRole role,
                     std::int32_t num_classes, std::int32_t ignore_id) {
  const fs::path image_dir = root / "images";
  if (!fs::is_directory(image_dir)) {
    throw DataError("datapipe", std::string(role_name(role)) + " root " + root.string() + " has no images/ directory");
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
  if (files.empty()) throw DataError("datapipe", std::string(role_name(role)) + " root " + root.string() + " is empty");

  Dataset ds(root.filename().string(), role);
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    Image img = read_image(f);
    if (role == DatasetRole::Wild) {
      ds.add(stem, std::move(img));
      continue;
    }
    const fs::path label_path = root / "labels" / (stem + ".png");
    if (!fs::exists(label_path)) throw DataError("datapipe", "missing label for '" + stem + "'");
    LabelGrid label = read_label(label_path);
    if (mapping) label = remap_labels(label, *mapping, ignore_id);
    if (num_classes > 0) {
      for (Index i = 0; i < label.size(); ++i) {
        const std::int32_t v = label.data()[i];
        if (v != ignore_id && (v < 0 || v >= num_classes)) {
          throw DataError("datapipe", "label '" + stem + "' has id " + std::to_string(v) + " outside the class range");
        }
      }
    }
    ds.add(stem, std::move(img), std::move(label));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root / "images");
  if (ds.labeled()) fs::create_directories(root / "labels");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    write_image(root / "images" / (ds.stem(i) + ".png"), ds.image(i));
    if (ds.labeled()) write_label(root / "labels" / (ds.stem(i) + ".png"), ds.label(i));
  }
}

Image resize_bilinear(const Image& image, Index out_h, Index out_w) {
  if (out_h == image.height() && out_w == image.width()) return image;
  return BilinearResize<float>(image.height(), image.width(), out_h, out_w).forward(image);
}

LabelGrid resize_nearest(const LabelGrid& label, Index out_h, Index out_w) {
  LabelGrid out(out_h, out_w);
  for (Index r = 0; r < out_h; ++r) {
    const Index sr = std::min(label.rows() - 1, ((2 * r + 1) * label.rows()) / (2 * out_h));
    for (Index c = 0; c < out_w; ++c) {
      const Index sc = std::min(label.cols() - 1, ((2 * c + 1) * label.cols()) / (2 * out_w));
      out(r, c) = label(sr, sc);
    }
  }
  return out;
}

LabeledSample augment(const LabeledSample& sample, std::mt19937_64& rng, const AugmentConfig& cfg,
                      std::int32_t ignore_id) {
  if (cfg.scale_min <= 0 || cfg.scale_max < cfg.scale_min) {
    throw ParameterError("datapipe", "scale range must satisfy 0 < min <= max");
  }
  std::uniform_real_distribution<double> scale_dist(cfg.scale_min, cfg.scale_max);
  const double s = cfg.scale_min == cfg.scale_max ? cfg.scale_min : scale_dist(rng);
  const Index h = std::max<Index>(1, std::lround(static_cast<double>(sample.image.height()) * s));
  const Index w = std::max<Index>(1, std::lround(static_cast<double>(sample.image.width()) * s));
  const Image scaled = resize_bilinear(sample.image, h, w);
  const LabelGrid scaled_label = resize_nearest(sample.label, h, w);

  const Index canvas_h = std::max(h, cfg.crop_h);
  const Index canvas_w = std::max(w, cfg.crop_w);
  std::uniform_int_distribution<Index> oy_dist(0, canvas_h - cfg.crop_h);
  std::uniform_int_distribution<Index> ox_dist(0, canvas_w - cfg.crop_w);
  const Index oy = oy_dist(rng);
  const Index ox = ox_dist(rng);

  LabeledSample out{sample.name, Image(3, cfg.crop_h, cfg.crop_w), LabelGrid::Constant(cfg.crop_h, cfg.crop_w, ignore_id)};
  const Index rows = std::min(cfg.crop_h, h - oy);
  const Index cols = std::min(cfg.crop_w, w - ox);
  if (rows > 0 && cols > 0) {
    for (Index c = 0; c < 3; ++c) out.image.plane(c).topLeftCorner(rows, cols) = scaled.plane(c).block(oy, ox, rows, cols);
    out.label.topLeftCorner(rows, cols) = scaled_label.block(oy, ox, rows, cols);
  }
  return out;
}

WildSample prepare_wild(const WildSample& sample, std::mt19937_64& rng, Index crop_h, Index crop_w) {
  const double s = std::max(static_cast<double>(crop_h) / static_cast<double>(sample.image.height()),
                            static_cast<double>(crop_w) / static_cast<double>(sample.image.width()));
  const Index h = std::max(crop_h, static_cast<Index>(std::ceil(static_cast<double>(sample.image.height()) * s - 1e-9)));
  const Index w = std::max(crop_w, static_cast<Index>(std::ceil(static_cast<double>(sample.image.width()) * s - 1e-9)));
  const Image scaled = resize_bilinear(sample.image, h, w);
  std::uniform_int_distribution<Index> oy_dist(0, h - crop_h);
  std::uniform_int_distribution<Index> ox_dist(0, w - crop_w);
  const Index oy = oy_dist(rng);
  const Index ox = ox_dist(rng);
  WildSample out{sample.name, Image(3, crop_h, crop_w)};
  for (Index c = 0; c < 3; ++c) out.image.plane(c) = scaled.plane(c).block(oy, ox, crop_h, crop_w);
  return out;
}

EpochSampler::EpochSampler(std::size_t size, std::uint64_t seed) : size_(size), seed_(seed) {
  if (size == 0) throw DataError("datapipe", "cannot sample from an empty dataset");
}

std::size_t EpochSampler::draw(std::uint64_t k) const {
  const std::uint64_t epoch = k / size_;
  if (epoch != cached_epoch_) {
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed_, epoch));
    std::shuffle(order_.begin(), order_.end(), rng);
    cached_epoch_ = epoch;
  }
  return order_[k % size_];
}

PairSampler::PairSampler(const Dataset& source, const Dataset& wild, std::size_t batch_size, std::uint64_t seed,
                         AugmentConfig augment, std::int32_t ignore_id)
    : source_(&source),
      wild_(&wild),
      batch_size_(batch_size),
      seed_(seed),
      augment_(augment),
      ignore_id_(ignore_id),
      source_order_(source.size(), mix_seed(seed, 1)),
      wild_order_(wild.size(), mix_seed(seed, 2)) {
  if (batch_size == 0) throw ParameterError("datapipe", "batch size must be positive");
  if (!source.labeled()) throw DataError("datapipe", "source dataset must be labeled");
}

PairBatch PairSampler::batch(std::uint64_t iteration) const {
  PairBatch out;
  for (std::size_t i = 0; i < batch_size_; ++i) {
    const std::uint64_t k = iteration * batch_size_ + i;
    std::mt19937_64 src_rng(mix_seed(seed_ ^ 0x5eedULL, k));
    std::mt19937_64 wild_rng(mix_seed(seed_ ^ 0x3141ULL, k));
    const std::size_t si = source_order_.draw(k);
    const std::size_t wi = wild_order_.draw(k);
    out.sources.push_back(augment(source_->labeled_sample(si), src_rng, augment_, ignore_id_));
    out.wilds.push_back(prepare_wild(wild_->wild_sample(wi), wild_rng, augment_.crop_h, augment_.crop_w));
  }
  return out;
}

}  // namespace wildnet
