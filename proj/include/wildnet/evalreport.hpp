#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildnet/datapipe.hpp"
#include "wildnet/netgraph.hpp"

namespace wildnet {

/// K x K pixel counts, rows = ground truth, cols = prediction.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit ConfusionMatrix(Index classes) : counts_(Counts::Zero(classes, classes)) {}

  Index classes() const { return counts_.rows(); }
  const Counts& counts() const { return counts_; }
  std::int64_t ignored() const { return ignored_; }
  std::int64_t counted() const { return counts_.sum(); }

  /// Adds every pixel whose ground truth is not `ignore_id`.
  void update(const LabelGrid& pred, const LabelGrid& gt, std::int32_t ignore_id = kIgnoreId);
  /// Element-wise sum of two shards.
  void merge(const ConfusionMatrix& other);

 private:
  Counts counts_;
  std::int64_t ignored_ = 0;
};

struct MiouResult {
  /// IoU per class; empty for classes absent from both prediction and truth.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
  /// False when no class has a non-zero denominator.
  bool defined = false;
};

MiouResult miou(const ConfusionMatrix& cm);

struct DomainResult {
  std::string name;
  MiouResult metric;
  std::size_t images = 0;
};

struct EvalReport {
  std::vector<DomainResult> domains;
  /// Unweighted mean of per-domain mIoU over evaluated domains.
  double avg = 0.0;
  std::vector<std::string> skipped;

  const DomainResult* find(const std::string& name) const;
  nlohmann::json summary() const;
};

/// Confusion matrix of a model over one labeled dataset. Predictions coarser
/// than the label are upsampled by nearest neighbor.
ConfusionMatrix evaluate_dataset(const InferenceModel<float>& model, const Dataset& ds, std::int32_t ignore_id = kIgnoreId);

/// Per-domain mIoU and their average; empty datasets are skipped with a
/// warning on stderr and left out of the average.
EvalReport evaluate_domains(const InferenceModel<float>& model, const std::vector<const Dataset*>& domains,
                            std::int32_t ignore_id = kIgnoreId);

/// Writes per_domain.csv (domain,miou,iou_0..iou_{K-1}) and summary.json.
void write_report(const EvalReport& report, const std::filesystem::path& out_dir,
                  const nlohmann::json& extra = nlohmann::json::object());

}  // namespace wildnet
