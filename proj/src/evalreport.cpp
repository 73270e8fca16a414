#include "wildnet/evalreport.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>

namespace wildnet {

void ConfusionMatrix::update(const LabelGrid& pred, const LabelGrid& gt, std::int32_t ignore_id) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw ShapeError("evalreport", "prediction and ground truth are not aligned");
  }
  const Index k = classes();
  for (Index i = 0; i < gt.size(); ++i) {
    const std::int32_t y = gt.data()[i];
    if (y == ignore_id) {
      ++ignored_;
      continue;
    }
    const std::int32_t p = pred.data()[i];
    if (y < 0 || y >= k || p < 0 || p >= k) {
      throw DataError("evalreport", "class id out of range (gt " + std::to_string(y) + ", pred " + std::to_string(p) + ")");
    }
    ++counts_(y, p);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes() != classes()) throw ShapeError("evalreport", "cannot merge confusion matrices of different size");
  counts_ += other.counts_;
  ignored_ += other.ignored_;
}

MiouResult miou(const ConfusionMatrix& cm) {
  const auto& c = cm.counts();
  MiouResult r;
  r.per_class.resize(static_cast<std::size_t>(cm.classes()));
  double sum = 0.0;
  int present = 0;
  for (Index k = 0; k < cm.classes(); ++k) {
    const std::int64_t tp = c(k, k);
    const std::int64_t fn = c.row(k).sum() - tp;
    const std::int64_t fp = c.col(k).sum() - tp;
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[static_cast<std::size_t>(k)] = iou;
    sum += iou;
    ++present;
  }
  r.defined = present > 0;
  r.mean = present > 0 ? sum / present : 0.0;
  return r;
}

const DomainResult* EvalReport::find(const std::string& name) const {
  for (const auto& d : domains) {
    if (d.name == name) return &d;
  }
  return nullptr;
}

nlohmann::json EvalReport::summary() const {
  nlohmann::json j;
  j["domains"] = nlohmann::json::object();
  for (const auto& d : domains) j["domains"][d.name] = d.metric.mean;
  j["avg"] = avg;
  if (!skipped.empty()) j["skipped"] = skipped;
  return j;
}

ConfusionMatrix evaluate_dataset(const InferenceModel<float>& model, const Dataset& ds, std::int32_t ignore_id) {
  ConfusionMatrix cm(model.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    LabelGrid pred = model.predict_labels(ds.image(i));
    const LabelGrid& gt = ds.label(i);
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) pred = resize_nearest(pred, gt.rows(), gt.cols());
    cm.update(pred, gt, ignore_id);
  }
  return cm;
}

EvalReport evaluate_domains(const InferenceModel<float>& model, const std::vector<const Dataset*>& domains,
                            std::int32_t ignore_id) {
  EvalReport report;
  double sum = 0.0;
  for (const Dataset* ds : domains) {
    if (ds->empty()) {
      std::cerr << "warning: evaluation set '" << ds->name() << "' is empty, skipped\n";
      report.skipped.push_back(ds->name());
      continue;
    }
    DomainResult r{ds->name(), miou(evaluate_dataset(model, *ds, ignore_id)), ds->size()};
    sum += r.metric.mean;
    report.domains.push_back(std::move(r));
  }
  report.avg = report.domains.empty() ? 0.0 : sum / static_cast<double>(report.domains.size());
  return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& out_dir, const nlohmann::json& extra) {
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "per_domain.csv");
  if (!csv) throw DataError("evalreport", "cannot write report to " + out_dir.string());
  Index classes = 0;
  for (const auto& d : report.domains) classes = std::max<Index>(classes, static_cast<Index>(d.metric.per_class.size()));
  csv << "domain,miou";
  for (Index k = 0; k < classes; ++k) csv << ",iou_" << k;
  csv << "\n" << std::setprecision(9);
  for (const auto& d : report.domains) {
    csv << d.name << "," << d.metric.mean;
    for (const auto& iou : d.metric.per_class) {
      csv << ",";
      if (iou) csv << *iou;
    }
    csv << "\n";
  }
  nlohmann::json j = report.summary();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream(out_dir / "summary.json") << j.dump(2) << "\n";
}

}  // namespace wildnet
