#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wildnet/checkpoint.hpp"
#include "wildnet/config.hpp"
#include "wildnet/datapipe.hpp"
#include "wildnet/losses.hpp"
#include "wildnet/netgraph.hpp"
#include "wildnet/optim.hpp"
#include "wildnet/wilddict.hpp"

namespace wildnet {

/// Parameters, wild-content store and optimizer accumulators of a run.
struct TrainState {
  NetworkAssembly<float> assembly;
  ContentStore<float> store{1, 1};
  Optimizer<float> optimizer;
  /// Number of completed optimization steps.
  long iteration = 0;
};

TrainState make_state(const RunConfig& cfg);

/// One optimization step on a batch of (source, wild) pairs:
///   1. wild passes, subsampled to store_grid^2 and pushed to the store;
///   2. plain and stylized source passes;
///   3. shared-index anchor/positive sampling on anchor_grid^2;
///   4. every loss term; 5. one update on the weighted total.
/// When the content, style and consistency weights are all zero only the
/// plain branch runs (the baseline trainer).
LossTerms train_step(TrainState& state, const PairBatch& batch, const RunConfig& cfg, double lr);

/// Labels of the projection grid pixels picked by `index_map`, taken by
/// nearest-neighbor from the full-resolution label.
std::vector<std::int32_t> labels_at(const LabelGrid& label, Index grid_h, Index grid_w,
                                    const std::vector<GridIndex>& index_map);

Archive training_archive(TrainState& state, const RunConfig& cfg);
TrainState state_from_archive(const Archive& archive, const RunConfig& cfg);

struct TrainingData {
  Dataset source;
  Dataset wild;
  std::vector<Dataset> eval;
};

/// Synthetic data when synth.enabled, otherwise the configured directories.
/// The first eval set is the seen domain in the synthetic case.
TrainingData load_training_data(const RunConfig& cfg);

struct RunResult {
  std::filesystem::path metrics_csv;
  std::filesystem::path last_checkpoint;
  std::filesystem::path model_checkpoint;
  std::vector<LossTerms> history;
};

/// Runs cfg.total_iters steps under the poly schedule, logging every step to
/// metrics.csv and checkpointing every checkpoint_every steps. The final
/// outputs are last.wnck (full state) and model.wnck (stripped).
RunResult run_training(const RunConfig& cfg, const TrainingData& data, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume = std::nullopt);

inline constexpr const char* kMetricsHeader = "iter,lr,l_orig,l_sce,l_wce,l_sel,l_scr,total";

}  // namespace wildnet
