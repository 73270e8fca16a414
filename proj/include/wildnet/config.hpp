#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wildnet/datapipe.hpp"
#include "wildnet/losses.hpp"
#include "wildnet/netgraph.hpp"
#include "wildnet/optim.hpp"

namespace wildnet {

/// Every tunable of a run. Defaults are the full-scale recipe (ResNet
/// setting); desk-scale runs override them from a config file.
struct RunConfig {
  // [trainer]
  double base_lr = 2.5e-3;
  double power = 0.9;
  long total_iters = 60000;
  std::size_t batch_size = 8;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  long checkpoint_every = 5000;
  std::uint64_t seed = 0;

  // [losses]
  double tau = kDefaultTau;
  LossWeights weights;

  // [wilddict]
  long store_capacity = 393216;

  // [embed]
  long anchor_grid = 64;
  long store_grid = 16;
  std::string sampling = "uniform";  // uniform | random
  double norm_eps = kDefaultNormEps;

  // [netgraph]
  NetworkSpec network;
  std::string fs_mode = "wild";  // wild | random

  // [datapipe]
  std::string source_root;
  std::string wild_root;
  std::string mapping;
  /// name=path pairs; empty names default to the directory name.
  std::vector<std::pair<std::string, std::string>> eval_roots;
  std::int32_t ignore_id = kIgnoreId;
  long crop = 768;
  double scale_min = 0.5;
  double scale_max = 2.0;
  long wild_limit = 0;  // 0 keeps every wild image
  long prefetch_depth = 0;

  // [synth]
  bool synth_enabled = false;
  SynthConfig synth;

  RunConfig();

  void validate() const;
  AugmentConfig augment() const { return {crop, crop, scale_min, scale_max}; }
  OptimizerConfig optimizer_config() const;
};

/// Plain-text sectioned key=value configuration. Sections are named after
/// modules; every field is addressable as section.key.
class ConfigStore {
 public:
  /// Reads an INI file into `cfg`; unknown sections or keys are rejected.
  static void load_file(const std::filesystem::path& path, RunConfig& cfg);
  /// Applies one "section.key=value" override.
  static void apply_override(const std::string& assignment, RunConfig& cfg);
  static void set(const std::string& key, const std::string& value, RunConfig& cfg);
  static std::string get(const std::string& key, const RunConfig& cfg);
  static std::vector<std::string> keys();
  /// Resolved configuration in file syntax, sections in fixed order.
  static std::string dump(const RunConfig& cfg);
  /// FNV-1a 64 of `dump`, hex encoded.
  static std::string digest(const RunConfig& cfg);
};

}  // namespace wildnet
