#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildnet/netgraph.hpp"

namespace wildnet {

struct NamedArray {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::vector<float> data;
};

/// Single-file archive: "WNCKPT01", uint64 metadata length, metadata JSON,
/// uint64 array count, then per array uint32 name length, name, uint64 rows,
/// uint64 cols and rows*cols float32 values (row-major). Integers are
/// little-endian.
struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;
  bool contains_prefix(const std::string& prefix) const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// All parameters of the assembly, including the projection head.
void write_assembly(Archive& archive, NetworkAssembly<float>& assembly);
NetworkAssembly<float> read_assembly(const Archive& archive);

/// Backbone and classifier only; metadata marks the archive as stripped.
Archive inference_archive(InferenceModel<float>& model, nlohmann::json metadata);
/// Accepts either a stripped or a full training archive.
InferenceModel<float> read_inference_model(const Archive& archive);

}  // namespace wildnet
