#include "wildnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace wildnet {

namespace {

constexpr char kMagic[8] = {'W', 'N', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw DataError("netgraph", "checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

void put_floats(std::ostream& out, const std::vector<float>& data) {
  for (float f : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    put<std::uint32_t>(out, bits);
  }
}

std::vector<float> get_floats(std::istream& in, std::size_t n) {
  std::vector<float> data(n);
  for (auto& f : data) {
    const auto bits = get<std::uint32_t>(in);
    std::memcpy(&f, &bits, sizeof(f));
  }
  return data;
}

NamedArray to_array(const ParamView<float>& v) {
  return {v.name, v.rows, v.cols, std::vector<float>(v.values.data(), v.values.data() + v.values.size())};
}

void assign(const Archive& archive, ParamView<float>& v) {
  const NamedArray& a = archive.at(v.name);
  if (a.rows != v.rows || a.cols != v.cols) {
    throw ShapeError("netgraph", "checkpoint array '" + v.name + "' has shape " + std::to_string(a.rows) + "x" +
                                     std::to_string(a.cols) + ", model expects " + std::to_string(v.rows) + "x" +
                                     std::to_string(v.cols));
  }
  v.values = Eigen::Map<const Vector<float>>(a.data.data(), static_cast<Index>(a.data.size()));
}

}  // namespace

const NamedArray* Archive::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Archive::at(const std::string& name) const {
  const NamedArray* a = find(name);
  if (!a) throw DataError("netgraph", "checkpoint has no array '" + name + "'");
  return *a;
}

bool Archive::contains_prefix(const std::string& prefix) const {
  for (const auto& a : arrays) {
    if (a.name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("netgraph", "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::string meta = metadata.dump();
    put<std::uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(out, arrays.size());
    for (const auto& a : arrays) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(a.rows));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(a.cols));
      put_floats(out, a.data);
    }
    if (!out) throw DataError("netgraph", "failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("netgraph", "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("netgraph", path.string() + " is not a checkpoint archive");
  }
  Archive archive;
  const auto meta_len = get<std::uint64_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw DataError("netgraph", "checkpoint truncated");
  archive.metadata = nlohmann::json::parse(meta);
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = get<std::uint32_t>(in);
    a.name.resize(name_len);
    in.read(a.name.data(), name_len);
    a.rows = static_cast<Index>(get<std::uint64_t>(in));
    a.cols = static_cast<Index>(get<std::uint64_t>(in));
    a.data = get_floats(in, static_cast<std::size_t>(a.rows * a.cols));
    archive.arrays.push_back(std::move(a));
  }
  return archive;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  return {{"in_channels", spec.in_channels},     {"num_classes", spec.num_classes},
          {"widths", spec.widths},               {"strides", spec.strides},
          {"proj_hidden", spec.proj_hidden},     {"proj_channels", spec.proj_channels},
          {"fs_hooks", spec.fs_hooks},           {"fs_max_depth", spec.fs_max_depth},
          {"fs_eps", spec.fs_eps},               {"norm_eps", spec.norm_eps}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.in_channels = j.at("in_channels").get<Index>();
  s.num_classes = j.at("num_classes").get<Index>();
  s.widths = j.at("widths").get<std::vector<Index>>();
  s.strides = j.at("strides").get<std::vector<Index>>();
  s.proj_hidden = j.at("proj_hidden").get<Index>();
  s.proj_channels = j.at("proj_channels").get<Index>();
  s.fs_hooks = j.at("fs_hooks").get<std::vector<std::string>>();
  s.fs_max_depth = j.at("fs_max_depth").get<Index>();
  s.fs_eps = j.at("fs_eps").get<double>();
  s.norm_eps = j.at("norm_eps").get<double>();
  return s;
}

void write_assembly(Archive& archive, NetworkAssembly<float>& assembly) {
  archive.metadata["network"] = spec_to_json(assembly.spec());
  archive.metadata["hooks"] = assembly.spec().fs_hooks;
  archive.metadata["num_classes"] = assembly.spec().num_classes;
  archive.metadata["stripped"] = false;
  for (const auto& v : assembly.parameters()) archive.arrays.push_back(to_array(v));
}

NetworkAssembly<float> read_assembly(const Archive& archive) {
  if (archive.metadata.value("stripped", false)) {
    throw DataError("netgraph", "a stripped inference checkpoint cannot resume training");
  }
  NetworkAssembly<float> assembly(spec_from_json(archive.metadata.at("network")), 0);
  for (auto& v : assembly.parameters()) assign(archive, v);
  return assembly;
}

Archive inference_archive(InferenceModel<float>& model, nlohmann::json metadata) {
  Archive archive;
  archive.metadata = std::move(metadata);
  archive.metadata["stripped"] = true;
  archive.metadata["hooks"] = model.fs_hooks;
  archive.metadata["num_classes"] = model.num_classes;
  archive.metadata["fs_eps"] = model.fs_eps;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : model.net.stages) {
    stages.push_back({{"in", s.in_channels}, {"out", s.out_channels}, {"kernel", s.kernel}, {"stride", s.stride},
                      {"pad", s.pad}});
  }
  archive.metadata["stages"] = stages;
  for (const auto& v : model.net.parameters()) archive.arrays.push_back(to_array(v));
  return archive;
}

InferenceModel<float> read_inference_model(const Archive& archive) {
  InferenceModel<float> model;
  if (!archive.metadata.value("stripped", false)) {
    NetworkAssembly<float> full = read_assembly(archive);
    return full.strip_for_inference();
  }
  for (const auto& s : archive.metadata.at("stages")) {
    model.net.stages.emplace_back(s.at("in").get<Index>(), s.at("out").get<Index>(), s.at("kernel").get<Index>(),
                                  s.at("stride").get<Index>(), s.at("pad").get<Index>());
  }
  const NamedArray& cls = archive.at("classifier.weight");
  model.net.classifier = Conv2d<float>(cls.cols, cls.rows, 1, 1, 0);
  model.fs_hooks = archive.metadata.at("hooks").get<std::vector<std::string>>();
  model.num_classes = archive.metadata.at("num_classes").get<Index>();
  model.fs_eps = archive.metadata.value("fs_eps", kDefaultStylizeEps);
  for (auto& v : model.net.parameters()) assign(archive, v);
  return model;
}

}  // namespace wildnet
