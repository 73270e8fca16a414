#include "wildnet/config.hpp"

#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace wildnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("cli", "key '" + key + "': cannot parse '" + value + "' as " + expected);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v, "a real number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a real number");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long n = std::stol(v, &pos);
    if (pos != v.size()) bad_value(key, v, "an integer");
    return n;
  } catch (const std::logic_error&) {
    bad_value(key, v, "an integer");
  }
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long n = to_long(key, v);
  if (n < 0) bad_value(key, v, "a non-negative integer");
  return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::string fmt_double(double d) {
  std::ostringstream out;
  out << std::setprecision(17) << d;
  // Round-trip exact but readable for the common short constants.
  std::ostringstream shorter;
  shorter << std::setprecision(6) << d;
  return std::stod(shorter.str()) == d ? shorter.str() : out.str();
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define WILDNET_REAL(expr)                                                                          \
  Field {                                                                                           \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_double(k, v); },    \
        [](const RunConfig& c) { return fmt_double(c.expr); }                                        \
  }
#define WILDNET_LONG(expr)                                                                          \
  Field {                                                                                           \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_long(k, v); },      \
        [](const RunConfig& c) { return std::to_string(c.expr); }                                    \
  }
#define WILDNET_COUNT(expr)                                                                         \
  Field {                                                                                           \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = to_count(k, v); },     \
        [](const RunConfig& c) { return std::to_string(c.expr); }                                    \
  }
#define WILDNET_STRING(expr)                                                                        \
  Field {                                                                                           \
    [](RunConfig& c, const std::string&, const std::string& v) { c.expr = v; },                    \
        [](const RunConfig& c) { return c.expr; }                                                    \
  }

/// Ordered registry of section.key -> field accessors.
const std::vector<std::pair<std::string, Field>>& registry() {
  static const std::vector<std::pair<std::string, Field>> fields = [] {
    std::vector<std::pair<std::string, Field>> f;
    f.emplace_back("trainer.base_lr", WILDNET_REAL(base_lr));
    f.emplace_back("trainer.power", WILDNET_REAL(power));
    f.emplace_back("trainer.total_iters", WILDNET_LONG(total_iters));
    f.emplace_back("trainer.batch_size", WILDNET_COUNT(batch_size));
    f.emplace_back("trainer.momentum", WILDNET_REAL(momentum));
    f.emplace_back("trainer.weight_decay", WILDNET_REAL(weight_decay));
    f.emplace_back("trainer.optimizer",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           if (v == "sgd") {
                             c.optimizer = OptimizerKind::Sgd;
                           } else if (v == "adam") {
                             c.optimizer = OptimizerKind::Adam;
                           } else {
                             bad_value(k, v, "sgd or adam");
                           }
                         },
                         [](const RunConfig& c) { return std::string(c.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"); }});
    f.emplace_back("trainer.adam_beta1", WILDNET_REAL(adam_beta1));
    f.emplace_back("trainer.adam_beta2", WILDNET_REAL(adam_beta2));
    f.emplace_back("trainer.checkpoint_every", WILDNET_LONG(checkpoint_every));
    f.emplace_back("trainer.seed",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_count(k, v); },
                         [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.emplace_back("losses.tau", WILDNET_REAL(tau));
    f.emplace_back("losses.w_orig", WILDNET_REAL(weights.orig));
    f.emplace_back("losses.w_cel", WILDNET_REAL(weights.cel));
    f.emplace_back("losses.w_sel", WILDNET_REAL(weights.sel));
    f.emplace_back("losses.w_scr", WILDNET_REAL(weights.scr));
    f.emplace_back("wilddict.capacity", WILDNET_LONG(store_capacity));
    f.emplace_back("embed.anchor_grid", WILDNET_LONG(anchor_grid));
    f.emplace_back("embed.store_grid", WILDNET_LONG(store_grid));
    f.emplace_back("embed.sampling", WILDNET_STRING(sampling));
    f.emplace_back("embed.proj_hidden", WILDNET_LONG(network.proj_hidden));
    f.emplace_back("embed.proj_channels", WILDNET_LONG(network.proj_channels));
    f.emplace_back("embed.norm_eps", WILDNET_REAL(norm_eps));
    f.emplace_back("netgraph.num_classes", WILDNET_LONG(network.num_classes));
    f.emplace_back("netgraph.widths",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.network.widths.clear();
                           for (const auto& s : split(v, ',')) c.network.widths.push_back(to_long(k, s));
                         },
                         [](const RunConfig& c) { return join(c.network.widths); }});
    f.emplace_back("netgraph.strides",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.network.strides.clear();
                           for (const auto& s : split(v, ',')) c.network.strides.push_back(to_long(k, s));
                         },
                         [](const RunConfig& c) { return join(c.network.strides); }});
    f.emplace_back("netgraph.fs_hooks",
                   Field{[](RunConfig& c, const std::string&, const std::string& v) { c.network.fs_hooks = split(v, ','); },
                         [](const RunConfig& c) { return join(c.network.fs_hooks); }});
    f.emplace_back("netgraph.fs_max_depth", WILDNET_LONG(network.fs_max_depth));
    f.emplace_back("netgraph.fs_eps", WILDNET_REAL(network.fs_eps));
    f.emplace_back("netgraph.fs_mode", WILDNET_STRING(fs_mode));
    f.emplace_back("datapipe.source", WILDNET_STRING(source_root));
    f.emplace_back("datapipe.wild", WILDNET_STRING(wild_root));
    f.emplace_back("datapipe.mapping", WILDNET_STRING(mapping));
    f.emplace_back("datapipe.eval",
                   Field{[](RunConfig& c, const std::string&, const std::string& v) {
                           c.eval_roots.clear();
                           for (const auto& item : split(v, ',')) {
                             const auto eq = item.find('=');
                             if (eq == std::string::npos) {
                               c.eval_roots.emplace_back(std::filesystem::path(item).filename().string(), item);
                             } else {
                               c.eval_roots.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
                             }
                           }
                         },
                         [](const RunConfig& c) {
                           std::vector<std::string> items;
                           for (const auto& [n, p] : c.eval_roots) items.push_back(n + "=" + p);
                           return join(items);
                         }});
    f.emplace_back("datapipe.ignore_id",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.ignore_id = static_cast<std::int32_t>(to_long(k, v));
                         },
                         [](const RunConfig& c) { return std::to_string(c.ignore_id); }});
    f.emplace_back("datapipe.crop", WILDNET_LONG(crop));
    f.emplace_back("datapipe.scale_min", WILDNET_REAL(scale_min));
    f.emplace_back("datapipe.scale_max", WILDNET_REAL(scale_max));
    f.emplace_back("datapipe.wild_limit", WILDNET_LONG(wild_limit));
    f.emplace_back("datapipe.prefetch_depth", WILDNET_LONG(prefetch_depth));
    f.emplace_back("synth.enabled",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.synth_enabled = to_bool(k, v); },
                         [](const RunConfig& c) { return std::string(c.synth_enabled ? "true" : "false"); }});
    f.emplace_back("synth.classes",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.synth.classes = static_cast<std::int32_t>(to_long(k, v));
                         },
                         [](const RunConfig& c) { return std::to_string(c.synth.classes); }});
    f.emplace_back("synth.size", WILDNET_LONG(synth.size));
    f.emplace_back("synth.source_train", WILDNET_COUNT(synth.source_train));
    f.emplace_back("synth.eval_per_domain", WILDNET_COUNT(synth.eval_per_domain));
    f.emplace_back("synth.unseen_domains", WILDNET_COUNT(synth.unseen_domains));
    f.emplace_back("synth.wild", WILDNET_COUNT(synth.wild));
    f.emplace_back("synth.seed",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.synth.seed = to_count(k, v); },
                         [](const RunConfig& c) { return std::to_string(c.synth.seed); }});
    return f;
  }();
  return fields;
}

#undef WILDNET_REAL
#undef WILDNET_LONG
#undef WILDNET_COUNT
#undef WILDNET_STRING

const Field& field(const std::string& key) {
  for (const auto& [k, f] : registry()) {
    if (k == key) return f;
  }
  throw ConfigError("cli", "unknown configuration key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  network.num_classes = 19;
  network.proj_hidden = 256;
  network.proj_channels = 256;
}

OptimizerConfig RunConfig::optimizer_config() const {
  OptimizerConfig o;
  o.kind = optimizer;
  o.momentum = momentum;
  o.weight_decay = weight_decay;
  o.beta1 = adam_beta1;
  o.beta2 = adam_beta2;
  return o;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("trainharness", msg); };
  if (total_iters < 0) fail("total_iters must be non-negative");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(base_lr >= 0)) fail("base_lr must be non-negative");
  if (!(tau > 0)) fail("tau must be positive");
  weights.validate();
  if (store_capacity < 1) fail("wilddict.capacity must be positive");
  if (anchor_grid < 1 || store_grid < 1) fail("sampling grids must be positive");
  if (anchor_grid < store_grid) fail("anchor_grid must be at least store_grid");
  if (sampling != "uniform" && sampling != "random") fail("embed.sampling must be uniform or random");
  if (fs_mode != "wild" && fs_mode != "random") fail("netgraph.fs_mode must be wild or random");
  if (crop < 1) fail("crop must be positive");
  if (!(scale_min > 0) || scale_max < scale_min) fail("scale range must satisfy 0 < scale_min <= scale_max");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
  network.validate();
  const long stride = static_cast<long>(network.output_stride());
  const long grid = (crop + stride - 1) / stride;
  if (anchor_grid > grid) {
    fail("anchor_grid " + std::to_string(anchor_grid) + " exceeds the projection grid " + std::to_string(grid));
  }
  if (synth_enabled && synth.classes != network.num_classes) {
    fail("synth.classes must equal netgraph.num_classes");
  }
}

void ConfigStore::set(const std::string& key, const std::string& value, RunConfig& cfg) {
  field(key).set(cfg, key, trim(value));
}

std::string ConfigStore::get(const std::string& key, const RunConfig& cfg) { return field(key).get(cfg); }

std::vector<std::string> ConfigStore::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : registry()) out.push_back(k);
  return out;
}

void ConfigStore::load_file(const std::filesystem::path& path, RunConfig& cfg) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cli", "cannot read config " + path.string() + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("cli", "config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, value] : body) set(section + "." + key, value.data(), cfg);
  }
}

void ConfigStore::apply_override(const std::string& assignment, RunConfig& cfg) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("cli", "override '" + assignment + "' is not KEY=VALUE");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1), cfg);
}

std::string ConfigStore::dump(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, f] : registry()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

std::string ConfigStore::digest(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace wildnet
