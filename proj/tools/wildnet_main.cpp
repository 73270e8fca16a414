// wildnet command-line entry point: train, eval, stylize-preview, synth-data.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wildnet/checkpoint.hpp"
#include "wildnet/config.hpp"
#include "wildnet/datapipe.hpp"
#include "wildnet/evalreport.hpp"
#include "wildnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace wildnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool dump_only = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "sectioned key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "override, section.key=value (repeatable)")->take_all();
  cmd->add_option("--out", args.out, "output directory (default: $WILDNET_OUT or ./wildnet_out)");
  cmd->add_option("--seed", args.seed, "trainer.seed");
  cmd->add_flag("--dump-config", args.dump_only, "print the resolved configuration and exit");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config.empty()) ConfigStore::load_file(args.config, cfg);
  for (const auto& o : args.overrides) ConfigStore::apply_override(o, cfg);
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const CommonArgs& args, const char* fallback) {
  if (!args.out.empty()) return args.out;
  if (const char* env = std::getenv("WILDNET_OUT"); env && *env) return fs::path(env) / fallback;
  return fs::path("wildnet_out") / fallback;
}

void print_config(const RunConfig& cfg) {
  std::cout << "# resolved configuration (digest " << ConfigStore::digest(cfg) << ")\n"
            << ConfigStore::dump(cfg) << std::flush;
}

std::vector<const Dataset*> pointers(const std::vector<Dataset>& sets) {
  std::vector<const Dataset*> out;
  for (const auto& d : sets) out.push_back(&d);
  return out;
}

nlohmann::json report_meta(const std::string& checkpoint) {
  return {{"checkpoint", checkpoint},
          {"reference_claim", {{"backbone", "ResNet-50"}, {"G->C", 44.62}, {"Avg", 46.33}, {"desk_reproducible", false}}}};
}

void print_report(const EvalReport& report) {
  for (const auto& d : report.domains) std::cout << d.name << " miou " << d.metric.mean << "\n";
  std::cout << "avg " << report.avg << "\n";
}

int cmd_train(const RunConfig& cfg, const fs::path& out, const std::string& resume) {
  const TrainingData data = load_training_data(cfg);
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  const RunResult run = run_training(cfg, data, out, from);
  std::cout << "metrics " << run.metrics_csv.string() << "\n";
  if (run.model_checkpoint.empty()) return kExitOk;
  std::cout << "model " << run.model_checkpoint.string() << "\n";
  if (!data.eval.empty()) {
    const InferenceModel<float> model = read_inference_model(Archive::load(run.model_checkpoint));
    const EvalReport report = evaluate_domains(model, pointers(data.eval), cfg.ignore_id);
    write_report(report, out / "eval", report_meta(run.model_checkpoint.string()));
    print_report(report);
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& out, const std::string& checkpoint) {
  const InferenceModel<float> model = read_inference_model(Archive::load(checkpoint));
  TrainingData data;
  if (cfg.synth_enabled) {
    data = load_training_data(cfg);
  } else {
    if (cfg.eval_roots.empty()) throw ConfigError("evalreport", "no evaluation sets configured (datapipe.eval)");
    std::optional<LabelMapping> mapping;
    if (!cfg.mapping.empty()) mapping = LabelMapping::from_csv(cfg.mapping);
    for (const auto& [name, root] : cfg.eval_roots) {
      Dataset ds = load_dataset(root, mapping, DatasetRole::Eval, static_cast<std::int32_t>(model.num_classes),
                                cfg.ignore_id);
      Dataset named(name, DatasetRole::Eval);
      for (std::size_t i = 0; i < ds.size(); ++i) named.add(ds.stem(i), ds.image(i), ds.label(i));
      data.eval.push_back(std::move(named));
    }
  }
  const EvalReport report = evaluate_domains(model, pointers(data.eval), cfg.ignore_id);
  write_report(report, out, report_meta(checkpoint));
  print_report(report);
  return kExitOk;
}

Image colorize(const LabelGrid& labels) {
  static const float palette[][3] = {{0.90f, 0.10f, 0.10f}, {0.10f, 0.70f, 0.20f}, {0.15f, 0.30f, 0.90f},
                                     {0.95f, 0.80f, 0.10f}, {0.70f, 0.20f, 0.80f}, {0.10f, 0.80f, 0.80f},
                                     {0.95f, 0.50f, 0.10f}, {0.50f, 0.50f, 0.50f}};
  Image img(3, labels.rows(), labels.cols());
  for (Index r = 0; r < labels.rows(); ++r) {
    for (Index c = 0; c < labels.cols(); ++c) {
      const std::int32_t k = labels(r, c);
      for (int ch = 0; ch < 3; ++ch) img(ch, r, c) = k < 0 || k == kIgnoreId ? 0.0f : palette[k % 8][ch];
    }
  }
  return img;
}

Image hconcat(const std::vector<Image>& parts) {
  Index w = 0;
  for (const auto& p : parts) w += p.width();
  Image out(3, parts.front().height(), w);
  Index at = 0;
  for (const auto& p : parts) {
    for (int ch = 0; ch < 3; ++ch) out.plane(ch).middleCols(at, p.width()) = p.plane(ch);
    at += p.width();
  }
  return out;
}

int cmd_preview(const fs::path& out, const std::string& source, const std::string& wild, const std::string& checkpoint) {
  const InferenceModel<float> model = read_inference_model(Archive::load(checkpoint));
  const Image src = read_image(source);
  Image wld = read_image(wild);
  if (wld.height() != src.height() || wld.width() != src.width()) wld = resize_bilinear(wld, src.height(), src.width());

  const auto& stages = model.net.stages;
  std::vector<bool> mask(stages.size(), false);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    for (const auto& h : model.fs_hooks) mask[i] = mask[i] || h == NetworkSpec::stage_name(static_cast<Index>(i));
  }
  const auto eps = static_cast<float>(model.fs_eps);
  HookStats<float> stats;
  model.net.encode(wld, nullptr, &mask, &stats, eps, nullptr);
  StylePlan<float> plan(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (mask[i] && stats[i]) plan[i] = HookTarget<float>{*stats[i], false};
  }
  const LabelGrid plain = argmax_labels(model.net.logits(src));
  const LabelGrid styled = argmax_labels(model.net.logits(src, &plan, eps));

  fs::create_directories(out);
  const fs::path file = out / "preview.png";
  write_image(file, hconcat({src, wld, colorize(plain), colorize(styled)}));
  Index changed = 0;
  for (Index i = 0; i < plain.size(); ++i) changed += plain.data()[i] != styled.data()[i];
  std::cout << "preview " << file.string() << " (source | wild | plain prediction | stylized prediction), "
            << changed << " of " << plain.size() << " pixels change class\n";
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg, const fs::path& out) {
  const SynthData s = synth_toy(cfg.synth);
  write_dataset(s.source, out / s.source.name());
  write_dataset(s.source_val, out / s.source_val.name());
  for (const auto& d : s.unseen) write_dataset(d, out / d.name());
  write_dataset(s.wild, out / s.wild.name());
  std::cout << "wrote synthetic domains to " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WildNet domain-generalized segmentation"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string resume;
  std::string checkpoint;
  std::string source_img;
  std::string wild_img;

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, common);
  train->add_option("--resume", resume, "resume from a training checkpoint")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the configured domains");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "model or training checkpoint")->required()->check(CLI::ExistingFile);

  auto* preview = app.add_subcommand("stylize-preview", "plain vs wild-stylized predictions of one source image");
  add_common(preview, common);
  preview->add_option("--source", source_img)->required()->check(CLI::ExistingFile);
  preview->add_option("--wild", wild_img)->required()->check(CLI::ExistingFile);
  preview->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth-data", "write the synthetic toy domains to disk");
  add_common(synth, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  RunConfig cfg;
  try {
    cfg = resolve(common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  print_config(cfg);
  if (common.dump_only) return kExitOk;

  try {
    if (train->parsed()) return cmd_train(cfg, out_dir(common, "train"), resume);
    if (eval->parsed()) return cmd_eval(cfg, out_dir(common, "eval"), checkpoint);
    if (preview->parsed()) return cmd_preview(out_dir(common, "preview"), source_img, wild_img, checkpoint);
    return cmd_synth(cfg, out_dir(common, "synth"));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error [cli]: " << e.what() << "\n";
  }
  return kExitRuntime;
}
