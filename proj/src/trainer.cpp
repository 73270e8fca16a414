#include "wildnet/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace wildnet {

namespace fs = std::filesystem;

TrainState make_state(const RunConfig& cfg) {
  cfg.validate();
  NetworkSpec spec = cfg.network;
  spec.norm_eps = cfg.norm_eps;
  TrainState state;
  state.assembly = NetworkAssembly<float>(spec, mix_seed(cfg.seed, 7));
  state.store = ContentStore<float>(spec.proj_channels, cfg.store_capacity);
  state.optimizer = Optimizer<float>(cfg.optimizer_config());
  return state;
}

std::vector<std::int32_t> labels_at(const LabelGrid& label, Index grid_h, Index grid_w,
                                    const std::vector<GridIndex>& index_map) {
  const LabelGrid coarse = resize_nearest(label, grid_h, grid_w);
  std::vector<std::int32_t> out;
  out.reserve(index_map.size());
  for (const GridIndex& g : index_map) out.push_back(coarse(g.row, g.col));
  return out;
}

namespace {

/// Picks the anchor positions once so anchors and positives share them.
std::vector<GridIndex> anchor_positions(const ProjectedGrid<float>& grid, const RunConfig& cfg, std::uint64_t stream) {
  if (cfg.sampling == "random") {
    std::mt19937_64 rng(mix_seed(cfg.seed ^ 0xa11cULL, stream));
    return random_subsample(grid, cfg.anchor_grid, cfg.anchor_grid, rng).index_map;
  }
  return uniform_subsample(grid, cfg.anchor_grid, cfg.anchor_grid).index_map;
}

void check_finite(const LossTerms& t, long iteration) {
  if (std::isfinite(t.total)) return;
  std::ostringstream msg;
  msg << "non-finite loss at iteration " << iteration << " (l_orig=" << t.l_orig << " l_sce=" << t.l_sce
      << " l_wce=" << t.l_wce << " l_sel=" << t.l_sel << " l_scr=" << t.l_scr << ")";
  throw TrainingError("trainharness", msg.str());
}

}  // namespace

LossTerms train_step(TrainState& state, const PairBatch& batch, const RunConfig& cfg, double lr) {
  if (batch.size() == 0 || batch.wilds.size() != batch.size()) {
    throw ParameterError("trainharness", "batch must hold equally many source and wild samples");
  }
  const LossWeights& w = cfg.weights;
  const bool stylized = w.uses_stylized_branch();
  NetworkAssembly<float>& net = state.assembly;
  Gradients<float> grads = net.zero_gradients();
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  LossTerms terms;
  terms.weights = w;

  // Wild passes and store pushes come first so every query sees a
  // non-empty store.
  std::vector<HookStats<float>> wild_stats(batch.size());
  if (stylized) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const ProjectedGrid<float> proj = net.wild_projection(batch.wilds[b].image, &wild_stats[b]);
      state.store.push(uniform_subsample(proj, cfg.store_grid, cfg.store_grid).values);
    }
  }

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const LabeledSample& src = batch.sources[b];
    const std::uint64_t stream = static_cast<std::uint64_t>(state.iteration) * batch.size() + b;
    BranchOutput<float> plain = net.forward_branch(src.image, nullptr, nullptr, stylized);

    FeatureMap<float> g_plain;
    terms.l_orig += seg_ce_logits(plain.logits, src.label, cfg.ignore_id, &g_plain).value;
    g_plain.values() *= static_cast<float>(w.orig) * inv_b;

    if (!stylized) {
      net.backward(plain.trace, g_plain, FeatureMap<float>{}, grads);
      continue;
    }

    StylePlan<float> plan;
    if (cfg.fs_mode == "random") {
      std::mt19937_64 rng(mix_seed(cfg.seed ^ 0xf5ULL, stream));
      plan = net.random_plan(rng);
    } else {
      plan = net.plan_from(wild_stats[b]);
    }
    BranchOutput<float> sty = net.forward_branch(src.image, &plan, nullptr);

    FeatureMap<float> g_sel;
    FeatureMap<float> g_scr;
    terms.l_sel += seg_ce_logits(sty.logits, src.label, cfg.ignore_id, &g_sel).value;
    const SegPrediction<float> p_src = softmax(plain.logits);
    terms.l_scr += scr_loss_logits(p_src, sty.logits, &g_scr);

    const auto picks = anchor_positions(plain.proj, cfg, stream);
    const Index side = cfg.anchor_grid;
    CELBatch<float> cel;
    cel.anchors = gather_pixels(plain.proj, picks, side, side);
    cel.positives = gather_pixels(sty.proj, picks, side, side);
    cel.labels = labels_at(src.label, plain.proj.values.height(), plain.proj.values.width(), picks);
    cel.tau = static_cast<float>(cfg.tau);
    cel.ignore_id = cfg.ignore_id;
    ContrastiveGrad<float> g_sce;
    ContrastiveGrad<float> g_wce;
    terms.l_sce += sce_loss(cel, &g_sce).value;
    terms.l_wce += wce_loss(cel, state.store, &g_wce).value;

    FeatureMap<float> g_proj_plain;
    FeatureMap<float> g_proj_sty;
    if (w.cel > 0) {
      const float k = static_cast<float>(w.cel) * inv_b;
      g_proj_plain = FeatureMap<float>(plain.proj.channels(), plain.proj.values.height(), plain.proj.values.width());
      g_proj_sty = FeatureMap<float>(sty.proj.channels(), sty.proj.values.height(), sty.proj.values.width());
      scatter_add<float>(picks, (g_sce.anchors + g_wce.anchors) * k, g_proj_plain);
      scatter_add<float>(picks, (g_sce.positives + g_wce.positives) * k, g_proj_sty);
    }
    FeatureMap<float> g_sty_logits(sty.logits.channels(), sty.logits.height(), sty.logits.width());
    if (w.sel > 0) g_sty_logits.values() += g_sel.values() * (static_cast<float>(w.sel) * inv_b);
    if (w.scr > 0) g_sty_logits.values() += g_scr.values() * (static_cast<float>(w.scr) * inv_b);

    net.backward(plain.trace, g_plain, g_proj_plain, grads);
    if (w.sel > 0 || w.scr > 0 || w.cel > 0) net.backward(sty.trace, g_sty_logits, g_proj_sty, grads);
  }

  const double nb = static_cast<double>(batch.size());
  terms.l_orig /= nb;
  terms.l_sce /= nb;
  terms.l_wce /= nb;
  terms.l_sel /= nb;
  terms.l_scr /= nb;
  terms.total = total_loss(terms);
  check_finite(terms, state.iteration);

  auto params = net.parameters();
  auto grad_views = grads.views();
  state.optimizer.step(params, grad_views, lr);
  ++state.iteration;
  return terms;
}

Archive training_archive(TrainState& state, const RunConfig& cfg) {
  Archive archive;
  archive.metadata["iteration"] = state.iteration;
  archive.metadata["config_digest"] = ConfigStore::digest(cfg);
  archive.metadata["optimizer_steps"] = state.optimizer.steps();
  archive.metadata["store"] = {{"channels", state.store.channels()},
                               {"size", state.store.size()},
                               {"capacity", state.store.capacity()},
                               {"generation", state.store.generation()}};
  write_assembly(archive, state.assembly);
  const auto params = state.assembly.parameters();
  for (std::size_t i = 0; i < state.optimizer.first_moments().size(); ++i) {
    const auto& m = state.optimizer.first_moments()[i];
    archive.arrays.push_back({"optim.m." + params[i].name, m.size(), 1, std::vector<float>(m.data(), m.data() + m.size())});
  }
  for (std::size_t i = 0; i < state.optimizer.second_moments().size(); ++i) {
    const auto& v = state.optimizer.second_moments()[i];
    archive.arrays.push_back({"optim.v." + params[i].name, v.size(), 1, std::vector<float>(v.data(), v.data() + v.size())});
  }
  // Logical order, [C, size] row-major.
  const auto contents = state.store.contents();
  NamedArray store{"store.entries", contents.rows(), contents.cols(), {}};
  store.data.reserve(static_cast<std::size_t>(contents.size()));
  for (Index r = 0; r < contents.rows(); ++r) {
    for (Index c = 0; c < contents.cols(); ++c) store.data.push_back(contents(r, c));
  }
  archive.arrays.push_back(std::move(store));
  return archive;
}

TrainState state_from_archive(const Archive& archive, const RunConfig& cfg) {
  TrainState state;
  state.assembly = read_assembly(archive);
  state.iteration = archive.metadata.at("iteration").get<long>();
  state.optimizer = Optimizer<float>(cfg.optimizer_config());
  const auto params = state.assembly.parameters();
  for (const auto& p : params) {
    if (const NamedArray* m = archive.find("optim.m." + p.name)) {
      state.optimizer.first_moments().push_back(Eigen::Map<const Vector<float>>(m->data.data(), m->rows));
    }
    if (const NamedArray* v = archive.find("optim.v." + p.name)) {
      state.optimizer.second_moments().push_back(Eigen::Map<const Vector<float>>(v->data.data(), v->rows));
    }
  }
  state.optimizer.set_steps(archive.metadata.value("optimizer_steps", 0L));
  const auto& meta = archive.metadata.at("store");
  const NamedArray& entries = archive.at("store.entries");
  ContentStore<float>::ColumnMatrix contents(entries.rows, entries.cols);
  for (Index r = 0; r < entries.rows; ++r) {
    for (Index c = 0; c < entries.cols; ++c) contents(r, c) = entries.data[static_cast<std::size_t>(r * entries.cols + c)];
  }
  state.store = ContentStore<float>::from_contents(contents, meta.at("capacity").get<Index>(),
                                                   meta.at("generation").get<std::uint64_t>());
  return state;
}

TrainingData load_training_data(const RunConfig& cfg) {
  TrainingData data;
  if (cfg.synth_enabled) {
    SynthData s = synth_toy(cfg.synth);
    data.source = std::move(s.source);
    data.wild = std::move(s.wild);
    data.eval.push_back(std::move(s.source_val));
    for (auto& d : s.unseen) data.eval.push_back(std::move(d));
  } else {
    if (cfg.source_root.empty() || cfg.wild_root.empty()) {
      throw ConfigError("datapipe", "datapipe.source and datapipe.wild are required unless synth.enabled");
    }
    std::optional<LabelMapping> mapping;
    if (!cfg.mapping.empty()) mapping = LabelMapping::from_csv(cfg.mapping);
    const auto k = static_cast<std::int32_t>(cfg.network.num_classes);
    data.source = load_dataset(cfg.source_root, mapping, DatasetRole::Source, k, cfg.ignore_id);
    data.wild = load_dataset(cfg.wild_root, std::nullopt, DatasetRole::Wild);
    for (const auto& [name, root] : cfg.eval_roots) {
      Dataset ds = load_dataset(root, mapping, DatasetRole::Eval, k, cfg.ignore_id);
      Dataset named(name, DatasetRole::Eval);
      for (std::size_t i = 0; i < ds.size(); ++i) named.add(ds.stem(i), ds.image(i), ds.label(i));
      data.eval.push_back(std::move(named));
    }
  }
  if (cfg.wild_limit > 0) data.wild = data.wild.head(static_cast<std::size_t>(cfg.wild_limit));
  return data;
}

namespace {

std::string csv_row(long iter, double lr, const LossTerms& t) {
  std::ostringstream out;
  out << iter << std::setprecision(9) << "," << lr << "," << t.l_orig << "," << t.l_sce << "," << t.l_wce << ","
      << t.l_sel << "," << t.l_scr << "," << t.total;
  return out.str();
}

}  // namespace

RunResult run_training(const RunConfig& cfg, const TrainingData& data, const fs::path& out_dir,
                       const std::optional<fs::path>& resume) {
  cfg.validate();
  fs::create_directories(out_dir);
  TrainState state = resume ? state_from_archive(Archive::load(*resume), cfg) : make_state(cfg);
  RunResult result;
  result.metrics_csv = out_dir / "metrics.csv";

  auto save_checkpoint = [&](const fs::path& path) { training_archive(state, cfg).save(path); };

  if (cfg.total_iters == 0) {
    result.last_checkpoint = out_dir / "ckpt_iter_0.wnck";
    save_checkpoint(result.last_checkpoint);
    return result;
  }
  if (state.iteration > cfg.total_iters) {
    throw ConfigError("trainharness", "checkpoint iteration exceeds total_iters");
  }

  // A resumed run keeps the logged rows before its start iteration.
  std::vector<std::string> kept;
  if (resume && fs::exists(result.metrics_csv)) {
    std::ifstream old(result.metrics_csv);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (!line.empty() && std::stol(line.substr(0, line.find(','))) < state.iteration) kept.push_back(line);
    }
  }
  std::ofstream csv(result.metrics_csv, std::ios::trunc);
  if (!csv) throw DataError("trainharness", "cannot write " + result.metrics_csv.string());
  csv << kMetricsHeader << "\n";
  for (const auto& line : kept) csv << line << "\n";

  PairSampler sampler(data.source, data.wild, cfg.batch_size, cfg.seed, cfg.augment(), cfg.ignore_id);
  const long first = state.iteration;

  // Optional producer thread; batches depend only on the iteration index, so
  // prefetching never changes the trajectory.
  std::optional<BoundedQueue<PairBatch>> queue;
  std::thread producer;
  if (cfg.prefetch_depth > 0) {
    queue.emplace(static_cast<std::size_t>(cfg.prefetch_depth));
    producer = std::thread([&] {
      for (long k = first; k < cfg.total_iters; ++k) queue->push(sampler.batch(static_cast<std::uint64_t>(k)));
      queue->close();
    });
  }
  struct Joiner {
    std::optional<BoundedQueue<PairBatch>>& q;
    std::thread& t;
    ~Joiner() {
      if (q) q->close();
      if (t.joinable()) t.join();
    }
  } joiner{queue, producer};

  for (long k = first; k < cfg.total_iters; ++k) {
    PairBatch batch;
    if (queue) {
      auto next = queue->pop();
      if (!next) throw TrainingError("trainharness", "batch producer stopped early");
      batch = std::move(*next);
    } else {
      batch = sampler.batch(static_cast<std::uint64_t>(k));
    }
    const double lr = poly_lr(k, cfg.total_iters, cfg.base_lr, cfg.power);
    const LossTerms terms = train_step(state, batch, cfg, lr);
    csv << csv_row(k, lr, terms) << "\n";
    result.history.push_back(terms);
    if (cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 && k + 1 < cfg.total_iters) {
      save_checkpoint(out_dir / ("ckpt_iter_" + std::to_string(k + 1) + ".wnck"));
    }
  }
  csv.flush();

  result.last_checkpoint = out_dir / "last.wnck";
  save_checkpoint(result.last_checkpoint);
  InferenceModel<float> model = state.assembly.strip_for_inference();
  nlohmann::json meta;
  meta["iteration"] = state.iteration;
  meta["config_digest"] = ConfigStore::digest(cfg);
  meta["network"] = spec_to_json(state.assembly.spec());
  result.model_checkpoint = out_dir / "model.wnck";
  inference_archive(model, meta).save(result.model_checkpoint);
  return result;
}

}  // namespace wildnet
