// Command-line front end: synthetic data, pretraining, fine-tuning,
// evaluation, and interpretability reports over multi-atlas connectomes.

#include <algorithm>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "mvct/interpret.hpp"
#include "mvct/io.hpp"
#include "mvct/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvct;
using mvct::io::atomic_write;
using mvct::io::format_double;
using mvct::io::load_json;

namespace {

// ---- configuration layering -------------------------------------------------
//
// Settings resolve lowest to highest: built-in desk-scale defaults, then
// --paper-defaults, then the --config file, then explicit command-line flags.
// The two lower layers are applied to the bound variables *before* CLI11
// parses, so parsed flags naturally win. The fully resolved configuration is
// echoed and saved next to every training run.

ModelConfig desk_model() {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.freq_count = 8;
  cfg.n_super = 8;
  cfg.prototypes = 4;
  cfg.decoder_layers = 2;
  return cfg;
}

void apply_paper_model(ModelConfig& cfg) {
  cfg.d = 256;
  cfg.layers = 4;
  cfg.heads = 8;
  cfg.freq_count = 64;
  cfg.d_ffn = 0;
  cfg.n_super = 50;
  cfg.prototypes = 16;
  cfg.decoder_layers = 2;
}

struct TrainOpts {
  TrainConfig tc;
  bool lr_from_file = false;
  int checkpoint_every = 0;
};

void apply_config_file(const fs::path& path, ModelConfig& cfg, TrainOpts& to) {
  json j = load_json(path);
  auto maybe = [](const json& o, const char* key, auto& out) {
    if (o.contains(key)) out = o.at(key).get<std::decay_t<decltype(out)>>();
  };
  if (j.contains("model")) {
    const json& m = j["model"];
    maybe(m, "dim", cfg.d);
    maybe(m, "layers", cfg.layers);
    maybe(m, "heads", cfg.heads);
    maybe(m, "freqs", cfg.freq_count);
    maybe(m, "ffn_dim", cfg.d_ffn);
    maybe(m, "supernodes", cfg.n_super);
    maybe(m, "prototypes", cfg.prototypes);
    maybe(m, "gcn_layers", cfg.gcn_layers);
    maybe(m, "proto_layers", cfg.proto_layers);
    maybe(m, "decoder_layers", cfg.decoder_layers);
    maybe(m, "threshold", cfg.threshold);
    maybe(m, "threshold_abs", cfg.threshold_abs);
    maybe(m, "readout", cfg.readout_source);
    maybe(m, "saliency_layer", cfg.saliency_layer);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    maybe(t, "epochs", to.tc.epochs);
    maybe(t, "batch_size", to.tc.batch_size);
    if (t.contains("lr")) {
      to.tc.base_lr = t.at("lr").get<double>();
      to.lr_from_file = true;
    }
    maybe(t, "warmup_epochs", to.tc.warmup_epochs);
    maybe(t, "dropout", to.tc.dropout);
    maybe(t, "clip_norm", to.tc.clip_norm);
    maybe(t, "val_fraction", to.tc.val_fraction);
    maybe(t, "mask_ratio", to.tc.pretrain.mask_ratio);
    maybe(t, "entropy_sign", to.tc.pretrain.entropy_sign);
    maybe(t, "shared_mask", to.tc.pretrain.shared_mask);
    maybe(t, "checkpoint_every", to.checkpoint_every);
  }
}

// Pre-parse scan: which subcommand, and the values of --config /
// --paper-defaults, before CLI11 runs.
struct PreScan {
  std::string subcommand;
  fs::path config_file;
  bool paper = false;
};

PreScan
pre_scan(int argc, char** argv) {
  PreScan out;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (out.subcommand.empty() && !a.empty() && a[0] != '-') {
      out.subcommand = a;
      continue;
    }
    if (a == "--paper-defaults") out.paper = true;
    if (a == "--config" && i + 1 < argc) out.config_file = argv[i + 1];
    if (a.rfind("--config=", 0) == 0)
      out.config_file = a.substr(std::string("--config=").size());
  }
  return out;
}

void add_model_flags(CLI::App* app, ModelConfig& cfg) {
  app->add_option("--dim", cfg.d, "embedding width")->capture_default_str();
  app->add_option("--layers", cfg.layers, "encoder layers")
      ->capture_default_str();
  app->add_option("--heads", cfg.heads, "attention heads per layer")
      ->capture_default_str();
  app->add_option("--freqs", cfg.freq_count,
                  "learnable coordinate frequencies (feature dim is 2x)")
      ->capture_default_str();
  app->add_option("--ffn-dim", cfg.d_ffn, "feed-forward width (0 = 4x dim)")
      ->capture_default_str();
  app->add_option("--supernodes", cfg.n_super, "shared supernode count")
      ->capture_default_str();
  app->add_option("--prototypes", cfg.prototypes,
                  "prototype count for cross-view agreement")
      ->capture_default_str();
  app->add_option("--gcn-layers", cfg.gcn_layers,
                  "graph-conv layers per pooling stack")
      ->capture_default_str();
  app->add_option("--decoder-layers", cfg.decoder_layers,
                  "reconstruction decoder depth")
      ->capture_default_str();
  app->add_option("--threshold", cfg.threshold,
                  "edge threshold for the pooling graph")
      ->capture_default_str();
  app->add_flag("--threshold-abs", cfg.threshold_abs,
                "threshold on |connectivity| instead of signed values");
  app->add_option("--readout", cfg.readout_source,
                  "classifier readout: nodes | supernodes")
      ->capture_default_str();
  app->add_option("--saliency-layer", cfg.saliency_layer,
                  "attention layers for saliency: last | mean_all")
      ->capture_default_str();
}

// ---- small shared helpers ---------------------------------------------------

AtlasRegistry open_registry(const fs::path& dir) {
  AtlasRegistry reg;
  reg.load_dir(dir);
  require(reg.size() > 0, "no atlas files (*.json) in " + dir.string());
  return reg;
}

json train_to_json(const TrainConfig& tc, int checkpoint_every) {
  return json{{"epochs", tc.epochs},
              {"batch_size", tc.batch_size},
              {"lr", tc.base_lr},
              {"warmup_epochs", tc.warmup_epochs},
              {"seed", tc.seed},
              {"dropout", tc.dropout},
              {"clip_norm", tc.clip_norm},
              {"val_fraction", tc.val_fraction},
              {"mask_ratio", tc.pretrain.mask_ratio},
              {"entropy_sign", tc.pretrain.entropy_sign},
              {"shared_mask", tc.pretrain.shared_mask},
              {"checkpoint_every", checkpoint_every}};
}

json epoch_json(const EpochReport& r) {
  json j{{"phase", r.phase},
         {"epoch", r.epoch},
         {"lr", r.lr},
         {"loss", r.loss},
         {"reconstruction", r.rec},
         {"consistency", r.cc},
         {"entropy", r.ent}};
  if (r.train_accuracy) j["train_accuracy"] = *r.train_accuracy;
  if (r.val_auc) j["val_auc"] = *r.val_auc;
  return j;
}

void write_metrics(const fs::path& path,
                   const std::vector<EpochReport>& history) {
  std::string body;
  for (const auto& r : history) body += epoch_json(r).dump() + "\n";
  atomic_write(path, body);
}

Dataset filter_views(const Dataset& in, const std::vector<std::string>& keep,
                     int* dropped_subjects) {
  Dataset out;
  out.name = in.name;
  out.num_classes = in.num_classes;
  if (dropped_subjects) *dropped_subjects = 0;
  for (const auto& s : in.samples) {
    MultiViewSample t;
    t.subject_id = s.subject_id;
    t.label = s.label;
    for (const auto& [atlas_id, conn] : s.views)
      if (std::find(keep.begin(), keep.end(), atlas_id) != keep.end())
        t.views[atlas_id] = conn;
    if (t.views.empty()) {
      if (dropped_subjects) ++(*dropped_subjects);
      continue;
    }
    out.samples.push_back(std::move(t));
  }
  return out;
}

// ---- subcommand bodies ------------------------------------------------------

int cmd_atlas_validate(const std::vector<fs::path>& files) {
  int bad = 0;
  for (const fs::path& p : files) {
    try {
      Atlas a = load_atlas(p);
      std::cout << p.string() << ": ok  id=" << a.id
                << "  rois=" << a.roi_count()
                << "  max_distance_mm=" << a.dis_max << "\n";
    } catch (const std::exception& e) {
      std::cout << p.string() << ": INVALID  " << e.what() << "\n";
      ++bad;
    }
  }
  return bad == 0 ? 0 : 1;
}

int cmd_atlas_synth(const std::string& id, int rois, std::uint64_t seed,
                    double extent, const fs::path& out) {
  Mat box(2, 3);
  box << 0, 0, 0, extent, extent, extent;
  Atlas a = synth_atlas(id, rois, seed, box);
  save_atlas(out, a);
  std::cout << "wrote " << out.string() << " (" << rois << " ROIs)\n";
  return 0;
}

int cmd_data_synth(const fs::path& config, const fs::path& atlas_dir,
                   std::uint64_t seed, const fs::path& out) {
  AtlasRegistry reg = open_registry(atlas_dir);
  SynthConfig sc = parse_synth_config(config);
  Dataset ds = synth_generate(sc, seed, reg);
  save_dataset(out, ds);
  std::cout << "wrote " << ds.samples.size() << " subjects to " << out.string()
            << "\n";
  return 0;
}

struct PretrainArgs {
  std::vector<fs::path> data_dirs;
  fs::path atlas_dir, out_dir, resume_dir;
  std::vector<std::string> atlas_filter;
  ModelConfig cfg = desk_model();
  TrainOpts to;
  std::uint64_t seed = 0;
  bool seed_given = false, resume_given = false;
};

int cmd_pretrain(PretrainArgs& a) {
  AtlasRegistry reg = open_registry(a.atlas_dir);

  std::vector<Dataset> datasets;
  for (const fs::path& d : a.data_dirs) datasets.push_back(load_dataset(d, reg));
  if (!a.atlas_filter.empty())
    for (auto& ds : datasets) {
      int dropped = 0;
      ds = filter_views(ds, a.atlas_filter, &dropped);
      if (dropped > 0)
        std::cout << "note: " << dropped << " subjects in " << ds.name
                  << " lost all views to --atlases and were dropped\n";
      require(!ds.samples.empty(),
              "dataset " + ds.name + " is empty after --atlases");
    }

  std::vector<std::string> used;
  for (const auto& ds : datasets)
    for (const std::string& id : ds.atlas_ids())
      if (std::find(used.begin(), used.end(), id) == used.end())
        used.push_back(id);
  std::sort(used.begin(), used.end());
  require(!used.empty(), "no views to pretrain on");

  ModelState ms;
  OptimState opt;
  CheckpointMeta meta;
  int start_epoch = 0;
  if (a.resume_given) {
    LoadedCheckpoint lc = load_checkpoint(a.resume_dir / "model");
    require(lc.opt.has_value(), "checkpoint in " + a.resume_dir.string() +
                                    " has no optimizer state; cannot resume");
    ms = std::move(lc.model);
    opt = std::move(*lc.opt);
    meta = lc.meta;
    start_epoch = meta.epoch;
    a.to.tc.seed = meta.rng_seed;
    for (const std::string& id : used)
      require(ms.has_atlas(id), "resumed model does not know atlas '" + id +
                                    "'; it was not part of the original run");
    std::cout << "resuming after " << start_epoch << " completed epochs\n";
  } else {
    require(a.seed_given, "--seed is required when starting a new run");
    std::vector<const Atlas*> init_atlases;
    for (const std::string& id : used) init_atlases.push_back(&reg.get(id));
    ms = ModelState::init(a.cfg, init_atlases, a.seed);
    a.to.tc.seed = a.seed;
    meta.rng_seed = a.seed;
  }

  fs::create_directories(a.out_dir);
  json resolved{{"command", "pretrain"},
                {"model", ms.cfg.to_json()},
                {"train", train_to_json(a.to.tc, a.to.checkpoint_every)},
                {"atlases", used},
                {"parameters", ms.param_count()}};
  std::cout << resolved.dump(2) << "\n";
  atomic_write(a.out_dir / "config.json", resolved.dump(2) + "\n");

  std::vector<const Dataset*> ptrs;
  for (const auto& ds : datasets) ptrs.push_back(&ds);

  std::vector<EpochReport> history;
  fs::path ckpt_dir = a.out_dir / "checkpoints";
  MetricsSink sink = [&](const EpochReport& r) {
    history.push_back(r);
    meta.loss_history.push_back(r.loss);
    meta.epoch = r.epoch + 1;
    write_metrics(a.out_dir / "metrics.jsonl", history);
    save_checkpoint(a.out_dir / "model", ms, meta, &opt);
    std::cout << "epoch " << r.epoch << "  loss " << r.loss << "  (rec "
              << r.rec << ", agree " << r.cc << ", ent " << r.ent << ")\n";
  };
  CheckpointFn ckpt;
  if (a.to.checkpoint_every > 0)
    ckpt = [&](int e) {
      if ((e + 1) % a.to.checkpoint_every == 0) {
        fs::create_directories(ckpt_dir);
        save_checkpoint(ckpt_dir / ("epoch_" + std::to_string(e)), ms, meta,
                        &opt);
      }
    };

  pretrain(ms, reg, ptrs, a.to.tc, opt, start_epoch, sink, ckpt);
  std::cout << "model written to " << (a.out_dir / "model.bin").string()
            << "\n";
  return 0;
}

struct FinetuneArgs {
  fs::path model_dir, data_dir, atlas_dir, out_dir;
  ModelConfig cfg = desk_model();
  TrainOpts to;
  std::uint64_t seed = 0;
  bool model_given = false, lr_given = false;
};

int cmd_finetune(FinetuneArgs& a) {
  AtlasRegistry reg = open_registry(a.atlas_dir);
  Dataset ds = load_dataset(a.data_dir, reg);

  ModelState base = a.model_given
                        ? load_checkpoint(a.model_dir / "model").model
                        : ModelState::init(a.cfg, {}, a.seed);
  a.to.tc.seed = a.seed;

  std::vector<double> grid;
  if (a.lr_given || a.to.lr_from_file)
    grid = {a.to.tc.base_lr};
  else
    grid = {1e-3, 5e-4, 2e-4, 1e-4, 5e-5};

  fs::create_directories(a.out_dir);
  json resolved{{"command", "finetune"},
                {"model", base.cfg.to_json()},
                {"train", train_to_json(a.to.tc, 0)},
                {"lr_grid", grid},
                {"from_model", a.model_given ? a.model_dir.string() : ""}};
  std::cout << resolved.dump(2) << "\n";
  atomic_write(a.out_dir / "config.json", resolved.dump(2) + "\n");

  double best_auc = -1.0;
  std::size_t best_i = 0;
  json grid_report = json::array();
  std::optional<ModelState> best_model;
  std::vector<EpochReport> best_history;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ModelState ms = base;  // both phases tune the full network
    TrainConfig tc = a.to.tc;
    tc.base_lr = grid[i];
    std::vector<EpochReport> history;
    MetricsSink sink = [&](const EpochReport& r) { history.push_back(r); };
    FinetuneResult res = finetune(ms, reg, ds, tc, sink);
    if (grid.size() > 1)
      write_metrics(a.out_dir /
                        ("grid_lr_" + format_double(grid[i]) + ".metrics.jsonl"),
                    history);
    grid_report.push_back(json{{"lr", grid[i]},
                               {"best_val_auc", res.best_val_auc},
                               {"best_epoch", res.best_epoch},
                               {"train_subjects", res.n_train},
                               {"val_subjects", res.n_val},
                               {"unlabeled_skipped", res.skipped_unlabeled}});
    std::cout << "lr " << grid[i] << ": best val AUC " << res.best_val_auc
              << " at epoch " << res.best_epoch << "\n";
    if (res.best_val_auc > best_auc) {
      best_auc = res.best_val_auc;
      best_i = i;
      best_model = std::move(ms);
      best_history = std::move(history);
    }
  }
  write_metrics(a.out_dir / "metrics.jsonl", best_history);
  atomic_write(
      a.out_dir / "grid.json",
      json{{"runs", grid_report}, {"selected_lr", grid[best_i]}}.dump(2) +
          "\n");
  CheckpointMeta meta;
  meta.rng_seed = a.seed;
  meta.epoch = a.to.tc.epochs;
  save_checkpoint(a.out_dir / "model", *best_model, meta, nullptr);
  std::cout << "selected lr " << grid[best_i] << " (val AUC " << best_auc
            << "); model written to " << (a.out_dir / "model.bin").string()
            << "\n";
  return 0;
}

int cmd_evaluate(const fs::path& model_dir, const fs::path& data_dir,
                 const fs::path& atlas_dir,
                 const std::vector<std::string>& atlases, const fs::path& out,
                 bool out_given) {
  AtlasRegistry reg = open_registry(atlas_dir);
  ModelState ms = load_checkpoint(model_dir / "model").model;
  Dataset ds = load_dataset(data_dir, reg);
  int dropped = 0;
  if (!atlases.empty()) ds = filter_views(ds, atlases, &dropped);
  require(!ds.samples.empty(), "no subjects left to evaluate");
  EvalReport rep = evaluate(ms, reg, ds);
  json j{{"dataset", ds.name},
         {"atlases", atlases.empty() ? ds.atlas_ids() : atlases},
         {"subjects_evaluated", rep.n_eval},
         {"subjects_unlabeled", rep.n_skipped},
         {"subjects_dropped_by_filter", dropped},
         {"accuracy", rep.accuracy},
         {"auc", rep.auc},
         {"per_class_auc", rep.per_class_auc}};
  std::cout << j.dump(2) << "\n";
  if (out_given) atomic_write(out, j.dump(2) + "\n");
  return 0;
}

int cmd_interpret_edges(const fs::path& model_dir, const fs::path& atlas_dir,
                        const std::string& atlas_id, int k,
                        const fs::path& out) {
  AtlasRegistry reg = open_registry(atlas_dir);
  ModelState ms = load_checkpoint(model_dir / "model").model;
  const Atlas& atlas = reg.get(atlas_id);
  require(ms.has_atlas(atlas_id),
          "model was never trained with atlas '" + atlas_id + "'");
  auto edges = top_bias_edges(ms, atlas, k);
  std::string csv = "layer,head,rank,roi_i,roi_j,distance_mm,bias\n";
  for (const auto& e : edges)
    csv += std::to_string(e.layer) + "," + std::to_string(e.head) + "," +
           std::to_string(e.rank) + "," + atlas.roi_names[std::size_t(e.i)] +
           "," + atlas.roi_names[std::size_t(e.j)] + "," +
           format_double(e.distance) + "," + format_double(e.bias) + "\n";
  atomic_write(out, csv);
  std::cout << "wrote " << edges.size() << " edges to " << out.string()
            << "\n";
  for (int l = 0; l < ms.cfg.layers; ++l)
    for (int h = 0; h < ms.cfg.heads; ++h)
      std::cout << "layer " << l << " head " << h
                << " mean selected distance "
                << format_double(mean_selected_distance(edges, l, h))
                << " mm\n";
  return 0;
}

int cmd_interpret_saliency(const fs::path& model_dir, const fs::path& data_dir,
                           const fs::path& atlas_dir,
                           const std::string& subject,
                           const std::string& atlas_id, int k,
                           const fs::path& out) {
  AtlasRegistry reg = open_registry(atlas_dir);
  ModelState ms = load_checkpoint(model_dir / "model").model;
  Dataset ds = load_dataset(data_dir, reg);
  const MultiViewSample* sample = nullptr;
  for (const auto& s : ds.samples)
    if (s.subject_id == subject) sample = &s;
  require(sample != nullptr,
          "subject '" + subject + "' not found in " + data_dir.string());
  std::string id = atlas_id;
  if (id.empty()) {
    require(sample->views.size() == 1,
            "subject has " + std::to_string(sample->views.size()) +
                " views; pick one with --atlas");
    id = sample->views.begin()->first;
  }
  auto vit = sample->views.find(id);
  require(vit != sample->views.end(),
          "subject '" + subject + "' has no view for atlas '" + id + "'");
  const Atlas& atlas = reg.get(id);
  auto rois = salient_rois(ms, atlas, vit->second, k);
  if (k > atlas.roi_count())
    std::cout << "note: only " << atlas.roi_count() << " ROIs available\n";
  std::string csv = "subject,rank,roi,x,y,z,score\n";
  for (const auto& r : rois)
    csv += subject + "," + std::to_string(r.rank) + "," +
           atlas.roi_names[std::size_t(r.roi)] + "," +
           format_double(atlas.coords(r.roi, 0)) + "," +
           format_double(atlas.coords(r.roi, 1)) + "," +
           format_double(atlas.coords(r.roi, 2)) + "," +
           format_double(r.score) + "\n";
  atomic_write(out, csv);
  std::cout << "wrote " << rois.size() << " ROIs to " << out.string() << "\n";
  return 0;
}

int cmd_info(const fs::path& model_dir) {
  LoadedCheckpoint lc = load_checkpoint(model_dir / "model");
  json j{{"config", lc.model.cfg.to_json()},
         {"atlases", lc.model.atlas_ids},
         {"completed_epochs", lc.meta.epoch},
         {"parameters", lc.model.param_count()}};
  json comp;
  for (const auto& [k, v] : lc.model.component_counts()) comp[k] = v;
  j["parameters_by_component"] = comp;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_verify() {
  auto results = run_self_checks();
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name;
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << "\n";
    if (!r.pass) ++failed;
  }
  std::cout << (failed == 0 ? "all checks passed"
                            : std::to_string(failed) + " check(s) failed")
            << "\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Multi-atlas brain connectome model: self-supervised pretraining, "
      "fine-tuning, evaluation, and interpretability reports"};
  app.require_subcommand(1);

  PreScan scan = pre_scan(argc, argv);

  // ---- atlas ----
  auto* atlas_cmd = app.add_subcommand("atlas", "atlas file utilities");
  atlas_cmd->require_subcommand(1);
  auto* av = atlas_cmd->add_subcommand("validate", "check atlas JSON files");
  std::vector<fs::path> av_files;
  av->add_option("files", av_files, "atlas JSON files")->required();
  auto* as = atlas_cmd->add_subcommand(
      "synth", "generate a uniformly scattered toy atlas");
  std::string as_id = "synth";
  int as_rois = 16;
  std::uint64_t as_seed = 0;
  double as_extent = 120.0;
  fs::path as_out;
  as->add_option("--id", as_id, "atlas id")->capture_default_str();
  as->add_option("--rois", as_rois, "ROI count")->capture_default_str();
  as->add_option("--seed", as_seed, "coordinate seed")->required();
  as->add_option("--extent", as_extent, "coordinate box edge, mm")
      ->capture_default_str();
  as->add_option("--out", as_out, "output JSON path")->required();

  // ---- data ----
  auto* data_cmd = app.add_subcommand("data", "dataset utilities");
  data_cmd->require_subcommand(1);
  auto* dsyn = data_cmd->add_subcommand(
      "synth", "generate a planted-signal multi-view dataset");
  fs::path dsyn_cfg, dsyn_atlas_dir, dsyn_out;
  std::uint64_t dsyn_seed = 0;
  dsyn->add_option("--config", dsyn_cfg, "generator config JSON")->required();
  dsyn->add_option("--atlas-dir", dsyn_atlas_dir, "directory of atlas JSONs")
      ->required();
  dsyn->add_option("--seed", dsyn_seed, "generator seed")->required();
  dsyn->add_option("--out", dsyn_out, "output dataset directory")->required();

  // ---- pretrain ----
  PretrainArgs pa;
  pa.to.tc.epochs = 20;
  pa.to.tc.batch_size = 8;
  pa.to.tc.base_lr = 1e-3;
  pa.to.tc.dropout = 0.0;
  pa.to.tc.clip_norm = 5.0;
  fs::path pre_config;
  bool pre_paper = false;
  if (scan.subcommand == "pretrain") {
    if (scan.paper) {
      apply_paper_model(pa.cfg);
      pa.to.tc.base_lr = 1e-4;
      pa.to.tc.dropout = 0.5;
      pa.to.tc.clip_norm = 5.0;
    }
    if (!scan.config_file.empty())
      apply_config_file(scan.config_file, pa.cfg, pa.to);
  }
  auto* pre = app.add_subcommand(
      "pretrain", "self-supervised training over unlabeled subjects");
  pre->add_option("--data", pa.data_dirs, "dataset directory (repeatable)")
      ->required();
  pre->add_option("--atlas-dir", pa.atlas_dir, "directory of atlas JSONs")
      ->required();
  pre->add_option("--atlases", pa.atlas_filter,
                  "restrict training to these atlas views");
  auto* pre_seed = pre->add_option(
      "--seed", pa.seed, "initialization + training seed (new runs)");
  pre->add_option("--out", pa.out_dir, "output model directory")->required();
  pre->add_option("--config", pre_config,
                  "JSON config file {\"model\":{...},\"train\":{...}}; "
                  "explicit flags win");
  auto* pre_resume = pre->add_option(
      "--resume", pa.resume_dir,
      "model directory to continue from (restores optimizer state and the "
      "original seed; remaining epochs match an uninterrupted run exactly)");
  pre->add_flag("--paper-defaults", pre_paper,
                "published-scale model and schedule (dim 256, 4 layers, 8 "
                "heads, 64 freqs, 50 supernodes, 16 prototypes, lr 1e-4, "
                "dropout 0.5, clip 5); --config and flags still override");
  add_model_flags(pre, pa.cfg);
  pre->add_option("--epochs", pa.to.tc.epochs, "epochs")
      ->capture_default_str();
  pre->add_option("--batch-size", pa.to.tc.batch_size, "subjects per step")
      ->capture_default_str();
  pre->add_option("--lr", pa.to.tc.base_lr, "constant learning rate")
      ->capture_default_str();
  pre->add_option("--dropout", pa.to.tc.dropout,
                  "dropout on attention weights and hidden FFN units")
      ->capture_default_str();
  pre->add_option("--clip-norm", pa.to.tc.clip_norm,
                  "global gradient-norm cap (0 = off)")
      ->capture_default_str();
  pre->add_option("--mask-ratio", pa.to.tc.pretrain.mask_ratio,
                  "fraction of supernodes hidden from the decoder")
      ->capture_default_str();
  pre->add_option("--entropy-sign", pa.to.tc.pretrain.entropy_sign,
                  "+1 sharpens assignments, -1 spreads them")
      ->capture_default_str();
  pre->add_flag("--shared-mask", pa.to.tc.pretrain.shared_mask,
                "reuse one supernode mask across a subject's views");
  pre->add_option("--checkpoint-every", pa.to.checkpoint_every,
                  "also keep checkpoints/epoch_<k> every k epochs (0 = off)")
      ->capture_default_str();

  // ---- finetune ----
  FinetuneArgs fa;
  fa.to.tc.epochs = 50;
  fa.to.tc.batch_size = 8;
  fa.to.tc.warmup_epochs = 5;
  fa.to.tc.dropout = 0.0;
  fa.to.tc.clip_norm = 0.0;
  fa.to.tc.val_fraction = 0.2;
  fs::path fin_config;
  bool fin_paper = false;
  if (scan.subcommand == "finetune") {
    if (scan.paper) apply_paper_model(fa.cfg);
    if (!scan.config_file.empty())
      apply_config_file(scan.config_file, fa.cfg, fa.to);
  }
  auto* fin = app.add_subcommand(
      "finetune", "supervised training of the classification head + backbone");
  auto* fin_model = fin->add_option(
      "--model", fa.model_dir,
      "pretrained model directory; omit to train from scratch");
  fin->add_option("--data", fa.data_dir, "labeled dataset directory")
      ->required();
  fin->add_option("--atlas-dir", fa.atlas_dir, "directory of atlas JSONs")
      ->required();
  fin->add_option("--seed", fa.seed,
                  "split/training seed (and init seed from scratch)")
      ->required();
  fin->add_option("--out", fa.out_dir, "output model directory")->required();
  fin->add_option("--config", fin_config,
                  "JSON config file; explicit flags win");
  fin->add_flag("--paper-defaults", fin_paper,
                "published-scale model for from-scratch runs");
  add_model_flags(fin, fa.cfg);
  fin->add_option("--epochs", fa.to.tc.epochs, "epochs")
      ->capture_default_str();
  fin->add_option("--batch-size", fa.to.tc.batch_size, "subjects per step")
      ->capture_default_str();
  auto* fin_lr = fin->add_option(
      "--lr", fa.to.tc.base_lr,
      "peak learning rate; omit to sweep 1e-3, 5e-4, 2e-4, 1e-4, 5e-5 and "
      "keep the best validation AUC");
  fin->add_option("--warmup", fa.to.tc.warmup_epochs,
                  "linear warmup epochs before cosine decay")
      ->capture_default_str();
  fin->add_option("--dropout", fa.to.tc.dropout, "dropout rate")
      ->capture_default_str();
  fin->add_option("--clip-norm", fa.to.tc.clip_norm,
                  "global gradient-norm cap (0 = off)")
      ->capture_default_str();
  fin->add_option("--val-fraction", fa.to.tc.val_fraction,
                  "stratified share of labeled subjects held out")
      ->capture_default_str();

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "accuracy / AUC report");
  fs::path ev_model, ev_data, ev_atlas_dir, ev_out;
  std::vector<std::string> ev_atlases;
  ev->add_option("--model", ev_model, "model directory")->required();
  ev->add_option("--data", ev_data, "labeled dataset directory")->required();
  ev->add_option("--atlas-dir", ev_atlas_dir, "directory of atlas JSONs")
      ->required();
  ev->add_option("--atlases", ev_atlases, "evaluate these views only");
  auto* ev_out_opt = ev->add_option("--out", ev_out, "also write JSON here");

  // ---- interpret ----
  auto* interp = app.add_subcommand("interpret", "model inspection reports");
  interp->require_subcommand(1);
  auto* ie = interp->add_subcommand(
      "edges", "strongest learned spatial-prior edges per layer and head");
  fs::path ie_model, ie_atlas_dir, ie_out;
  std::string ie_atlas;
  int ie_k = 20;
  ie->add_option("--model", ie_model, "model directory")->required();
  ie->add_option("--atlas-dir", ie_atlas_dir, "directory of atlas JSONs")
      ->required();
  ie->add_option("--atlas", ie_atlas, "atlas id")->required();
  ie->add_option("-k,--top", ie_k, "edges per (layer, head)")
      ->capture_default_str();
  ie->add_option("--out", ie_out, "output CSV path")->required();
  auto* is = interp->add_subcommand("saliency",
                                    "most-attended ROIs for one subject view");
  fs::path is_model, is_data, is_atlas_dir, is_out;
  std::string is_subject, is_atlas;
  int is_k = 5;
  is->add_option("--model", is_model, "model directory")->required();
  is->add_option("--data", is_data, "dataset directory")->required();
  is->add_option("--atlas-dir", is_atlas_dir, "directory of atlas JSONs")
      ->required();
  is->add_option("--subject", is_subject, "subject id")->required();
  is->add_option("--atlas", is_atlas,
                 "which view (optional when the subject has one)");
  is->add_option("-k,--top", is_k, "ROI count")->capture_default_str();
  is->add_option("--out", is_out, "output CSV path")->required();

  // ---- info / verify ----
  auto* info = app.add_subcommand("info", "print a model's configuration");
  fs::path info_model;
  info->add_option("--model", info_model, "model directory")->required();
  auto* ver = app.add_subcommand("verify", "run fast structural self-checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (av->parsed()) return cmd_atlas_validate(av_files);
    if (as->parsed())
      return cmd_atlas_synth(as_id, as_rois, as_seed, as_extent, as_out);
    if (dsyn->parsed())
      return cmd_data_synth(dsyn_cfg, dsyn_atlas_dir, dsyn_seed, dsyn_out);
    if (pre->parsed()) {
      pa.seed_given = pre_seed->count() > 0;
      pa.resume_given = pre_resume->count() > 0;
      return cmd_pretrain(pa);
    }
    if (fin->parsed()) {
      fa.model_given = fin_model->count() > 0;
      fa.lr_given = fin_lr->count() > 0;
      return cmd_finetune(fa);
    }
    if (ev->parsed())
      return cmd_evaluate(ev_model, ev_data, ev_atlas_dir, ev_atlases, ev_out,
                          ev_out_opt->count() > 0);
    if (ie->parsed())
      return cmd_interpret_edges(ie_model, ie_atlas_dir, ie_atlas, ie_k,
                                 ie_out);
    if (is->parsed())
      return cmd_interpret_saliency(is_model, is_data, is_atlas_dir,
                                    is_subject, is_atlas, is_k, is_out);
    if (info->parsed()) return cmd_info(info_model);
    if (ver->parsed()) return cmd_verify();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
