#include "cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "hanet/config.hpp"
#include "hanet/core/errors.hpp"
#include "hanet/io/image_io.hpp"
#include "hanet/stats/scenestats.hpp"
#include "hanet/toyseg/train.hpp"
#include "hanet/verify.hpp"

namespace hanet::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

// Options shared by commands that read a RunConfig.
struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<long> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "key=value config file");
    cmd->add_option("--set", overrides, "override one key, e.g. --set train.base_lr=0.02")->take_all();
    cmd->add_option("--seed", seed, "random seed");
  }

  RunConfig resolve() const {
    RunConfig cfg = path.empty() ? RunConfig() : RunConfig::load(path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.set("seed", std::to_string(*seed));
    return cfg;
  }
};

void log_config(const RunConfig& cfg, std::ostream& err, const fs::path& out_dir) {
  err << "# resolved config\n" << cfg.to_text();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "config.txt");
    f << cfg.to_text();
  }
}

// --- stats ------------------------------------------------------------------

struct StatsArgs {
  std::string dir;
  std::size_t classes = 19;
  std::string bands = "3";
  std::string axis = "both";
  std::size_t bins = 16;
  std::string suffix;
  std::string names = "auto";
  std::string out;
  std::size_t top_k = 5;
};

void write_distribution(const fs::path& dir, const std::string& stem, const stats::AxisDistribution& d,
                        const std::vector<std::string>& names) {
  io::write_csv(dir / (stem + ".csv"), d.bins, d.num_classes, d.probabilities, names);
  io::write_heatmap_pgm(dir / (stem + ".pgm"), d.bins, d.num_classes, d.probabilities, 8);
  // per-class curves, one row per bin
  std::vector<double> curves(d.bins * d.num_classes);
  for (std::size_t c = 0; c < d.num_classes; ++c)
    for (std::size_t b = 0; b < d.bins; ++b) curves[b * d.num_classes + c] = d.class_curves[c * d.bins + b];
  io::write_csv(dir / (stem + "_class_curves.csv"), d.bins, d.num_classes, curves, names);
}

int cmd_stats(const StatsArgs& a, std::ostream& out, std::ostream& err) {
  if (a.classes == 0 || a.classes > 255) throw ConfigError("--classes must lie in [1, 255]");
  if (a.bins == 0) throw ConfigError("--bins must be positive");
  if (a.axis != "h" && a.axis != "w" && a.axis != "both") throw ConfigError("--axis must be h, w or both");
  const auto bands = stats::parse_bands(a.bands);

  auto loaded = stats::read_label_directory(a.dir, a.suffix);
  if (!loaded.failures.empty()) {
    err << "error: " << loaded.failures.size() << " unreadable label file(s):\n";
    for (const auto& f : loaded.failures) err << "  " << f << "\n";
    return kInvalid;
  }
  if (loaded.maps.empty()) {
    err << "error: no label maps found under " << a.dir << "\n";
    return kInvalid;
  }
  for (const auto& m : loaded.maps) stats::validate(m, a.classes);

  std::vector<std::string> names;
  if (a.names == "auto") {
    names = stats::default_class_names(a.classes);
  } else if (a.names == "index") {
    for (std::size_t k = 0; k < a.classes; ++k) names.push_back("class" + std::to_string(k));
  } else if (a.names == "cityscapes") {
    if (a.classes != 19) throw ConfigError("--names cityscapes needs --classes 19");
    names = stats::cityscapes_class_names();
  } else {
    throw ConfigError("--names must be auto, index or cityscapes");
  }

  const auto report = stats::region_report(loaded.maps, a.classes, bands);
  std::string text = stats::format_report(report, names, a.top_k);
  text += "files: " + std::to_string(loaded.maps.size()) + "\n";
  text += "unconditional entropy: " + fmt("%.6f", report.unconditional_entropy) + " nats\n";
  text += "average conditional entropy: " + fmt("%.6f", report.average_conditional_entropy) + " nats\n";

  std::optional<stats::AxisDistribution> hd, wd;
  if (a.axis != "w") hd = stats::axis_distribution(loaded.maps, a.classes, stats::Axis::Height, a.bins);
  if (a.axis != "h") wd = stats::axis_distribution(loaded.maps, a.classes, stats::Axis::Width, a.bins);
  if (hd) text += "height-wise spread (mean pairwise JS): " + fmt("%.6f", stats::mean_pairwise_js(*hd)) + "\n";
  if (wd) text += "width-wise spread (mean pairwise JS): " + fmt("%.6f", stats::mean_pairwise_js(*wd)) + "\n";
  out << text;

  if (!a.out.empty()) {
    const fs::path dir(a.out);
    fs::create_directories(dir);
    std::ofstream(dir / "report.txt") << text;
    stats::write_report_csv(dir / "report.csv", report, names);
    if (hd) write_distribution(dir, "distribution_height", *hd, names);
    if (wd) write_distribution(dir, "distribution_width", *wd, names);
    const auto sizes = stats::mean_component_size(loaded.maps, a.classes);
    io::write_csv(dir / "components.csv", 1, a.classes, sizes, names);
  }
  return kOk;
}

// --- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
  ConfigFlags config;
  std::optional<double> epsilon;
  std::optional<std::size_t> configs;
  bool skip_model = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.config.resolve();
  if (a.epsilon) cfg.set("gradcheck.epsilon", fmt("%.17g", *a.epsilon));
  if (a.configs) cfg.set("gradcheck.configs", std::to_string(*a.configs));
  log_config(cfg, err, {});

  const double eps = cfg.get_double("gradcheck.epsilon");
  const double module_tol = cfg.get_double("gradcheck.module_tolerance");
  const double model_tol = cfg.get_double("gradcheck.model_tolerance");
  const auto seed = static_cast<std::uint64_t>(cfg.get_size("seed"));
  core::GradcheckOptions opts;
  opts.epsilon = eps;
  opts.kink_ratio = 1.0;

  out << "finite-difference epsilon " << fmt("%.3g", eps) << "\n";
  opts.tolerance = module_tol;
  const auto module = verify::hanet_suite(seed, cfg.get_size("gradcheck.configs"), opts);
  out << verify::format_suite("HANet module", module, module_tol);
  bool ok = module.passed;
  if (!a.skip_model) {
    opts.tolerance = model_tol;
    const auto model = verify::model_suite(seed, opts);
    out << verify::format_suite("toy model", model, model_tol);
    ok = ok && model.passed;
  }
  out << (ok ? "gradcheck PASS\n" : "gradcheck FAIL\n");
  return ok ? kOk : kNumerical;
}

// --- synth / train / eval -----------------------------------------------------

struct SynthArgs {
  ConfigFlags config;
  std::string out;
};

toyseg::Dataset synth_split(const RunConfig& cfg, const std::string& split) {
  const core::Rng root(cfg.get_size("seed"));
  const std::size_t n = cfg.get_size(split == "train" ? "data.train_images" : "data.val_images");
  return toyseg::synth_banded(root.child("synth." + split).seed(), n, cfg.get_size("data.height"),
                              cfg.get_size("data.width"), cfg.get_size("model.num_classes"),
                              cfg.get_double("data.noise"), cfg.get_double("data.camouflage"));
}

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = a.config.resolve();
  log_config(cfg, err, a.out);
  for (const std::string split : {"train", "val"}) {
    const auto data = synth_split(cfg, split);
    toyseg::save_dataset(fs::path(a.out) / split, data);
    out << split << ": " << data.size() << " images written to " << (fs::path(a.out) / split).string() << "\n";
  }
  return kOk;
}

// A dataset root holds train/ and val/ splits, or images/ + labels/ directly.
std::optional<toyseg::Dataset> load_split(const fs::path& root, const std::string& split) {
  if (fs::is_directory(root / split)) return toyseg::load_dataset(root / split);
  return std::nullopt;
}

toyseg::Dataset load_eval_set(const fs::path& root) {
  if (auto v = load_split(root, "val")) return *v;
  return toyseg::load_dataset(root);
}

void write_eval(const fs::path& dir, const toyseg::EvalReport& r) {
  std::ofstream(dir / "eval.txt") << toyseg::format_eval_report(r);
  std::vector<double> iou = r.per_class_iou;
  io::write_csv(dir / "per_class_iou.csv", 1, iou.size(), iou, {}, 17);
  std::vector<double> regions(r.per_region_miou.begin(), r.per_region_miou.end());
  io::write_csv(dir / "per_region_miou.csv", 1, regions.size(), regions, {"rows_0_25", "rows_25_50", "rows_50_75", "rows_75_100"}, 17);
}

struct TrainArgs {
  ConfigFlags config;
  std::string data;
  std::string out;
  std::optional<std::size_t> max_iteration;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.config.resolve();
  if (a.max_iteration) cfg.set("train.max_iteration", std::to_string(*a.max_iteration));
  const auto model_cfg = toyseg::ToySegConfig::from(cfg);
  const auto train_cfg = toyseg::TrainConfig::from(cfg);
  const fs::path dir(a.out);
  log_config(cfg, err, dir);

  toyseg::Dataset train_set, val_set;
  bool have_val = false;
  if (a.data.empty()) {
    train_set = synth_split(cfg, "train");
    val_set = synth_split(cfg, "val");
    have_val = true;
    out << "data: synthetic (" << train_set.size() << " train / " << val_set.size() << " val)\n";
  } else {
    auto t = load_split(a.data, "train");
    train_set = t ? *t : toyseg::load_dataset(a.data);
    if (auto v = load_split(a.data, "val")) {
      val_set = *v;
      have_val = true;
    }
  }

  auto model = toyseg::ToySegModel::build(model_cfg);
  out << "model: layers=" << toyseg::format_layers(model_cfg.hanet_layers) << " parameters=" << model.parameter_count()
      << "\n";
  core::Rng rng = core::Rng(cfg.get_size("seed")).child("train");
  const auto log = toyseg::train(model, train_set, train_cfg, rng, [&](const toyseg::TrainLogEntry& e) {
    if (e.iteration % 100 == 0) err << "iteration " << e.iteration << " lr " << fmt("%.3e", e.lr) << " loss " << fmt("%.5f", e.loss) << "\n";
  });
  toyseg::write_train_log(dir / "train_log.csv", log);
  toyseg::save_checkpoint(dir / "model.ckpt", model);
  out << "checkpoint: " << (dir / "model.ckpt").string() << "\n";
  if (have_val) {
    const auto report = toyseg::evaluate(model, val_set);
    write_eval(dir, report);
    out << toyseg::format_eval_report(report);
    out << "val mIoU " << fmt("%.17g", report.miou) << "\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  auto model = toyseg::load_checkpoint(a.checkpoint);
  const auto data = load_eval_set(a.data);
  const auto report = toyseg::evaluate(model, data);
  out << toyseg::format_eval_report(report);
  out << "val mIoU " << fmt("%.17g", report.miou) << "\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_eval(a.out, report);
  }
  return kOk;
}

// --- attn ---------------------------------------------------------------------

struct AttnArgs {
  std::string checkpoint;
  std::string image;
  std::string layer = "all";
  std::string out;
  std::string data;
};

int cmd_attn(const AttnArgs& a, std::ostream& out, std::ostream& err) {
  auto model = toyseg::load_checkpoint(a.checkpoint);
  const auto image = io::read_ppm(a.image);
  std::vector<toyseg::Layer> layers;
  if (a.layer == "all") {
    for (const auto& [l, p] : model.hanets) layers.push_back(l);
  } else {
    layers.push_back(toyseg::parse_layer(a.layer));
  }
  for (auto l : layers) {
    if (!model.hanets.count(l)) throw ConfigError("checkpoint has no HANet at " + toyseg::to_string(l));
  }
  if (layers.empty()) throw ConfigError("checkpoint has no HANet layers");

  core::Rng unused(0);
  auto result = toyseg::forward(model, core::constant(toyseg::to_input({&image})), core::Mode::Eval, unused);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  for (auto l : layers) {
    const auto& att = result.attention.at(l).attention.value();  // 1 x C x H
    const std::size_t c = att.dim(1), h = att.dim(2);
    std::vector<double> rows(h * c);  // height x channels
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y) rows[y * c + ch] = att[ch * h + y];
    const std::string stem = "attention_" + toyseg::to_string(l);
    io::write_csv(dir / (stem + ".csv"), h, c, rows);
    io::write_heatmap_pgm(dir / (stem + ".pgm"), h, c, rows, 8);
    out << toyseg::to_string(l) << ": " << c << " channels x " << h << " rows -> " << (dir / (stem + ".csv")).string()
        << "\n";

    if (l == toyseg::Layer::L5) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = 0;
        for (std::size_t y = 1; y < h; ++y)
          if (rows[y * c + ch] > rows[best * c + ch]) best = y;
        out << "  class " << ch << " attention peaks at row " << best << " of " << h << "\n";
      }
      if (!a.data.empty()) {
        const auto data = load_eval_set(a.data);
        std::vector<stats::LabelMap> labels;
        for (const auto& s : data) labels.push_back(s.label);
        const auto dist = stats::axis_distribution(labels, model.config.num_classes, stats::Axis::Height, h);
        std::vector<double> curves(h * c);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < h; ++y) curves[y * c + ch] = dist.class_curves[ch * h + y];
        io::write_csv(dir / "class_distribution_height.csv", h, c, curves);
        // scale each class curve to its peak so the heatmap is readable
        std::vector<double> scaled = curves;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double peak = 0.0;
          for (std::size_t y = 0; y < h; ++y) peak = std::max(peak, curves[y * c + ch]);
          for (std::size_t y = 0; y < h; ++y) scaled[y * c + ch] = peak > 0 ? curves[y * c + ch] / peak : 0.0;
        }
        io::write_heatmap_pgm(dir / "class_distribution_height.pgm", h, c, scaled, 8);
      } else {
        err << "note: pass --data to also write the height-wise class distribution\n";
      }
    }
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Height-driven attention toolkit: scene statistics, gradient checks, toy segmentation"};
  app.require_subcommand(1);

  StatsArgs stats_args;
  auto* stats_cmd = app.add_subcommand("stats", "class distributions and entropies of a label directory");
  stats_cmd->add_option("label_dir", stats_args.dir, "directory of label rasters (PGM, or PNG)")->required();
  stats_cmd->add_option("--classes", stats_args.classes, "number of classes (ids >= this are errors, 255 ignored)");
  stats_cmd->add_option("--bands", stats_args.bands, "band count, or row-fraction boundaries like 0,0.25,1");
  stats_cmd->add_option("--axis", stats_args.axis, "h, w or both");
  stats_cmd->add_option("--bins", stats_args.bins, "bins for the axis distributions");
  stats_cmd->add_option("--suffix", stats_args.suffix, "only files ending in this, e.g. _labelTrainIds.png");
  stats_cmd->add_option("--names", stats_args.names, "auto, index or cityscapes");
  stats_cmd->add_option("--top-k", stats_args.top_k, "classes shown in the text table");
  stats_cmd->add_option("--out", stats_args.out, "directory for report and distribution files");

  GradcheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of HANet and the toy model");
  gc_args.config.attach(gc_cmd);
  gc_cmd->add_option("--epsilon", gc_args.epsilon, "finite-difference step");
  gc_cmd->add_option("--configs", gc_args.configs, "number of random HANet configurations");
  gc_cmd->add_flag("--skip-model", gc_args.skip_model, "only the HANet module suite");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic height-banded dataset");
  synth_args.config.attach(synth_cmd);
  synth_cmd->add_option("--out", synth_args.out, "output directory (train/ and val/)")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train the toy segmentation model");
  train_args.config.attach(train_cmd);
  train_cmd->add_option("--data", train_args.data, "dataset root with train/ (and val/); synthetic when omitted");
  train_cmd->add_option("--out", train_args.out, "output directory")->required();
  train_cmd->add_option("--max-iteration", train_args.max_iteration, "number of SGD steps");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model.ckpt written by train")->required();
  eval_cmd->add_option("--data", eval_args.data, "dataset root (uses val/ when present)")->required();
  eval_cmd->add_option("--out", eval_args.out, "directory for eval.txt and CSVs");

  AttnArgs attn_args;
  auto* attn_cmd = app.add_subcommand("attn", "dump attention maps for one image");
  attn_cmd->add_option("--checkpoint", attn_args.checkpoint, "model.ckpt written by train")->required();
  attn_cmd->add_option("--image", attn_args.image, "PPM image")->required();
  attn_cmd->add_option("--layer", attn_args.layer, "L1..L5 or all");
  attn_cmd->add_option("--out", attn_args.out, "directory for attention CSV and PGM files")->required();
  attn_cmd->add_option("--data", attn_args.data, "dataset for the L5 height-wise class distribution");

  std::vector<std::string> argv_store{"hanet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (stats_cmd->parsed()) return cmd_stats(stats_args, out, err);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_args, out, err);
    if (synth_cmd->parsed()) return cmd_synth(synth_args, out, err);
    if (train_cmd->parsed()) return cmd_train(train_args, out, err);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, out, err);
    if (attn_cmd->parsed()) return cmd_attn(attn_args, out, err);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}

}  // namespace hanet::cli
