#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "eyedex/checkpoint.hpp"
#include "eyedex/data.hpp"
#include "eyedex/errors.hpp"
#include "eyedex/evaluation.hpp"
#include "eyedex/explain.hpp"
#include "eyedex/image_io.hpp"
#include "eyedex/synthetic.hpp"
#include "eyedex/training.hpp"

namespace eyedex::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
  if (seed) {
    return *seed;
  }
  if (const char* env = std::getenv("EYEDEX_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used == std::string(env).size()) {
        return v;
      }
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("EYEDEX_SEED is not an unsigned integer: '") + env + "'");
  }
  throw ConfigError("a seed is required: pass --seed, set it in the config file, or set EYEDEX_SEED");
}

void require_exists(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw ConfigError(what + " '" + path.string() + "' does not exist");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

json read_json(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Turns `key = value` lines of the --config file into --key=value arguments
// placed before the command-line ones, so explicit flags win.
std::vector<std::string> with_config(CLI::App& cmd, const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (!path) {
    return args;
  }
  require_exists(*path, "config file");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(*path);
  } catch (const CLI::Error& e) {
    throw ConfigError("cannot read config file '" + *path + "': " + e.what());
  }
  std::vector<std::string> injected;
  for (const auto& item : items) {
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    const CLI::Option* opt =
        item.parents.empty() && key != "config" && key != "help"
            ? cmd.get_option_no_throw("--" + key)
            : nullptr;
    if (opt == nullptr) {
      std::string valid;
      for (const auto* o : cmd.get_options()) {
        const auto& names = o->get_lnames();
        if (!names.empty() && names[0] != "help" && names[0] != "config") {
          valid += (valid.empty() ? "" : ", ") + names[0];
        }
      }
      const std::string full =
          item.parents.empty() ? item.name : item.parents.front() + "." + item.name;
      throw ConfigError("unknown config key '" + full + "' in " + *path + " (valid keys: " +
                        valid + ")");
    }
    std::string value;
    for (const auto& v : item.inputs) {
      value += (value.empty() ? "" : ",") + v;
    }
    injected.push_back("--" + key + "=" + value);
  }
  injected.insert(injected.end(), args.begin(), args.end());
  return injected;
}

void add_seed(CLI::App& cmd, std::optional<std::uint64_t>& seed) {
  cmd.add_option("--seed", seed, "RNG seed (falls back to EYEDEX_SEED)");
}

void add_config(CLI::App& cmd) {
  cmd.add_option("--config", "key = value file; flags override it")->check(CLI::ExistingFile);
}

// ingest ---------------------------------------------------------------

struct IngestArgs {
  std::string root;
  std::string out;
  std::optional<std::uint64_t> seed;
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

void setup_ingest(CLI::App& cmd, IngestArgs& a) {
  cmd.add_option("--root", a.root, "dataset root with one directory per class")->required();
  cmd.add_option("--out", a.out, "manifest CSV to write")->required();
  add_seed(cmd, a.seed);
  cmd.add_option("--train-frac", a.train);
  cmd.add_option("--val-frac", a.val);
  cmd.add_option("--test-frac", a.test);
  add_config(cmd);
}

int run_ingest(const IngestArgs& a, std::ostream& out) {
  const std::uint64_t seed = resolve_seed(a.seed);
  require_exists(a.root, "dataset root");
  if (!fs::is_directory(a.root)) {
    throw ConfigError("dataset root '" + a.root + "' is not a directory");
  }
  const Manifest m = stratified_split(scan_dataset(a.root), {a.train, a.val, a.test}, seed);
  if (fs::path(a.out).has_parent_path()) {
    fs::create_directories(fs::path(a.out).parent_path());
  }
  write_manifest(m, a.out);

  std::size_t width = 5;
  for (const auto& n : m.class_names) {
    width = std::max(width, n.size());
  }
  const auto tr = m.split_counts(Split::train);
  const auto va = m.split_counts(Split::val);
  const auto te = m.split_counts(Split::test);
  char line[256];
  const int w = static_cast<int>(width);
  std::snprintf(line, sizeof line, "%-*s  %7s  %7s  %7s  %7s\n", w, "class", "train", "val",
                "test", "total");
  out << line;
  for (std::size_t c = 0; c < m.class_names.size(); ++c) {
    std::snprintf(line, sizeof line, "%-*s  %7zu  %7zu  %7zu  %7zu\n", w,
                  m.class_names[c].c_str(), tr[c], va[c], te[c], m.counts[c]);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-*s  %7zu  %7zu  %7zu  %7zu\n", w, "total",
                m.split_size(Split::train), m.split_size(Split::val), m.split_size(Split::test),
                m.samples.size());
  out << line;
  out << "manifest written to " << a.out << "\n";
  return ok;
}

// train ----------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string variant = "vgg_nano";
  std::size_t input_size = 0;
  std::string dtype = "f32";
  std::size_t trainable_layers = 10;
  std::string init_weights;
  TrainConfig train;
  HeadConfig head;
  bool augment = true;
  AugmentParams aug;
  bool record_time = true;
};

void setup_train(CLI::App& cmd, TrainArgs& a) {
  cmd.add_option("--manifest", a.manifest, "manifest CSV from `ingest`")->required();
  cmd.add_option("--out-dir", a.out_dir, "directory for checkpoint and history")->required();
  add_seed(cmd, a.seed);
  cmd.add_option("--variant", a.variant, "vgg16, vgg19 or vgg_nano")->capture_default_str();
  cmd.add_option("--input-size", a.input_size, "square input side (0: 224, or 32 for vgg_nano)");
  cmd.add_option("--dtype", a.dtype, "f32 or f64")->capture_default_str();
  cmd.add_option("--trainable-layers", a.trainable_layers,
                 "parameterized layers trained, counted from the output")
      ->capture_default_str();
  cmd.add_option("--init-weights", a.init_weights, "checkpoint whose tensors initialize the model");
  cmd.add_option("--epochs", a.train.epochs)->capture_default_str();
  cmd.add_option("--batch-size", a.train.batch_size)->capture_default_str();
  cmd.add_option("--lr0", a.train.lr0)->capture_default_str();
  cmd.add_option("--es-patience", a.train.es_patience)->capture_default_str();
  cmd.add_option("--plateau-factor", a.train.plateau_factor)->capture_default_str();
  cmd.add_option("--plateau-patience", a.train.plateau_patience)->capture_default_str();
  cmd.add_option("--lr-min", a.train.lr_min)->capture_default_str();
  cmd.add_option("--min-delta", a.train.min_delta)->capture_default_str();
  cmd.add_option_function<std::string>(
         "--loss", [&a](const std::string& s) { a.train.loss = parse_loss_kind(s); },
         "ce or focal (default focal)");
  cmd.add_option("--focal-gamma", a.train.focal_gamma)->capture_default_str();
  cmd.add_option("--focal-alpha", a.train.focal_alpha)->capture_default_str();
  cmd.add_flag("--class-weights,!--no-class-weights", a.train.use_class_weights,
               "weight samples by N / (K * n_c)");
  cmd.add_option("--l2", a.train.l2_lambda, "L2 coefficient for the dense layers")
      ->capture_default_str();
  cmd.add_option("--dense-units", a.head.dense_units)->capture_default_str();
  cmd.add_option("--dropout", a.head.dropout_rate)->capture_default_str();
  cmd.add_flag("--augment,!--no-augment", a.augment);
  cmd.add_option("--shear", a.aug.shear_range)->capture_default_str();
  cmd.add_option("--zoom", a.aug.zoom_range)->capture_default_str();
  cmd.add_flag("--vertical-flip,!--no-vertical-flip", a.aug.vertical_flip);
  cmd.add_flag("--record-time,!--no-record-time", a.record_time,
               "store wall-clock seconds per epoch in the history");
  add_config(cmd);
}

int run_train(TrainArgs a, std::ostream& out) {
  const std::uint64_t seed = resolve_seed(a.seed);
  require_exists(a.manifest, "manifest");
  if (!a.init_weights.empty()) {
    require_exists(a.init_weights, "initial weights");
  }
  const Variant variant = parse_variant(a.variant);
  const DType dtype = parse_dtype(a.dtype);
  const std::size_t input_size =
      a.input_size != 0 ? a.input_size : (variant == Variant::vgg_nano ? 32 : 224);
  a.train.seed = seed;
  a.head.l2_lambda = a.train.l2_lambda;
  a.train.validate();
  a.head.validate();
  a.aug.validate();

  const Manifest manifest = read_manifest(a.manifest);
  Model model = build_vgg(variant, manifest.class_names.size(), a.head, input_size, dtype, seed);
  model.set_class_names(manifest.class_names);
  if (!a.init_weights.empty()) {
    load_weights_into(model, a.init_weights);
  }
  const auto unfrozen = set_trainable(model, a.trainable_layers);

  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  json run = {{"manifest", a.manifest},
              {"variant", to_string(variant)},
              {"input_size", input_size},
              {"dtype", to_string(dtype)},
              {"trainable_layers", a.trainable_layers},
              {"unfrozen", unfrozen},
              {"train", a.train.to_json()},
              {"head", {{"dense_units", a.head.dense_units}, {"dropout_rate", a.head.dropout_rate}}},
              {"augment", a.augment},
              {"shear", a.aug.shear_range},
              {"zoom", a.aug.zoom_range},
              {"vertical_flip", a.aug.vertical_flip}};
  write_text(dir / "run_config.json", run.dump(2) + "\n");

  const fs::path history_path = dir / "history.jsonl";
  std::ofstream history(history_path, std::ios::binary | std::ios::trunc);
  if (!history) {
    throw IoError("cannot open '" + history_path.string() + "' for writing");
  }

  FitOptions fo;
  fo.checkpoint_path = dir / "best.eydx";
  fo.augment = a.augment ? std::optional<AugmentParams>(a.aug) : std::nullopt;
  fo.record_seconds = a.record_time;
  fo.checkpoint_extra = {{"run", run}};
  const std::size_t epochs = a.train.epochs;
  fo.on_epoch = [&](const EpochRecord& r) {
    history << r.to_json().dump() << "\n";
    history.flush();
    if (!history) {
      throw IoError("failed writing '" + history_path.string() + "'");
    }
    char line[256];
    std::snprintf(line, sizeof line,
                  "epoch %zu/%zu  lr %.3g  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n",
                  r.epoch, epochs, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
    out << line << std::flush;
  };
  const FitResult result = fit(model, manifest, a.train, fo);
  const TrainState& st = result.state;

  json summary = {{"best_epoch", st.best_epoch},
                  {"best_val_loss", st.best_val_loss},
                  {"epochs_run", st.history.size()},
                  {"stopped_early", st.stopped_early},
                  {"final_lr", st.lr},
                  {"checkpoint", fo.checkpoint_path.string()}};
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  out << "best epoch " << st.best_epoch << " (val_loss " << fmt("%.6f", st.best_val_loss)
      << ")" << (st.stopped_early ? ", stopped early" : "") << "\n"
      << "checkpoint: " << fo.checkpoint_path.string() << "\n";
  return ok;
}

// evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string out_dir;
  std::size_t batch_size = 64;
};

void setup_evaluate(CLI::App& cmd, EvaluateArgs& a) {
  cmd.add_option("--checkpoint", a.checkpoint)->required();
  cmd.add_option("--manifest", a.manifest)->required();
  cmd.add_option("--split", a.split, "train, val or test")->capture_default_str();
  cmd.add_option("--out-dir", a.out_dir, "directory for report and confusion matrix")->required();
  cmd.add_option("--batch-size", a.batch_size)->capture_default_str();
  add_config(cmd);
}

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  require_exists(a.checkpoint, "checkpoint");
  require_exists(a.manifest, "manifest");
  const Split split = parse_split(a.split);
  if (split == Split::none) {
    throw ConfigError("--split must be train, val or test");
  }
  if (a.batch_size == 0) {
    throw ConfigError("batch size must be positive");
  }
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const Manifest manifest = read_manifest(a.manifest);
  if (manifest.class_names != ck.model.class_names()) {
    throw ConfigError("manifest classes do not match the checkpoint's classes");
  }
  if (manifest.split_size(split) == 0) {
    throw ConfigError("split '" + a.split + "' is empty in " + a.manifest);
  }
  TrainConfig tc;
  if (ck.metadata.extra.contains("train_config")) {
    tc = TrainConfig::from_json(ck.metadata.extra.at("train_config"));
  }
  LoaderOptions lo;
  lo.batch_size = a.batch_size;
  lo.input_size = ck.model.spec().input_size;
  lo.dtype = ck.model.dtype();
  BatchLoader loader(manifest, split, lo);
  const EvalResult ev = evaluate_split(ck.model, loader, tc.loss_spec(), tc.l2_lambda);

  const ConfusionMatrix cm = confusion_matrix(ev.predictions, ev.labels,
                                              ck.model.num_classes(), ck.model.class_names());
  const ClassReport report = classification_report(cm);
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  const std::string text = render_report(report, ReportFormat::text);
  write_text(dir / "report.txt", text);
  write_text(dir / "report.json", render_report(report, ReportFormat::json));
  write_text(dir / "report.csv", render_report(report, ReportFormat::csv));
  write_text(dir / "confusion.csv", render_confusion_csv(cm));
  json metrics = {{"split", to_string(split)},
                  {"loss", ev.loss},
                  {"accuracy", ev.accuracy},
                  {"num_samples", ev.labels.size()},
                  {"skipped", ev.skipped},
                  {"checkpoint_epoch", ck.metadata.epoch}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  out << text << "\nloss " << fmt("%.6f", ev.loss) << " on " << ev.labels.size() << " "
      << to_string(split) << " samples\n";
  return ok;
}

// explain --------------------------------------------------------------

struct ExplainArgs {
  std::string checkpoint;
  std::string image;
  std::string target = "predicted";
  std::string layer;
  bool occlusion = false;
  std::string out_dir;
  double alpha = 0.4;
  OcclusionOptions occ;
};

void setup_explain(CLI::App& cmd, ExplainArgs& a) {
  cmd.add_option("--checkpoint", a.checkpoint)->required();
  cmd.add_option("--image", a.image)->required();
  cmd.add_option("--class", a.target, "class name, or `predicted`")->capture_default_str();
  cmd.add_option("--layer", a.layer, "conv layer name (default: last conv layer)");
  cmd.add_flag("--occlusion", a.occlusion, "also compute the occlusion-sensitivity map");
  cmd.add_option("--out-dir", a.out_dir)->required();
  cmd.add_option("--alpha", a.alpha, "heatmap opacity")->capture_default_str();
  cmd.add_option("--patch", a.occ.patch)->capture_default_str();
  cmd.add_option("--stride", a.occ.stride)->capture_default_str();
  cmd.add_option("--fill", a.occ.fill)->capture_default_str();
  add_config(cmd);
}

void save_heatmap(const fs::path& dir, const std::string& stem, const Tensor& image,
                  const Heatmap& hm, const std::string& class_name, double alpha) {
  write_png(dir / (stem + ".png"), overlay(image, hm, alpha));
  write_text(dir / (stem + ".csv"), heatmap_csv(hm));
  write_text(dir / (stem + ".json"), heatmap_sidecar(hm, class_name).dump(2) + "\n");
}

int run_explain(const ExplainArgs& a, std::ostream& out) {
  require_exists(a.checkpoint, "checkpoint");
  require_exists(a.image, "image");
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const Model& model = ck.model;
  const auto& names = model.class_names();

  const Tensor image = preprocess(read_image(a.image), model.spec().input_size, model.dtype());
  const Tensor batch = image.reshape({1, 3, image.dim(1), image.dim(2)});
  const std::vector<double> probs = model.predict(batch).to_vector();
  const std::size_t predicted = static_cast<std::size_t>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());

  std::size_t target = predicted;
  if (a.target != "predicted") {
    const auto it = std::find(names.begin(), names.end(), a.target);
    if (it == names.end()) {
      std::string valid;
      for (const auto& n : names) {
        valid += (valid.empty() ? "" : ", ") + n;
      }
      throw ConfigError("unknown class '" + a.target + "' (valid: " + valid + ", predicted)");
    }
    target = static_cast<std::size_t>(it - names.begin());
  }

  out << "prediction: " << names[predicted] << " (" << fmt("%.4f", probs[predicted]) << ")\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    out << "  " << names[k] << " " << fmt("%.4f", probs[k]) << "\n";
  }
  if (std::count(names.begin(), names.end(), "Healthy") == 1) {
    const GateVerdict gate = anomaly_gate(probs, names);
    out << "gate: " << (gate.healthy ? "healthy" : "abnormal (" + gate.class_name + ")")
        << " confidence " << fmt("%.4f", gate.confidence) << "\n";
  } else {
    out << "gate: unavailable (no single 'Healthy' class)\n";
  }

  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  const Heatmap cam =
      gradcam(model, batch, target, a.layer.empty() ? std::nullopt : std::optional(a.layer));
  save_heatmap(dir, "gradcam", image, cam, names[target], a.alpha);
  out << "grad-cam for " << names[target] << " at " << cam.source_layer << " (raw max "
      << fmt("%.6g", cam.raw_max) << ") -> " << (dir / "gradcam.png").string() << "\n";
  if (a.occlusion) {
    const Heatmap occ = occlusion_map(model, batch, target, a.occ);
    save_heatmap(dir, "occlusion", image, occ, names[target], a.alpha);
    out << "occlusion map -> " << (dir / "occlusion.png").string() << "\n"
        << "spearman(grad-cam, occlusion) = " << fmt("%.4f", spearman(cam.values, occ.values))
        << "\n";
  }
  return ok;
}

// report ---------------------------------------------------------------

struct ReportArgs {
  std::string input;
  std::string format = "text";
  std::string out;
};

void setup_report(CLI::App& cmd, ReportArgs& a) {
  cmd.add_option("--input", a.input, "report JSON written by `evaluate`")->required();
  cmd.add_option("--format", a.format, "text or csv")->capture_default_str();
  cmd.add_option("--out", a.out, "output file (default: stdout)");
  add_config(cmd);
}

int run_report(const ReportArgs& a, std::ostream& out) {
  require_exists(a.input, "report");
  const ReportFormat format = parse_report_format(a.format);
  const std::string doc = render_report(report_from_json(read_json(a.input)), format);
  if (a.out.empty()) {
    out << doc;
  } else {
    write_text(a.out, doc);
  }
  return ok;
}

// synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::optional<std::uint64_t> seed;
  BlobOptions blobs;
};

void setup_synth(CLI::App& cmd, SynthArgs& a) {
  cmd.add_option("--out", a.out, "directory to create")->required();
  add_seed(cmd, a.seed);
  cmd.add_option("--classes", a.blobs.class_names)->delimiter(',')->capture_default_str();
  cmd.add_option("--per-class", a.blobs.per_class)->capture_default_str();
  cmd.add_option("--size", a.blobs.size)->capture_default_str();
  cmd.add_option("--noise", a.blobs.noise)->capture_default_str();
  add_config(cmd);
}

int run_synth(SynthArgs a, std::ostream& out) {
  a.blobs.seed = resolve_seed(a.seed);
  const std::size_t n = write_blob_dataset(a.out, a.blobs);
  out << "wrote " << n << " images to " << a.out << "\n";
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retinal fundus image classification: ingest, train, evaluate, explain", "eyedex"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1, 1);

  IngestArgs ingest;
  TrainArgs train;
  EvaluateArgs evaluate;
  ExplainArgs explain;
  ReportArgs report;
  SynthArgs synth;
  CLI::App* c_ingest = app.add_subcommand("ingest", "scan a dataset tree and write a split manifest");
  CLI::App* c_train = app.add_subcommand("train", "train a model and keep the best checkpoint");
  CLI::App* c_eval = app.add_subcommand("evaluate", "classification report for one split");
  CLI::App* c_explain = app.add_subcommand("explain", "prediction and Grad-CAM heatmap for an image");
  CLI::App* c_report = app.add_subcommand("report", "re-render a JSON report as text or CSV");
  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic blob dataset");
  setup_ingest(*c_ingest, ingest);
  setup_train(*c_train, train);
  setup_evaluate(*c_eval, evaluate);
  setup_explain(*c_explain, explain);
  setup_report(*c_report, report);
  setup_synth(*c_synth, synth);

  try {
    std::vector<std::string> argv = args;
    if (!argv.empty()) {
      if (CLI::App* cmd = app.get_subcommand_no_throw(argv.front())) {
        std::vector<std::string> rest(argv.begin() + 1, argv.end());
        rest = with_config(*cmd, rest);
        rest.insert(rest.begin(), argv.front());
        argv = rest;
      }
    }
    std::reverse(argv.begin(), argv.end());
    try {
      app.parse(argv);
    } catch (const CLI::ParseError& e) {
      if (app.exit(e, out, err) == 0) {
        return ok;
      }
      return usage;
    }

    if (c_ingest->parsed()) {
      return run_ingest(ingest, out);
    }
    if (c_train->parsed()) {
      return run_train(train, out);
    }
    if (c_eval->parsed()) {
      return run_evaluate(evaluate, out);
    }
    if (c_explain->parsed()) {
      return run_explain(explain, out);
    }
    if (c_report->parsed()) {
      return run_report(report, out);
    }
    if (c_synth->parsed()) {
      return run_synth(synth, out);
    }
    return usage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return numeric;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return io;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return io;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  }
}

}  // namespace eyedex::cli
