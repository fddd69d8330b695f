#include "doctest.h"

#include <cmath>

#include "eyedex/checkpoint.hpp"
#include "eyedex/errors.hpp"
#include "eyedex/log.hpp"
#include "eyedex/synthetic.hpp"
#include "eyedex/training.hpp"
#include "oracles.hpp"

using namespace eyedex;
namespace fs = std::filesystem;

namespace {

struct QuietLog {
  log::Sink previous;
  QuietLog() : previous(log::set_sink([](log::Level, const std::string&) {})) {}
  ~QuietLog() { log::set_sink(previous); }
};

// Small blob dataset shared by the fit tests.
const Manifest& blob_manifest() {
  static oracle::ScratchDir dir("fit");
  static const Manifest m = [] {
    BlobOptions opts;
    opts.per_class = 20;
    opts.seed = 3;
    write_blob_dataset(dir.path / "blobs", opts);
    return stratified_split(scan_dataset(dir.path / "blobs"), {}, 3);
  }();
  return m;
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr0 = 1e-3;
  c.seed = 5;
  return c;
}

Model small_model(DType dtype = DType::f64) {
  HeadConfig head;
  head.dense_units = 16;
  return build_vgg(Variant::vgg_nano, 3, head, 32, dtype, 5);
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("first Adam step moves each weight by about lr") {
    std::map<std::string, Tensor> params{{"w", Tensor::from_values({3}, {1, 2, 3}, DType::f64)}};
    std::map<std::string, Tensor> grads{{"w", Tensor::from_values({3}, {0.5, -2, 1e-3}, DType::f64)}};
    Adam adam;
    adam.step(params, grads, 0.01);
    CHECK(adam.steps() == 1);
    const auto w = params.at("w").to_vector();
    CHECK(std::abs((1 - w[0]) - 0.01) < 1e-6);
    CHECK(std::abs((w[1] - 2) - 0.01) < 1e-6);
    CHECK(std::abs((3 - w[2]) - 0.01) < 1e-6);

    std::map<std::string, Tensor> zero{{"w", Tensor::zeros({3}, DType::f64)}};
    std::map<std::string, Tensor> p2{{"w", Tensor::from_values({3}, {1, 2, 3}, DType::f64)}};
    Adam fresh;
    fresh.step(p2, zero, 0.01);
    CHECK(p2.at("w").to_vector() == std::vector<double>{1, 2, 3});
  }

  TEST_CASE("Adam minimizes a quadratic") {
    std::map<std::string, Tensor> params{{"t", Tensor::from_values({1}, {0.0}, DType::f64)}};
    Adam adam;
    for (int i = 0; i < 200; ++i) {
      const double t = params.at("t").item();
      adam.step(params, {{"t", Tensor::from_values({1}, {2.0 * (t - 3.0)}, DType::f64)}}, 0.1);
    }
    CHECK(std::abs(params.at("t").item() - 3.0) < 0.1);
  }

  TEST_CASE("non-finite gradient leaves every tensor untouched") {
    std::map<std::string, Tensor> params{{"a", Tensor::full({2}, 1.0, DType::f64)},
                                         {"b", Tensor::full({2}, 1.0, DType::f64)}};
    std::map<std::string, Tensor> grads{{"a", Tensor::full({2}, 1.0, DType::f64)},
                                        {"b", Tensor::from_values({2}, {1.0, NAN}, DType::f64)}};
    Adam adam;
    try {
      adam.step(params, grads, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }
    CHECK(params.at("a").to_vector() == std::vector<double>{1, 1});
    CHECK(adam.steps() == 0);
  }

  TEST_CASE("plateau halves after three flat epochs and respects the floor") {
    PlateauScheduler p(1e-4, 0.5, 3, 1e-8, 1e-4);
    std::vector<double> lrs;
    for (int i = 0; i < 5; ++i) {
      lrs.push_back(p.on_epoch_end(1.0));
    }
    CHECK(lrs[2] == 1e-4);
    CHECK(lrs[3] == 5e-5);
    CHECK(lrs[4] == 5e-5);

    PlateauScheduler floor(1e-4, 0.5, 1, 1e-8, 1e-4);
    double lr = 0.0;
    for (int i = 0; i < 100; ++i) {
      lr = floor.on_epoch_end(1.0);
    }
    CHECK(lr == 1e-8);
  }

  TEST_CASE("early stopper counts epochs without improvement") {
    EarlyStopper s(7, 1e-4);
    CHECK(s.on_epoch_end(1.0) == EarlyStopper::Decision::proceed);
    CHECK(s.on_epoch_end(0.5) == EarlyStopper::Decision::proceed);
    for (int i = 0; i < 6; ++i) {
      CHECK(s.on_epoch_end(0.49995) == EarlyStopper::Decision::proceed);  // below min_delta
    }
    CHECK(s.on_epoch_end(0.6) == EarlyStopper::Decision::stop);
  }

  TEST_CASE("config validation and json round trip") {
    TrainConfig c;
    c.validate();
    CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
    TrainConfig bad = c;
    bad.lr_min = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.plateau_factor = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("scripted validation losses stop training and restore the best epoch") {
    QuietLog quiet;
    oracle::ScratchDir dir("es");
    Model model = small_model();
    TrainConfig config = small_config();
    config.epochs = 30;
    FitOptions opts;
    opts.checkpoint_path = dir.path / "best.eydx";
    opts.record_seconds = false;
    opts.val_loss_hook = [](std::size_t epoch, double) {
      return epoch == 1 ? 1.0 : epoch == 2 ? 0.5 : 0.6;
    };
    std::map<std::string, Tensor> snapshot;
    opts.on_epoch = [&](const EpochRecord& r) {
      if (r.epoch == 2) {
        for (const auto& name : model.param_names()) {
          snapshot[name] = model.param(name);
        }
      }
    };
    const FitResult result = fit(model, blob_manifest(), config, opts);
    CHECK(result.state.stopped_early);
    CHECK(result.state.history.size() == 9);
    CHECK(result.state.best_epoch == 2);
    for (const auto& name : model.param_names()) {
      CHECK(model.param(name).bitwise_equal(snapshot.at(name)));
    }
    const LoadedCheckpoint ckpt = load_checkpoint(opts.checkpoint_path);
    CHECK(ckpt.metadata.epoch == 2);
    CHECK(ckpt.metadata.extra.contains("train_config"));
    // lr halves after epochs 5 and 8 (three flat epochs each)
    CHECK(result.state.history[4].lr == 1e-3);
    CHECK(result.state.history[5].lr == 5e-4);
    CHECK(result.state.history[8].lr == 2.5e-4);
  }

  TEST_CASE("training is deterministic in double precision") {
    QuietLog quiet;
    oracle::ScratchDir dir("det");
    auto run = [&](const std::string& name) {
      Model model = small_model();
      FitOptions opts;
      opts.checkpoint_path = dir.path / name;
      opts.record_seconds = false;
      const FitResult r = fit(model, blob_manifest(), small_config(), opts);
      std::vector<nlohmann::json> hist;
      for (const auto& rec : r.state.history) {
        hist.push_back(rec.to_json());
      }
      return std::make_pair(hist, model);
    };
    const auto [h1, m1] = run("a.eydx");
    const auto [h2, m2] = run("b.eydx");
    CHECK(h1 == h2);
    for (const auto& name : m1.param_names()) {
      CHECK(m1.param(name).bitwise_equal(m2.param(name)));
    }
    CHECK(h1.back().at("seconds") == 0.0);
  }

  TEST_CASE("uniform class weights equal unweighted training") {
    QuietLog quiet;
    oracle::ScratchDir dir("uniform");
    // blob classes are balanced, so the computed weights are exactly 1
    auto run = [&](bool weights) {
      Model model = small_model();
      TrainConfig c = small_config();
      c.epochs = 2;
      c.use_class_weights = weights;
      FitOptions opts;
      opts.checkpoint_path = dir.path / (weights ? "w.eydx" : "u.eydx");
      opts.record_seconds = false;
      return fit(model, blob_manifest(), c, opts).state.history.back().to_json();
    };
    CHECK(run(true) == run(false));
  }

  TEST_CASE("frozen parameters are bitwise unchanged") {
    QuietLog quiet;
    oracle::ScratchDir dir("frozen");
    Model model = small_model();
    set_trainable(model, 2);
    const Model before = model;
    FitOptions opts;
    opts.checkpoint_path = dir.path / "f.eydx";
    opts.record_seconds = false;
    TrainConfig c = small_config();
    c.epochs = 2;
    fit(model, blob_manifest(), c, opts);
    for (const auto& name : model.param_names()) {
      const bool trainable = name.rfind("6.", 0) == 0 || name.rfind("8.", 0) == 0;
      CHECK(model.param(name).bitwise_equal(before.param(name)) != trainable);
    }

    Model none = small_model();
    set_trainable(none, 0);
    CHECK_THROWS_AS(fit(none, blob_manifest(), c, opts), ConfigError);
  }

  TEST_CASE("fit rejects mismatched inputs") {
    Model model = small_model();
    FitOptions opts;
    CHECK_THROWS_AS(fit(model, blob_manifest(), small_config(), opts), ConfigError);
    opts.checkpoint_path = "x.eydx";
    Model four = build_vgg(Variant::vgg_nano, 4, {}, 32);
    CHECK_THROWS_AS(fit(four, blob_manifest(), small_config(), opts), ConfigError);
  }
}
