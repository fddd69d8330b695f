#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "eyedex/checkpoint.hpp"
#include "eyedex/log.hpp"
#include "eyedex/synthetic.hpp"
#include "eyedex/training.hpp"
#include "oracles.hpp"

using namespace eyedex;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct QuietLog {
  log::Sink previous;
  QuietLog() : previous(log::set_sink([](log::Level, const std::string&) {})) {}
  ~QuietLog() { log::set_sink(previous); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<nlohmann::json> read_history(const fs::path& p) {
  std::ifstream in(p);
  std::vector<nlohmann::json> out;
  for (std::string line; std::getline(in, line);) {
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

// Blob dataset plus a manifest, shared by the train/evaluate tests.
struct Workspace {
  oracle::ScratchDir dir{"cli"};
  fs::path manifest = dir.path / "manifest.csv";
  Workspace() {
    CHECK(run({"synth", "--out", (dir.path / "blobs").string(), "--per-class", "20", "--seed", "4"})
              .code == 0);
    CHECK(run({"ingest", "--root", (dir.path / "blobs").string(), "--out", manifest.string(),
               "--seed", "4"})
              .code == 0);
  }
};

std::vector<std::string> train_args(const Workspace& w, const std::string& out_dir) {
  return {"train",      "--manifest", w.manifest.string(), "--out-dir", (w.dir.path / out_dir).string(),
          "--seed",     "9",          "--epochs",          "3",         "--batch-size",
          "16",         "--lr0",      "1e-3",              "--dtype",   "f64",
          "--dense-units", "16",      "--no-record-time"};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("ingest prints the split table and is reproducible") {
    oracle::ScratchDir dir("ingest");
    write_count_tree(dir.path / "t", {"Healthy", "Glaucoma", "Myopia"}, {20, 20, 20});
    const auto a = run({"ingest", "--root", (dir.path / "t").string(), "--out",
                        (dir.path / "a.csv").string(), "--seed", "1"});
    REQUIRE(a.code == 0);
    CHECK(a.out.find("Glaucoma") != std::string::npos);
    CHECK(a.out.find("total") != std::string::npos);
    const auto b = run({"ingest", "--root", (dir.path / "t").string(), "--out",
                        (dir.path / "b.csv").string(), "--seed", "1"});
    CHECK(b.code == 0);
    CHECK(slurp(dir.path / "a.csv") == slurp(dir.path / "b.csv"));
    // 60 samples plus the header
    const std::string csv = slurp(dir.path / "a.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 61);
  }

  TEST_CASE("exit codes") {
    oracle::ScratchDir dir("codes");
    CHECK(run({}).code == cli::usage);
    CHECK(run({"--help"}).code == cli::ok);
    CHECK(run({"bogus"}).code == cli::usage);
    ::unsetenv("EYEDEX_SEED");
    CHECK(run({"ingest", "--root", dir.path.string(), "--out", (dir.path / "m.csv").string()})
              .code == cli::usage);
    ::setenv("EYEDEX_SEED", "3", 1);
    CHECK(run({"ingest", "--root", (dir.path / "none").string(), "--out",
               (dir.path / "m.csv").string()})
              .code == cli::usage);
    ::unsetenv("EYEDEX_SEED");

    std::ofstream(dir.path / "junk.eydx") << "not a checkpoint";
    const auto bad = run({"evaluate", "--checkpoint", (dir.path / "junk.eydx").string(),
                          "--manifest", (dir.path / "junk.eydx").string(), "--out-dir",
                          (dir.path / "ev").string()});
    CHECK(bad.code == cli::io);

    std::ofstream(dir.path / "bad.ini") << "epochs = 2\nnot_a_key = 1\n";
    const auto cfg = run({"train", "--config", (dir.path / "bad.ini").string(), "--manifest", "x",
                          "--out-dir", "y", "--seed", "1"});
    CHECK(cfg.code == cli::usage);
    CHECK(cfg.err.find("not_a_key") != std::string::npos);
  }

  TEST_CASE("focal loss with gamma 0 trains exactly like cross-entropy") {
    QuietLog quiet;
    Workspace w;
    auto focal = train_args(w, "focal");
    focal.insert(focal.end(), {"--loss", "focal", "--focal-gamma", "0"});
    auto ce = train_args(w, "ce");
    ce.insert(ce.end(), {"--loss", "ce"});
    REQUIRE(run(focal).code == 0);
    REQUIRE(run(ce).code == 0);
    const auto hf = read_history(w.dir.path / "focal" / "history.jsonl");
    const auto hc = read_history(w.dir.path / "ce" / "history.jsonl");
    REQUIRE(hf.size() == 3);
    CHECK(hf == hc);
  }

  TEST_CASE("evaluate reproduces the best validation loss") {
    QuietLog quiet;
    Workspace w;
    REQUIRE(run(train_args(w, "run")).code == 0);
    const auto summary = nlohmann::json::parse(slurp(w.dir.path / "run" / "train_summary.json"));
    const auto ev = run({"evaluate", "--checkpoint", (w.dir.path / "run" / "best.eydx").string(),
                         "--manifest", w.manifest.string(), "--split", "val", "--out-dir",
                         (w.dir.path / "ev").string()});
    REQUIRE(ev.code == 0);
    const auto metrics = nlohmann::json::parse(slurp(w.dir.path / "ev" / "metrics.json"));
    CHECK(std::abs(metrics.at("loss").get<double>() - summary.at("best_val_loss").get<double>()) <
          1e-6);
    CHECK(fs::exists(w.dir.path / "ev" / "confusion.csv"));

    const auto rep = run({"report", "--input", (w.dir.path / "ev" / "report.json").string(),
                          "--format", "csv"});
    CHECK(rep.code == 0);
    CHECK(rep.out.rfind("class,precision,recall,f1,support", 0) == 0);

    const fs::path image = w.dir.path / "blobs" / "Healthy" / "Healthy_0000.png";
    const auto ex = run({"explain", "--checkpoint", (w.dir.path / "run" / "best.eydx").string(),
                         "--image", image.string(), "--out-dir", (w.dir.path / "ex").string(),
                         "--occlusion"});
    CHECK(ex.code == 0);
    CHECK(ex.out.find("gate:") != std::string::npos);
    CHECK(fs::exists(w.dir.path / "ex" / "gradcam.png"));
    CHECK(fs::exists(w.dir.path / "ex" / "occlusion.csv"));
    const auto unknown = run({"explain", "--checkpoint", (w.dir.path / "run" / "best.eydx").string(),
                              "--image", image.string(), "--out-dir", (w.dir.path / "ex").string(),
                              "--class", "Cataract"});
    CHECK(unknown.code == cli::usage);
    CHECK(unknown.err.find("Myopia") != std::string::npos);
  }

#ifdef EYEDEX_CLI_PATH
  TEST_CASE("a killed training run leaves a loadable checkpoint") {
    QuietLog quiet;
    oracle::ScratchDir dir("kill");
    BlobOptions blobs;
    blobs.per_class = 60;
    write_blob_dataset(dir.path / "blobs", blobs);
    write_manifest(stratified_split(scan_dataset(dir.path / "blobs"), {}, 1),
                   dir.path / "m.csv");
    const std::string cmd = "timeout -s KILL 4 " + std::string(EYEDEX_CLI_PATH) +
                            " train --manifest " + (dir.path / "m.csv").string() + " --out-dir " +
                            (dir.path / "run").string() +
                            " --seed 1 --epochs 100000 --es-patience 100000 --batch-size 16"
                            " --lr0 1e-3 > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    CHECK(status != 0);  // killed, not finished
    const fs::path best = dir.path / "run" / "best.eydx";
    REQUIRE(fs::exists(best));
    const LoadedCheckpoint ckpt = load_checkpoint(best);
    CHECK(ckpt.metadata.epoch >= 1);
    const auto history = read_history(dir.path / "run" / "history.jsonl");
    CHECK(history.size() >= ckpt.metadata.epoch);
    for (const auto& entry : fs::directory_iterator(dir.path / "run")) {
      CHECK(entry.path().extension() != ".tmp");
    }
  }
#endif
}
