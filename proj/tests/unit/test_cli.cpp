#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "temp_dir.hpp"
#include "twoview/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;

  std::string last_line() const {
    std::string s = out;
    while (!s.empty() && s.back() == '\n') s.pop_back();
    return s.substr(s.rfind('\n') == std::string::npos ? 0 : s.rfind('\n') + 1);
  }
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = twoview::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// synth -> patchify, shared by the pipeline cases.
struct Pipeline {
  testing::TempDir dir;
  fs::path patches;

  Pipeline() {
    const auto data = dir / "data";
    REQUIRE(cli({"synth", "--classes", "4", "--specimens", "4", "--image-size", "96", "--mode", "joint-code", "--seed",
                 "3", "--out", data.string()})
                .code == 0);
    const auto r = cli({"patchify", "--manifest", (data / "manifest.jsonl").string(), "--out", (dir / "runs").string(),
                        "--patch-size", "64", "--patches-per-image", "3", "--target-per-class-per-view", "12",
                        "--test-fraction", "0.25", "--val-fraction", "0", "--augmentation-variants", "1", "--seed", "5",
                        "--run-name", "p"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    patches = r.last_line();
    REQUIRE(fs::exists(fs::path(patches) / "patches.jsonl"));
  }
};

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  const auto missing = cli({"train-sv", "--patches", "x"});
  CHECK(missing.code == 1);
  CHECK(cli({"synth", "--classes", "four", "--out", "x"}).code == 1);
  CHECK(cli({"synth", "--bogus", "1"}).code == 1);
  const auto help = cli({"train-sv", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--epochs") != std::string::npos);
}

TEST_CASE("validate reports violations with exit codes") {
  testing::TempDir dir;
  REQUIRE(cli({"synth", "--classes", "6", "--specimens", "2", "--image-size", "32", "--out", dir.path().string()}).code ==
          0);
  const auto ok = cli({"validate", "--manifest", (dir / "manifest.jsonl").string()});
  CHECK(ok.code == 0);
  CHECK(ok.last_line() == "0 violations");

  fs::remove(dir / "images" / "WW_s000_surface.png");
  const auto bad = cli({"validate", "--manifest", (dir / "manifest.jsonl").string()});
  CHECK(bad.code == 2);
  CHECK(bad.last_line() == "1 violations");
  const auto report = nlohmann::json::parse(bad.err);
  CHECK(report["violations"].size() == 1);
  CHECK(cli({"validate", "--manifest", (dir / "manifest.jsonl").string(), "--no-check-files"}).code == 0);
}

TEST_CASE("config files and flag overrides") {
  testing::TempDir dir;
  {
    std::ofstream cfg(dir / "synth.json");
    cfg << R"({"subcommand": "synth", "classes": 4, "specimens": 2, "image_size": 32, "out": ")" << (dir / "a").string()
        << "\"}";
  }
  REQUIRE(cli({"synth", "--config", (dir / "synth.json").string(), "--specimens", "3"}).code == 0);
  const auto snap = nlohmann::json::parse(slurp(dir / "a" / "config.json"));
  CHECK(snap["classes"] == 4);
  CHECK(snap["specimens"] == 3);
  CHECK(snap["subcommand"] == "synth");
  std::size_t lines = 0;
  std::ifstream in(dir / "a" / "manifest.jsonl");
  for (std::string l; std::getline(in, l);) lines += !l.empty();
  CHECK(lines == 1 + 24);  // header plus one record per image

  {
    std::ofstream cfg(dir / "bad.json");
    cfg << R"({"subcommand": "synth", "clases": 4})";
  }
  CHECK(cli({"synth", "--config", (dir / "bad.json").string()}).code == 1);
  {
    std::ofstream cfg(dir / "wrong.json");
    cfg << R"({"subcommand": "eval"})";
  }
  CHECK(cli({"synth", "--config", (dir / "wrong.json").string(), "--out", "x"}).code == 1);
}

TEST_CASE("train-mv without a single-view checkpoint names the prerequisite") {
  testing::TempDir dir;
  const auto r = cli({"train-mv", "--patches", dir.path().string(), "--epochs", "1", "--out", dir.path().string()});
  CHECK(r.code == 2);
  const auto err = nlohmann::json::parse(r.err);
  CHECK(err["message"].get<std::string>().find("train-sv") != std::string::npos);
  const auto gone = cli({"train-mv", "--patches", dir.path().string(), "--epochs", "1", "--out", dir.path().string(),
                         "--sv-checkpoint", (dir / "none.ckpt").string()});
  CHECK(gone.code == 2);
}

TEST_CASE("full pipeline through the command line") {
  Pipeline p;
  const auto runs = (p.dir / "runs").string();
  const auto sv = cli({"train-sv", "--patches", p.patches.string(), "--epochs", "2", "--batch", "16", "--precision",
                       "double", "--seed", "9", "--out", runs, "--run-name", "sv"});
  INFO(sv.err);
  REQUIRE(sv.code == 0);
  const fs::path sv_dir = sv.last_line();
  for (const char* f : {"config.json", "model.ckpt", "history.csv", "run_metadata.json"}) CHECK(fs::exists(sv_dir / f));
  // An existing non-empty run directory is never overwritten.
  CHECK(cli({"train-sv", "--patches", p.patches.string(), "--epochs", "1", "--out", runs, "--run-name", "sv"}).code ==
        2);

  const auto mv = cli({"train-mv", "--sv-checkpoint", (sv_dir / "model.ckpt").string(), "--patches",
                       p.patches.string(), "--epochs", "2", "--batch", "16", "--fusion", "concat", "--seed", "9",
                       "--out", runs, "--run-name", "mv"});
  INFO(mv.err);
  REQUIRE(mv.code == 0);
  const fs::path mv_dir = mv.last_line();

  const auto report_dir = p.dir / "report";
  const auto ev = cli({"eval", "--checkpoint", (sv_dir / "model.ckpt").string(), "--checkpoint",
                       (mv_dir / "model.ckpt").string(), "--patches", p.patches.string(), "--report-out",
                       report_dir.string(), "--seed", "4"});
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  const auto report = nlohmann::json::parse(slurp(report_dir / "report.json"));
  CHECK(report["rows"].size() == 4);
  CHECK(slurp(report_dir / "report.txt").find("MV-mini-conc") != std::string::npos);

  const auto again_dir = p.dir / "report2";
  auto cfg = nlohmann::json::parse(slurp(report_dir / "config.json"));
  cfg["report_out"] = again_dir.string();
  {
    std::ofstream f(p.dir / "eval.json");
    f << cfg.dump();
  }
  REQUIRE(cli({"eval", "--config", (p.dir / "eval.json").string()}).code == 0);
  CHECK(slurp(again_dir / "report.json") == slurp(report_dir / "report.json"));

  const auto csv = p.dir / "features.csv";
  const auto ex = cli({"export-features", "--checkpoint", (mv_dir / "model.ckpt").string(), "--patches",
                       p.patches.string(), "--out", csv.string()});
  INFO(ex.err);
  CHECK(ex.code == 0);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(std::count(header.begin(), header.end(), ',') == 2 + 256);
}
