#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "commands.hpp"
#include "fixtures.hpp"
#include "midiseg/curate.hpp"

using namespace midiseg;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

json load_json(const fs::path& path) { return json::parse(slurp(path)); }

int run(std::vector<std::string> args) { return cli::run_cli(args); }

std::string s(const fs::path& p) { return p.string(); }

// Boundary probabilities straight from the encoder's metadata: certainty 1 on
// annotated bars, 0 elsewhere.
void inject_ground_truth(const fs::path& out_dir) {
  fs::create_directories(out_dir / "predictions");
  for (const auto& entry : fs::directory_iterator(out_dir / "patches")) {
    if (entry.path().extension() != ".json") {
      continue;
    }
    const json meta = load_json(entry.path());
    const std::set<int> boundaries(meta.at("boundaries").begin(), meta.at("boundaries").end());
    json pred;
    pred["file_id"] = meta.at("file_id");
    pred["n_measures"] = meta.at("n_measures");
    pred["evaluable"] = meta.at("evaluable");
    json probs = json::array();
    for (const json& bar : meta.at("evaluable")) {
      probs.push_back(boundaries.count(bar.get<int>()) ? 1.0 : 0.0);
    }
    pred["probs"] = std::move(probs);
    const std::string file_id = meta.at("file_id").get<std::string>();
    std::ofstream out(out_dir / "predictions" / (file_id + ".json"), std::ios::binary);
    out << pred.dump() << '\n';
  }
}

}  // namespace

TEST_CASE("curate and encode produce the documented artifacts deterministically") {
  testing::TempDir tmp("cli_pipeline");
  const fs::path corpus = tmp.path() / "corpus";
  const fs::path out = tmp.path() / "run";
  testing::write_pipeline_corpus(corpus, 5);

  REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "curate"}) == 0);
  REQUIRE(fs::exists(out / "annotations.jsonl"));

  // One log row per input file; this corpus keeps everything.
  std::istringstream log(slurp(out / "curation_log.jsonl"));
  int rows = 0;
  for (std::string line; std::getline(log, line);) {
    CHECK(json::parse(line).at("status") == "kept");
    ++rows;
  }
  CHECK(rows == 5);

  REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "encode"}) == 0);
  for (int i = 0; i < 5; ++i) {
    const std::string id = "song" + std::to_string(i);
    REQUIRE(fs::exists(out / "patches" / (id + ".patches")));
    const json meta = load_json(out / "patches" / (id + ".meta.json"));
    const int bars = 12 + (i % 2);
    CHECK(meta.at("n_measures") == 4 * bars + 1);
    const std::vector<int> boundaries = meta.at("boundaries").get<std::vector<int>>();
    CHECK(boundaries == std::vector<int>{0, bars, 2 * bars, 3 * bars});
    const std::vector<int> evaluable = meta.at("evaluable").get<std::vector<int>>();
    REQUIRE_FALSE(evaluable.empty());
    CHECK(evaluable.front() == 16);                  // 16-bar margin after the first onset
    CHECK(evaluable.back() == (4 * bars - 1) - 16);  // and before the last one
    CHECK(meta.at("measure_start_beats").size() == meta.at("n_measures").get<std::size_t>());
    CHECK(meta.at("measure_start_seconds").size() == meta.at("n_measures").get<std::size_t>());
  }

  const json manifest = load_json(out / "manifest.json");
  CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
  CHECK(manifest.at("commands").contains("curate"));
  CHECK(manifest.at("commands").contains("encode"));
  CHECK(manifest.at("seeds").contains("encode"));

  SUBCASE("re-running the stages rewrites byte-identical artifacts") {
    std::vector<std::pair<fs::path, std::string>> before;
    for (const auto& entry : fs::recursive_directory_iterator(out)) {
      if (entry.is_regular_file()) {
        before.emplace_back(entry.path(), slurp(entry.path()));
      }
    }
    REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "curate"}) == 0);
    REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "encode"}) == 0);
    for (const auto& [path, bytes] : before) {
      CAPTURE(path.string());
      CHECK(slurp(path) == bytes);
    }
  }
  SUBCASE("worker threads do not change any output byte") {
    const fs::path out2 = tmp.path() / "run_jobs";
    REQUIRE(run({"--corpus", s(corpus), "--out", s(out2), "curate", "--jobs", "4"}) == 0);
    REQUIRE(run({"--corpus", s(corpus), "--out", s(out2), "encode", "--jobs", "4"}) == 0);
    CHECK(slurp(out2 / "annotations.jsonl") == slurp(out / "annotations.jsonl"));
    for (int i = 0; i < 5; ++i) {
      const std::string id = "song" + std::to_string(i);
      CHECK(slurp(out2 / "patches" / (id + ".patches")) ==
            slurp(out / "patches" / (id + ".patches")));
      CHECK(slurp(out2 / "patches" / (id + ".meta.json")) ==
            slurp(out / "patches" / (id + ".meta.json")));
    }
  }
}

TEST_CASE("ablation flags change exactly the channels they claim") {
  testing::TempDir tmp("cli_ablation");
  const fs::path corpus = tmp.path() / "corpus";
  testing::write_pipeline_corpus(corpus, 2);
  const fs::path base = tmp.path() / "base";
  REQUIRE(run({"--corpus", s(corpus), "--out", s(base), "curate"}) == 0);
  REQUIRE(run({"--corpus", s(corpus), "--out", s(base), "encode"}) == 0);

  const std::string ann = s(base / "annotations.jsonl");
  const fs::path no_ot = tmp.path() / "no_overtones";
  const fs::path no_ds = tmp.path() / "no_drum_split";
  REQUIRE(run({"--corpus", s(corpus), "--out", s(no_ot), "--annotations", ann, "encode",
               "--no-overtones"}) == 0);
  REQUIRE(run({"--corpus", s(corpus), "--out", s(no_ds), "--annotations", ann, "encode",
               "--no-drum-split"}) == 0);

  constexpr std::size_t kPlane = 128 * 512;
  for (const std::string id : {std::string("song0"), std::string("song1")}) {
    const auto base_patches = encode::read_patches(base / "patches" / (id + ".patches"));
    const auto ot_patches = encode::read_patches(no_ot / "patches" / (id + ".patches"));
    const auto ds_patches = encode::read_patches(no_ds / "patches" / (id + ".patches"));
    REQUIRE(base_patches.size() == ot_patches.size());
    REQUIRE(base_patches.size() == ds_patches.size());

    bool base_has_overtones = false;
    bool base_has_drums = false;
    for (std::size_t r = 0; r < base_patches.size(); ++r) {
      CAPTURE(r);
      const auto& b = base_patches[r].data;
      const auto& o = ot_patches[r].data;
      const auto& d = ds_patches[r].data;

      bool ot_ch01_bitwise = true, ot_ch2_zero = true;
      bool ds_ch0_is_max = true, ds_ch1_zero = true, ds_ch2_bitwise = true;
      for (std::size_t i = 0; i < kPlane; ++i) {
        base_has_drums |= b[kPlane + i] != 0.0f;
        base_has_overtones |= b[2 * kPlane + i] != 0.0f;
        ot_ch01_bitwise &= (o[i] == b[i]) && (o[kPlane + i] == b[kPlane + i]);
        ot_ch2_zero &= o[2 * kPlane + i] == 0.0f;
        ds_ch0_is_max &= d[i] == std::max(b[i], b[kPlane + i]);
        ds_ch1_zero &= d[kPlane + i] == 0.0f;
        ds_ch2_bitwise &= d[2 * kPlane + i] == b[2 * kPlane + i];
      }
      // --no-overtones: channels 0 and 1 bit-identical, channel 2 silent.
      CHECK(ot_ch01_bitwise);
      CHECK(ot_ch2_zero);
      // --no-drum-split: drums fold into channel 0 by maximum, channel 1
      // goes silent, overtones are untouched.
      CHECK(ds_ch0_is_max);
      CHECK(ds_ch1_zero);
      CHECK(ds_ch2_bitwise);
    }
    if (id == "song0") {
      CHECK(base_has_drums);  // the ablation must have something to merge
    }
    CHECK(base_has_overtones);
  }
}

TEST_CASE("injected ground-truth probabilities evaluate to a perfect score") {
  testing::TempDir tmp("cli_closedloop");
  const fs::path corpus = tmp.path() / "corpus";
  const fs::path out = tmp.path() / "run";
  testing::write_pipeline_corpus(corpus, 5);
  REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "curate"}) == 0);
  REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "encode"}) == 0);
  inject_ground_truth(out);

  for (const std::string mode : {std::string("measure"), std::string("bar"),
                                 std::string("seconds")}) {
    CAPTURE(mode);
    REQUIRE(run({"--out", s(out), "evaluate", "--mode", mode}) == 0);
    const json report = load_json(out / "reports" / ("evaluation_" + mode + ".json"));
    CHECK(report.at("songs") == 5);
    CHECK(report.at("micro").at("f1") == 1.0);
    CHECK(report.at("micro").at("fp") == 0);
    CHECK(report.at("micro").at("fn") == 0);
    CHECK(report.at("macro").at("f1") == 1.0);
  }

  SUBCASE("the peak decoder reaches the same score on certainty inputs") {
    REQUIRE(run({"--out", s(out), "evaluate", "--mode", "bar", "--decoder", "peak"}) == 0);
    const json report = load_json(out / "reports" / "evaluation_bar.json");
    CHECK(report.at("micro").at("f1") == 1.0);
  }
  SUBCASE("a wrong prediction is punished") {
    const fs::path pf = out / "predictions" / "song0.json";
    json pred = load_json(pf);
    for (auto& p : pred.at("probs")) {
      p = 1.0 - p.get<double>();  // invert every decision
    }
    std::ofstream(pf) << pred.dump() << '\n';
    REQUIRE(run({"--out", s(out), "evaluate", "--mode", "measure"}) == 0);
    const json report = load_json(out / "reports" / "evaluation_measure.json");
    CHECK(report.at("micro").at("f1") < 1.0);
  }
}

TEST_CASE("train, predict and evaluate run end to end on a small model") {
  testing::TempDir tmp("cli_train");
  const fs::path corpus = tmp.path() / "corpus";
  const fs::path out = tmp.path() / "run";
  testing::write_pipeline_corpus(corpus, 3);

  const fs::path cfg = tmp.path() / "config.json";
  {
    std::ofstream f(cfg);
    f << R"({
      "model": {"conv": [{"out_channels": 2}], "hidden": 2},
      "train": {"max_epochs": 2, "batch_size": 8}
    })";
  }

  // Tiny corpus: force everything into train except one file for validation.
  REQUIRE(run({"--config", s(cfg), "--corpus", s(corpus), "--out", s(out), "curate",
               "--val-frac", "0.45", "--test-frac", "0.0"}) == 0);
  REQUIRE(run({"--config", s(cfg), "--corpus", s(corpus), "--out", s(out), "encode"}) == 0);

  const std::vector<curate::AnnotationRecord> records =
      curate::load_annotations(out / "annotations.jsonl");
  int val_count = 0;
  for (const auto& r : records) {
    val_count += r.split == curate::Split::validation ? 1 : 0;
  }
  REQUIRE(val_count >= 1);
  REQUIRE(val_count < 3);

  REQUIRE(run({"--config", s(cfg), "--out", s(out), "train", "--tag", "tiny"}) == 0);
  REQUIRE(fs::exists(out / "model" / "tiny.ckpt"));
  const json history = load_json(out / "model" / "tiny.history.json");
  CHECK(history.at("epochs").size() <= 2);

  REQUIRE(run({"--config", s(cfg), "--out", s(out), "predict", "--model",
               s(out / "model" / "tiny.ckpt")}) == 0);
  for (const auto& r : records) {
    const json pred = load_json(out / "predictions" / (r.file_id + ".json"));
    const json meta = load_json(out / "patches" / (r.file_id + ".meta.json"));
    REQUIRE(pred.at("probs").size() == meta.at("evaluable").size());
    for (const json& p : pred.at("probs")) {
      CHECK(p.get<double>() >= 0.0);
      CHECK(p.get<double>() <= 1.0);
    }
  }

  REQUIRE(run({"--config", s(cfg), "--out", s(out), "evaluate", "--mode", "measure"}) == 0);
  const json report = load_json(out / "reports" / "evaluation_measure.json");
  CHECK(report.at("songs") == 3);
  CHECK(report.at("per_song").size() == 3);

  SUBCASE("an ensemble of the same checkpoint predicts like the single model") {
    const fs::path solo = out / "predictions" / (records[0].file_id + ".json");
    const json single = load_json(solo);
    REQUIRE(run({"--config", s(cfg), "--out", s(out), "predict", "--ensemble",
                 s(out / "model" / "tiny.ckpt") + "," + s(out / "model" / "tiny.ckpt")}) == 0);
    const json doubled = load_json(solo);
    REQUIRE(single.at("probs").size() == doubled.at("probs").size());
    for (std::size_t i = 0; i < single.at("probs").size(); ++i) {
      CHECK(doubled.at("probs").at(i).get<double>() ==
            doctest::Approx(single.at("probs").at(i).get<double>()).epsilon(1e-12));
    }
  }
}

TEST_CASE("inspect reports and the command surface fails cleanly") {
  testing::TempDir tmp("cli_misc");
  const fs::path corpus = tmp.path() / "corpus";
  testing::write_pipeline_corpus(corpus, 1);

  CHECK(run({"inspect", s(corpus / "song0.mid")}) == 0);
  CHECK(run({"inspect", s(corpus / "missing.mid")}) != 0);
  CHECK(run({"no-such-command"}) != 0);
  CHECK(run({"evaluate", "--mode", "nonsense"}) != 0);
  CHECK(run({"--out", s(tmp.path() / "nowhere"), "evaluate"}) != 0);
  CHECK(run({"--corpus", s(tmp.path() / "void"), "--out", s(tmp.path() / "r"), "curate"}) != 0);

  SUBCASE("render-patch writes a pixmap") {
    const fs::path out = tmp.path() / "run";
    REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "curate"}) == 0);
    REQUIRE(run({"--corpus", s(corpus), "--out", s(out), "encode"}) == 0);
    const fs::path patches = out / "patches" / "song0.patches";
    const fs::path image = tmp.path() / "patch.ppm";
    REQUIRE(run({"render-patch", s(patches), "--index", "0", "--out", s(image)}) == 0);
    CHECK(slurp(image).substr(0, 2) == "P6");
    CHECK(run({"render-patch", s(patches), "--index", "100000"}) != 0);
  }
}
