#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <thread>
#include <unordered_set>

#include <CLI11.hpp>
#include <json.hpp>

#include "midiseg/curate.hpp"
#include "midiseg/encode.hpp"
#include "midiseg/eval.hpp"
#include "midiseg/model.hpp"
#include "midiseg/smf.hpp"

namespace midiseg::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Runs fn(0..n-1) on up to `jobs` worker threads. fn must not throw; workers
// write only to their own index's result slot, so output stays ordered.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        fn(i);
      }
    });
  }
  for (std::thread& t : pool) {
    t.join();
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h = (h ^ c) * 0x100000001b3ull;
  }
  return h;
}

// Deterministic split draw keyed by file id; salted so it is independent of
// the dedup fingerprint hash. The finalizer forces full avalanche: raw FNV of
// ids differing only in the last character barely moves the high bits.
curate::Split assign_split(const std::string& file_id, double val_frac, double test_frac) {
  std::uint64_t z = fnv1a("split:" + file_id);
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  const double u = static_cast<double>(z >> 11) * 0x1.0p-53;
  if (u < test_frac) {
    return curate::Split::test;
  }
  if (u < test_frac + val_frac) {
    return curate::Split::validation;
  }
  return curate::Split::train;
}

void update_manifest(const PipelineConfig& config, const std::string& command, json options) {
  fs::create_directories(config.out_dir);
  const fs::path path = config.out_dir / "manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    try {
      m = json::parse(in);
    } catch (const json::exception&) {
      m = json::object();  // rewrite a corrupt manifest from scratch
    }
  }
  m["config_hash"] = config_hash(config);
  m["seeds"] = {{"encode", config.encode.seed},
                {"train", config.train.seed},
                {"model_init", config.model.init_seed}};
  if (!m.contains("commands")) {
    m["commands"] = json::object();
  }
  m["commands"][command] = std::move(options);
  std::ofstream out(path, std::ios::binary);
  out << m.dump(2) << '\n';
}

std::vector<fs::path> list_files_with_extension(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> list_midi_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) {
      continue;
    }
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".mid" || ext == ".midi") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

fs::path find_midi(const fs::path& corpus_dir, const std::string& file_id) {
  for (const char* ext : {".mid", ".midi", ".MID"}) {
    fs::path p = corpus_dir / (file_id + ext);
    if (fs::exists(p)) {
      return p;
    }
  }
  throw std::runtime_error("no MIDI file for '" + file_id + "' under " + corpus_dir.string());
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << j.dump() << '\n';
}

json result_json(const eval::EvalResult& r) {
  return {{"tp", r.tp},           {"fp", r.fp},         {"fn", r.fn},
          {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
}

}  // namespace

int cmd_inspect(const PipelineConfig& config, const InspectArgs& args) {
  (void)config;
  try {
    const smf::ParsedSong song = smf::parse_midi_file(args.file);
    const smf::MeasureGrid grid =
        smf::compute_measures(song.timesig_map, song.ppq, smf::content_end_beat(song));
    const curate::CurationDecision decision = curate::filter_candidates(song, grid);

    std::cout << "file:            " << args.file << '\n'
              << "ppq:             " << song.ppq << '\n'
              << "notes:           " << song.notes.size() << '\n'
              << "markers:         " << song.markers.size() << '\n'
              << "tempo events:    " << song.tempo_map.events().size() << '\n'
              << "time signatures: " << song.timesig_map.events().size() << '\n'
              << "measures:        " << grid.size() << '\n';
    if (!song.markers.empty()) {
      std::printf("measures/marker: %.2f\n",
                  static_cast<double>(grid.size()) / static_cast<double>(song.markers.size()));
    }
    for (const std::string& w : song.warnings) {
      std::cout << "warning:         " << w << '\n';
    }
    if (decision.keep) {
      std::cout << "curation:        keep\n";
    } else {
      std::cout << "curation:        reject (";
      for (std::size_t i = 0; i < decision.reasons.size(); ++i) {
        std::cout << (i ? ", " : "") << curate::to_string(decision.reasons[i]);
      }
      std::cout << ")\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "inspect: " << args.file << ": " << e.what() << '\n';
    return 1;
  }
}

int cmd_curate(const PipelineConfig& config, const CurateArgs& args) {
  if (!fs::is_directory(config.corpus_dir)) {
    std::cerr << "curate: corpus directory not found: " << config.corpus_dir.string() << '\n';
    return 1;
  }
  const std::vector<fs::path> files = list_midi_files(config.corpus_dir);
  const curate::Subset subset = curate::subset_from_string(args.subset);

  struct Row {
    std::string file_id;
    std::string error;
    bool keep = false;
    std::vector<curate::RejectReason> reasons;
    curate::Fingerprint fp;
    curate::AnnotationRecord record;
  };
  std::vector<Row> rows(files.size());

  parallel_for(files.size(), args.jobs, [&](std::size_t i) {
    Row& row = rows[i];
    row.file_id = files[i].stem().string();
    try {
      const smf::ParsedSong song = smf::parse_midi_file(files[i]);
      const smf::MeasureGrid grid =
          smf::compute_measures(song.timesig_map, song.ppq, smf::content_end_beat(song));
      const curate::CurationDecision decision = curate::filter_candidates(song, grid);
      row.keep = decision.keep;
      row.reasons = decision.reasons;
      if (!row.keep) {
        return;
      }
      row.fp = curate::fingerprint(song);
      std::vector<int> bars = curate::quantize_markers_to_bars(song.markers, song.ppq, grid);
      if (args.pickup_correction) {
        bars = curate::pickup_correction(bars, grid);
      }
      curate::AnnotationRecord& rec = row.record;
      rec.file_id = row.file_id;
      for (int b : bars) {
        const double beat = grid[b].start_beat;
        rec.boundaries_beats.push_back(beat);
        rec.boundaries_seconds.push_back(
            smf::ticks_to_seconds(song.tempo_map, song.ppq, beat * song.ppq));
      }
      for (const smf::Marker& m : song.markers) {
        rec.marker_texts.push_back(m.text);
      }
      rec.split = assign_split(row.file_id, args.val_frac, args.test_frac);
      rec.subset = subset;
    } catch (const std::exception& e) {
      row.error = e.what();
      row.keep = false;
    }
  });

  // Dedup across the keepers: the lexicographically smallest id survives.
  std::vector<std::pair<std::string, curate::Fingerprint>> fps;
  for (const Row& row : rows) {
    if (row.keep) {
      fps.emplace_back(row.file_id, row.fp);
    }
  }
  std::unordered_set<std::string> dropped;
  for (const curate::DedupGroup& g : curate::dedup(fps)) {
    for (const std::string& id : g.dropped) {
      dropped.insert(id);
    }
  }
  for (Row& row : rows) {
    if (row.keep && dropped.count(row.file_id)) {
      row.keep = false;
      row.reasons.push_back(curate::RejectReason::Duplicate);
    }
  }

  std::vector<curate::AnnotationRecord> records;
  for (Row& row : rows) {
    if (row.keep) {
      records.push_back(std::move(row.record));
    }
  }
  fs::create_directories(config.out_dir);
  curate::export_annotations(records, config.annotations_path());

  // One decision-log line per input file, in listing order.
  std::size_t n_errors = 0;
  {
    std::ofstream log(config.out_dir / "curation_log.jsonl", std::ios::binary);
    for (const Row& row : rows) {
      json line;
      line["file_id"] = row.file_id;
      if (!row.error.empty()) {
        line["status"] = "error";
        line["error"] = row.error;
        ++n_errors;
      } else if (row.keep) {
        line["status"] = "kept";
      } else {
        line["status"] = "rejected";
        line["reasons"] = json::array();
        for (curate::RejectReason r : row.reasons) {
          line["reasons"].push_back(curate::to_string(r));
        }
      }
      log << line.dump() << '\n';
    }
  }
  for (const Row& row : rows) {
    if (!row.error.empty()) {
      std::cerr << "curate: " << row.file_id << ": " << row.error << '\n';
    }
  }

  std::cout << "curate: " << files.size() << " files, " << records.size() << " kept, "
            << files.size() - records.size() - n_errors << " rejected, " << n_errors
            << " errors -> " << config.annotations_path().string() << '\n';
  update_manifest(config, "curate",
                  {{"pickup_correction", args.pickup_correction},
                   {"subset", args.subset},
                   {"val_frac", args.val_frac},
                   {"test_frac", args.test_frac},
                   {"files", files.size()},
                   {"kept", records.size()}});
  return 0;
}

int cmd_encode(const PipelineConfig& config, const EncodeArgs& args) {
  const fs::path ann = config.annotations_path();
  if (!fs::exists(ann)) {
    std::cerr << "encode: annotations not found: " << ann.string()
              << " (run the curate stage first)\n";
    return 1;
  }
  const std::vector<curate::AnnotationRecord> records = curate::load_annotations(ann);
  const encode::OvertoneTable table =
      encode::build_overtone_table(config.encode.seed, config.encode.k);
  const encode::RenderOptions opts{config.encode.overtones, config.encode.drum_split};
  fs::create_directories(config.patches_dir());

  std::vector<std::string> errors(records.size());
  std::vector<std::int64_t> counts(records.size(), 0);
  parallel_for(records.size(), args.jobs, [&](std::size_t i) {
    const curate::AnnotationRecord& rec = records[i];
    try {
      const smf::ParsedSong song = smf::parse_midi_file(find_midi(config.corpus_dir, rec.file_id));
      const smf::MeasureGrid grid =
          smf::compute_measures(song.timesig_map, song.ppq, smf::content_end_beat(song));
      const std::vector<bool> mask =
          eval::exclusion_mask(grid, song.notes, song.ppq, config.encode.margin_bars);
      std::unordered_set<int> boundaries;
      for (double beat : rec.boundaries_beats) {
        boundaries.insert(grid.nearest_start_index(beat));
      }
      const std::vector<encode::QuantizedNote> notes = encode::quantize_events(song);
      const encode::PianoRoll roll = encode::render_pianoroll(notes, table, opts);

      std::vector<encode::Patch> patches;
      std::vector<int> evaluable;
      for (int m = 0; m < grid.size(); ++m) {
        if (mask[static_cast<std::size_t>(m)]) {
          evaluable.push_back(m);
          patches.push_back(encode::extract_patch(roll, grid, m, boundaries));
        }
      }
      encode::write_patches(patches, config.patches_dir() / (rec.file_id + ".patches"));

      std::vector<int> sorted_boundaries(boundaries.begin(), boundaries.end());
      std::sort(sorted_boundaries.begin(), sorted_boundaries.end());
      json meta;
      meta["file_id"] = rec.file_id;
      meta["split"] = curate::to_string(rec.split);
      meta["subset"] = curate::to_string(rec.subset);
      meta["margin_bars"] = config.encode.margin_bars;
      meta["n_measures"] = grid.size();
      json beats = json::array(), seconds = json::array();
      for (const smf::Measure& m : grid.measures()) {
        beats.push_back(m.start_beat);
        seconds.push_back(smf::ticks_to_seconds(song.tempo_map, song.ppq,
                                                m.start_beat * song.ppq));
      }
      meta["measure_start_beats"] = std::move(beats);
      meta["measure_start_seconds"] = std::move(seconds);
      meta["boundaries"] = sorted_boundaries;
      meta["evaluable"] = evaluable;
      write_json_file(config.patches_dir() / (rec.file_id + ".meta.json"), meta);
      counts[i] = static_cast<std::int64_t>(patches.size());
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::size_t n_errors = 0;
  std::int64_t total = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!errors[i].empty()) {
      ++n_errors;
      std::cerr << "encode: " << records[i].file_id << ": " << errors[i] << '\n';
    } else {
      total += counts[i];
    }
  }
  std::cout << "encode: " << records.size() - n_errors << "/" << records.size() << " songs, "
            << total << " patches -> " << config.patches_dir().string() << '\n';
  update_manifest(config, "encode",
                  {{"k", config.encode.k},
                   {"seed", config.encode.seed},
                   {"overtones", config.encode.overtones},
                   {"drum_split", config.encode.drum_split},
                   {"margin_bars", config.encode.margin_bars},
                   {"songs", records.size() - n_errors},
                   {"patches", total}});
  return 0;
}

int cmd_train(const PipelineConfig& config, const TrainArgs& args) {
  const fs::path ann = config.annotations_path();
  if (!fs::exists(ann)) {
    std::cerr << "train: annotations not found: " << ann.string()
              << " (run the curate stage first)\n";
    return 1;
  }
  if (!fs::is_directory(config.patches_dir())) {
    std::cerr << "train: patches not found under " << config.patches_dir().string()
              << " (run the encode stage first)\n";
    return 1;
  }

  std::vector<encode::Patch> train_patches, val_patches;
  for (const curate::AnnotationRecord& rec : curate::load_annotations(ann)) {
    if (rec.split == curate::Split::test) {
      continue;
    }
    const fs::path pf = config.patches_dir() / (rec.file_id + ".patches");
    if (!fs::exists(pf)) {
      std::cerr << "train: " << rec.file_id << ": missing patches, skipping\n";
      continue;
    }
    std::vector<encode::Patch> ps = encode::read_patches(pf);
    auto& dst = rec.split == curate::Split::train ? train_patches : val_patches;
    std::move(ps.begin(), ps.end(), std::back_inserter(dst));
  }

  std::size_t train_pos = 0, val_pos = 0;
  for (const encode::Patch& p : train_patches) {
    train_pos += p.label ? 1 : 0;
  }
  for (const encode::Patch& p : val_patches) {
    val_pos += p.label ? 1 : 0;
  }
  std::cout << "train: " << train_patches.size() << " train patches (" << train_pos
            << " positive), " << val_patches.size() << " val patches (" << val_pos
            << " positive)\n";

  const model::TrainedModel trained =
      model::train(train_patches, val_patches, config.model, config.train);

  fs::create_directories(config.models_dir());
  const fs::path ckpt = config.models_dir() / (args.tag + ".ckpt");
  model::save_checkpoint(trained, ckpt);

  json history;
  history["best_epoch"] = trained.best_epoch;
  history["epochs"] = json::array();
  for (std::size_t e = 0; e < trained.history.size(); ++e) {
    history["epochs"].push_back({{"epoch", e},
                                 {"train_loss", trained.history[e].train_loss},
                                 {"val_f1", trained.history[e].val_f1}});
  }
  write_json_file(config.models_dir() / (args.tag + ".history.json"), history);

  const double best_f1 =
      trained.best_epoch >= 0 ? trained.history[static_cast<std::size_t>(trained.best_epoch)].val_f1
                              : 0.0;
  std::printf("train: %zu epochs, best epoch %d (val F1 %.4f) -> %s\n", trained.history.size(),
              trained.best_epoch, best_f1, ckpt.string().c_str());
  update_manifest(config, "train",
                  {{"tag", args.tag},
                   {"train_patches", train_patches.size()},
                   {"val_patches", val_patches.size()},
                   {"epochs", trained.history.size()},
                   {"best_epoch", trained.best_epoch},
                   {"best_val_f1", best_f1}});
  return 0;
}

int cmd_predict(const PipelineConfig& config, const PredictArgs& args) {
  std::vector<model::TrainedModel> models;
  std::vector<std::string> model_paths;
  if (!args.ensemble.empty()) {
    model_paths = args.ensemble;
  } else {
    model_paths.push_back(args.model.empty() ? (config.models_dir() / "model.ckpt").string()
                                             : args.model);
  }
  for (const std::string& p : model_paths) {
    if (!fs::exists(p)) {
      std::cerr << "predict: checkpoint not found: " << p << " (run the train stage first)\n";
      return 1;
    }
    models.push_back(model::load_checkpoint(p));
  }
  if (!fs::is_directory(config.patches_dir())) {
    std::cerr << "predict: patches not found under " << config.patches_dir().string()
              << " (run the encode stage first)\n";
    return 1;
  }

  const std::vector<fs::path> patch_files =
      list_files_with_extension(config.patches_dir(), ".patches");
  fs::create_directories(config.predictions_dir());

  std::vector<std::string> errors(patch_files.size());
  std::vector<int> written(patch_files.size(), 0);
  parallel_for(patch_files.size(), args.jobs, [&](std::size_t i) {
    const std::string file_id = patch_files[i].stem().string();
    try {
      const json meta = load_json_file(config.patches_dir() / (file_id + ".meta.json"));
      if (!args.split.empty() && meta.at("split").get<std::string>() != args.split) {
        return;
      }
      const std::vector<encode::Patch> patches = encode::read_patches(patch_files[i]);
      json out;
      out["file_id"] = file_id;
      out["n_measures"] = meta.at("n_measures");
      out["evaluable"] = meta.at("evaluable");
      json probs = json::array();
      for (const encode::Patch& p : patches) {
        probs.push_back(model::ensemble_predict(models, p));
      }
      out["probs"] = std::move(probs);
      write_json_file(config.predictions_dir() / (file_id + ".json"), out);
      written[i] = 1;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::size_t n_errors = 0, n_written = 0;
  for (std::size_t i = 0; i < patch_files.size(); ++i) {
    if (!errors[i].empty()) {
      ++n_errors;
      std::cerr << "predict: " << patch_files[i].stem().string() << ": " << errors[i] << '\n';
    } else {
      n_written += static_cast<std::size_t>(written[i]);
    }
  }
  std::cout << "predict: " << n_written << " songs -> " << config.predictions_dir().string()
            << '\n';
  json manifest_models = json::array();
  for (const std::string& p : model_paths) {
    manifest_models.push_back(p);
  }
  update_manifest(config, "predict",
                  {{"models", manifest_models}, {"split", args.split}, {"songs", n_written}});
  return 0;
}

int cmd_evaluate(const PipelineConfig& config, const EvaluateArgs& args) {
  if (args.mode != "measure" && args.mode != "bar" && args.mode != "seconds") {
    std::cerr << "evaluate: unknown mode '" << args.mode << "'\n";
    return 1;
  }
  if (!fs::is_directory(config.predictions_dir())) {
    std::cerr << "evaluate: predictions not found under " << config.predictions_dir().string()
              << " (run the predict stage first)\n";
    return 1;
  }

  std::int64_t tp = 0, fp = 0, fn = 0;
  double macro_p = 0.0, macro_r = 0.0, macro_f1 = 0.0;
  json per_song = json::array();
  std::size_t n_songs = 0;

  for (const fs::path& pf : list_files_with_extension(config.predictions_dir(), ".json")) {
    const std::string file_id = pf.stem().string();
    json pred, meta;
    try {
      pred = load_json_file(pf);
      meta = load_json_file(config.patches_dir() / (file_id + ".meta.json"));
    } catch (const std::exception& e) {
      std::cerr << "evaluate: " << file_id << ": " << e.what() << '\n';
      continue;
    }
    if (!args.split.empty() && meta.at("split").get<std::string>() != args.split) {
      continue;
    }

    const int n_measures = meta.at("n_measures").get<int>();
    std::vector<double> probs(static_cast<std::size_t>(n_measures), 0.0);
    std::vector<bool> mask(static_cast<std::size_t>(n_measures), false);
    const auto& evaluable = pred.at("evaluable");
    const auto& probs_in = pred.at("probs");
    for (std::size_t i = 0; i < evaluable.size(); ++i) {
      const auto m = evaluable[i].get<std::size_t>();
      mask[m] = true;
      probs[m] = probs_in.at(i).get<double>();
    }
    std::set<int> gt;
    for (const json& b : meta.at("boundaries")) {
      gt.insert(b.get<int>());
    }

    eval::EvalResult res;
    if (args.mode == "measure") {
      res = eval::per_measure_eval(probs, gt, mask, config.eval.threshold);
    } else {
      std::vector<int> pred_bars;
      if (args.decoder == "peak") {
        pred_bars = eval::peak_pick(probs);
      } else {
        for (int m = 0; m < n_measures; ++m) {
          if (probs[static_cast<std::size_t>(m)] > config.eval.threshold) {
            pred_bars.push_back(m);
          }
        }
      }
      const std::vector<int> gt_bars(gt.begin(), gt.end());
      if (args.mode == "bar") {
        res = eval::bar_tolerance_eval(pred_bars, gt_bars, mask, config.eval.tolerance_bars);
      } else {
        const auto& seconds = meta.at("measure_start_seconds");
        std::vector<double> pred_t, gt_t;
        for (int m : pred_bars) {
          if (mask[static_cast<std::size_t>(m)]) {
            pred_t.push_back(seconds.at(static_cast<std::size_t>(m)).get<double>());
          }
        }
        for (int m : gt_bars) {
          if (mask[static_cast<std::size_t>(m)]) {
            gt_t.push_back(seconds.at(static_cast<std::size_t>(m)).get<double>());
          }
        }
        res = eval::tolerance_eval(pred_t, gt_t, config.eval.tolerance_seconds);
      }
    }

    tp += res.tp;
    fp += res.fp;
    fn += res.fn;
    macro_p += res.precision;
    macro_r += res.recall;
    macro_f1 += res.f1;
    ++n_songs;
    json row = {{"file_id", file_id}};
    row.update(result_json(res));
    per_song.push_back(std::move(row));
  }

  if (n_songs == 0) {
    std::cerr << "evaluate: no predictions matched\n";
    return 1;
  }

  const eval::EvalResult micro =
      eval::make_result(static_cast<int>(tp), static_cast<int>(fp), static_cast<int>(fn));
  json report;
  report["mode"] = args.mode;
  if (args.mode == "measure") {
    report["threshold"] = config.eval.threshold;
  } else {
    report["decoder"] = args.decoder;
    if (args.mode == "bar") {
      report["threshold"] = config.eval.threshold;
      report["tolerance_bars"] = config.eval.tolerance_bars;
    } else {
      report["threshold"] = config.eval.threshold;
      report["tolerance_seconds"] = config.eval.tolerance_seconds;
    }
  }
  report["songs"] = n_songs;
  report["micro"] = result_json(micro);
  report["macro"] = {{"precision", macro_p / static_cast<double>(n_songs)},
                     {"recall", macro_r / static_cast<double>(n_songs)},
                     {"f1", macro_f1 / static_cast<double>(n_songs)}};
  report["per_song"] = std::move(per_song);

  fs::create_directories(config.reports_dir());
  const fs::path out = config.reports_dir() / ("evaluation_" + args.mode + ".json");
  write_json_file(out, report);

  std::printf("evaluate[%s]: songs=%zu tp=%d fp=%d fn=%d precision=%.4f recall=%.4f f1=%.4f\n",
              args.mode.c_str(), n_songs, micro.tp, micro.fp, micro.fn, micro.precision,
              micro.recall, micro.f1);
  update_manifest(config, "evaluate",
                  {{"mode", args.mode},
                   {"decoder", args.decoder},
                   {"split", args.split},
                   {"songs", n_songs},
                   {"micro", result_json(micro)}});
  return 0;
}

int cmd_render_patch(const PipelineConfig& config, const RenderPatchArgs& args) {
  (void)config;
  const std::vector<encode::Patch> patches = encode::read_patches(args.patches);
  if (args.index < 0 || static_cast<std::size_t>(args.index) >= patches.size()) {
    std::cerr << "render-patch: index " << args.index << " out of range (file has "
              << patches.size() << " patches)\n";
    return 1;
  }
  fs::path out = args.out;
  if (out.empty()) {
    out = fs::path(args.patches).parent_path() /
          (fs::path(args.patches).stem().string() + "_" + std::to_string(args.index) + ".ppm");
  }
  const encode::Patch& patch = patches[static_cast<std::size_t>(args.index)];
  encode::export_patch_image(patch, out);
  std::cout << "render-patch: wrote " << out.string() << " (label="
            << (patch.label ? "boundary" : "no boundary") << ")\n";
  return 0;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"midiseg: section-boundary detection pipeline for symbolic music"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "pipeline config JSON")
      ->envname("MIDISEG_CONFIG");
  std::string corpus_dir, out_dir, annotations;
  CLI::Option* opt_corpus = app.add_option("--corpus", corpus_dir, "directory of SMF files");
  CLI::Option* opt_out = app.add_option("--out", out_dir, "run directory for all outputs");
  CLI::Option* opt_ann = app.add_option("--annotations", annotations, "annotations JSONL path");

  InspectArgs insp;
  CLI::App* c_inspect =
      app.add_subcommand("inspect", "parse one SMF and report stats and the curation decision");
  c_inspect->add_option("file", insp.file, "SMF path")->required();

  CurateArgs cur;
  CLI::App* c_curate = app.add_subcommand("curate", "filter, dedup and annotate a corpus");
  c_curate->add_flag("--pickup-correction", cur.pickup_correction,
                     "move boundaries off short pickup measures");
  c_curate->add_option("--subset", cur.subset, "subset tag for all files")
      ->check(CLI::IsMember({"tubb", "non_tubb"}));
  c_curate->add_option("--val-frac", cur.val_frac, "validation-split fraction");
  c_curate->add_option("--test-frac", cur.test_frac, "test-split fraction");
  c_curate->add_option("--jobs", cur.jobs, "worker threads");

  EncodeArgs enc;
  int enc_k = 0, enc_margin = 0;
  std::uint64_t enc_seed = 0;
  bool no_overtones = false, no_drum_split = false;
  CLI::App* c_encode = app.add_subcommand("encode", "render patch tensors for annotated songs");
  CLI::Option* opt_k = c_encode->add_option("-K,--overtone-count", enc_k, "overtones per note")
                           ->check(CLI::Range(1, 4));
  CLI::Option* opt_seed = c_encode->add_option("--seed", enc_seed, "overtone-table seed");
  CLI::Option* opt_margin =
      c_encode->add_option("--margin-bars", enc_margin, "edge exclusion margin");
  c_encode->add_flag("--no-overtones", no_overtones, "zero the overtone channel");
  c_encode->add_flag("--no-drum-split", no_drum_split, "merge drums into the note channel");
  c_encode->add_option("--jobs", enc.jobs, "worker threads");

  TrainArgs trn;
  double lr = 0, wd = 0, thr = 0;
  int batch = 0, epochs = 0, patience = 0;
  std::uint64_t train_seed = 0, init_seed = 0;
  CLI::App* c_train = app.add_subcommand("train", "fit the boundary classifier");
  c_train->add_option("--tag", trn.tag, "checkpoint name");
  CLI::Option* opt_lr = c_train->add_option("--lr", lr, "learning rate");
  CLI::Option* opt_wd = c_train->add_option("--wd", wd, "weight decay");
  CLI::Option* opt_batch = c_train->add_option("--batch-size", batch, "batch size");
  CLI::Option* opt_epochs = c_train->add_option("--max-epochs", epochs, "epoch limit");
  CLI::Option* opt_patience = c_train->add_option("--patience", patience, "early-stop patience");
  CLI::Option* opt_thr = c_train->add_option("--threshold", thr, "decision threshold");
  CLI::Option* opt_tseed = c_train->add_option("--seed", train_seed, "shuffle seed");
  CLI::Option* opt_iseed = c_train->add_option("--init-seed", init_seed, "parameter-init seed");

  PredictArgs prd;
  CLI::App* c_predict = app.add_subcommand("predict", "write per-measure boundary probabilities");
  c_predict->add_option("--model", prd.model, "checkpoint path");
  c_predict->add_option("--ensemble", prd.ensemble, "comma-separated checkpoints to average")
      ->delimiter(',');
  c_predict->add_option("--split", prd.split, "restrict to one split")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  c_predict->add_option("--jobs", prd.jobs, "worker threads");

  EvaluateArgs evl;
  double ev_thr = 0, tol_sec = 0;
  int tol_bars = 0;
  CLI::App* c_evaluate = app.add_subcommand("evaluate", "score predictions against annotations");
  c_evaluate->add_option("--mode", evl.mode, "measure | bar | seconds")
      ->check(CLI::IsMember({"measure", "bar", "seconds"}));
  c_evaluate->add_option("--decoder", evl.decoder, "threshold | peak")
      ->check(CLI::IsMember({"threshold", "peak"}));
  c_evaluate->add_option("--split", evl.split, "restrict to one split")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  CLI::Option* opt_ethr = c_evaluate->add_option("--threshold", ev_thr, "decision threshold");
  CLI::Option* opt_tbar = c_evaluate->add_option("--tolerance-bars", tol_bars, "bar tolerance");
  CLI::Option* opt_tsec =
      c_evaluate->add_option("--tolerance-seconds", tol_sec, "time tolerance");

  RenderPatchArgs rnd;
  CLI::App* c_render = app.add_subcommand("render-patch", "export one patch as a PPM image");
  c_render->add_option("patches", rnd.patches, ".patches file")->required();
  c_render->add_option("--index", rnd.index, "record index");
  c_render->add_option("--out", rnd.out, "output image path");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("midiseg");
  for (const std::string& s : args) {
    argv.push_back(s.c_str());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    PipelineConfig config = load_pipeline_config(config_path);
    if (opt_corpus->count()) {
      config.corpus_dir = corpus_dir;
    }
    if (opt_out->count()) {
      config.out_dir = out_dir;
    }
    if (opt_ann->count()) {
      config.annotations = annotations;
    }
    if (opt_k->count()) {
      config.encode.k = enc_k;
    }
    if (opt_seed->count()) {
      config.encode.seed = enc_seed;
    }
    if (opt_margin->count()) {
      config.encode.margin_bars = enc_margin;
    }
    if (no_overtones) {
      config.encode.overtones = false;
    }
    if (no_drum_split) {
      config.encode.drum_split = false;
    }
    if (opt_lr->count()) {
      config.train.learning_rate = lr;
    }
    if (opt_wd->count()) {
      config.train.weight_decay = wd;
    }
    if (opt_batch->count()) {
      config.train.batch_size = batch;
    }
    if (opt_epochs->count()) {
      config.train.max_epochs = epochs;
    }
    if (opt_patience->count()) {
      config.train.patience = patience;
    }
    if (opt_thr->count()) {
      config.train.threshold = thr;
    }
    if (opt_tseed->count()) {
      config.train.seed = train_seed;
    }
    if (opt_iseed->count()) {
      config.model.init_seed = init_seed;
    }
    if (opt_ethr->count()) {
      config.eval.threshold = ev_thr;
    }
    if (opt_tbar->count()) {
      config.eval.tolerance_bars = tol_bars;
    }
    if (opt_tsec->count()) {
      config.eval.tolerance_seconds = tol_sec;
    }

    if (app.got_subcommand(c_inspect)) {
      return cmd_inspect(config, insp);
    }
    if (app.got_subcommand(c_curate)) {
      return cmd_curate(config, cur);
    }
    if (app.got_subcommand(c_encode)) {
      return cmd_encode(config, enc);
    }
    if (app.got_subcommand(c_train)) {
      return cmd_train(config, trn);
    }
    if (app.got_subcommand(c_predict)) {
      return cmd_predict(config, prd);
    }
    if (app.got_subcommand(c_evaluate)) {
      return cmd_evaluate(config, evl);
    }
    if (app.got_subcommand(c_render)) {
      return cmd_render_patch(config, rnd);
    }
    std::cerr << "midiseg: no subcommand given\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "midiseg: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace midiseg::cli
