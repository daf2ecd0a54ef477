#include "midiseg/curate.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"

#include "midiseg/encode.hpp"

namespace midiseg::curate {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    h ^= (value >> (8 * i)) & 0xFF;
    h *= kFnvPrime;
  }
}

}  // namespace

Fingerprint fingerprint(const smf::ParsedSong& song) {
  if (song.notes.empty()) throw EmptySong("cannot fingerprint a song with no notes");

  // Onsets on the 16th grid (the 4-per-beat grid), folded to pitch classes.
  auto quantized = encode::quantize_events(song);
  std::int64_t first = quantized.front().onset_q;
  std::int64_t last = quantized.front().onset_q;
  for (const auto& n : quantized) {
    first = std::min(first, n.onset_q);
    last = std::max(last, n.onset_q);
  }

  std::map<std::int64_t, std::uint16_t> chroma;  // column -> 12-bit presence
  for (const auto& n : quantized) {
    chroma[n.onset_q] |= static_cast<std::uint16_t>(1u << (n.pitch % 12));
  }

  // Hash (offset-from-first, bits) pairs; starting at the first onset makes
  // leading/trailing silence removal implicit.
  std::uint64_t h = kFnvOffset;
  for (const auto& [column, bits] : chroma) {
    fnv_mix(h, static_cast<std::uint64_t>(column - first), 8);
    fnv_mix(h, bits, 2);
  }
  return Fingerprint{h, last - first + 1};
}

std::string to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::TooFewMarkers: return "too_few_markers";
    case RejectReason::RatioTooLow: return "ratio_too_low";
    case RejectReason::RatioTooHigh: return "ratio_too_high";
    case RejectReason::NoInteriorMarkers: return "no_interior_markers";
    case RejectReason::Duplicate: return "duplicate";
  }
  return "unknown";
}

CurationDecision filter_candidates(const smf::ParsedSong& song, const smf::MeasureGrid& grid) {
  CurationDecision decision;

  const auto n_markers = song.markers.size();
  if (n_markers < 3) decision.reasons.push_back(RejectReason::TooFewMarkers);

  if (!song.notes.empty() && n_markers > 0) {
    std::int64_t first_onset = song.notes.front().onset_tick;
    std::int64_t last_onset = song.notes.back().onset_tick;

    // Measures counted over the first-to-last onset span.
    int first_bar = grid.index_containing(static_cast<double>(first_onset) / song.ppq);
    int last_bar = grid.index_containing(static_cast<double>(last_onset) / song.ppq);
    double measures = static_cast<double>(last_bar - first_bar + 1);
    double ratio = measures / static_cast<double>(n_markers);
    if (ratio < 6.0) decision.reasons.push_back(RejectReason::RatioTooLow);
    if (ratio > 24.0) decision.reasons.push_back(RejectReason::RatioTooHigh);

    bool interior = std::any_of(song.markers.begin(), song.markers.end(),
                                [&](const smf::Marker& m) {
                                  return m.tick > first_onset && m.tick < last_onset;
                                });
    if (!interior) decision.reasons.push_back(RejectReason::NoInteriorMarkers);
  } else {
    decision.reasons.push_back(RejectReason::NoInteriorMarkers);
  }

  decision.keep = decision.reasons.empty();
  return decision;
}

std::vector<int> quantize_markers_to_bars(std::span<const smf::Marker> markers, int ppq,
                                          const smf::MeasureGrid& grid) {
  if (grid.size() == 0) throw std::invalid_argument("empty measure grid");
  std::set<int> bars;
  for (const smf::Marker& m : markers) {
    bars.insert(grid.nearest_start_index(static_cast<double>(m.tick) / ppq));
  }
  return {bars.begin(), bars.end()};
}

std::vector<int> pickup_correction(std::span<const int> boundaries,
                                   const smf::MeasureGrid& grid) {
  std::set<int> out;
  for (int b : boundaries) {
    if (b < 0 || b >= grid.size()) throw std::out_of_range("boundary index outside grid");
    bool short_bar = grid[b].duration_beats < 2.0;
    bool next_full = b + 1 < grid.size() && grid[b + 1].duration_beats >= 2.0;
    out.insert(short_bar && next_full ? b + 1 : b);
  }
  return {out.begin(), out.end()};
}

std::vector<DedupGroup> dedup(
    const std::vector<std::pair<std::string, Fingerprint>>& fingerprints) {
  std::map<std::pair<std::uint64_t, std::int64_t>, std::vector<std::string>> groups;
  for (const auto& [file_id, fp] : fingerprints) {
    groups[{fp.digest, fp.columns}].push_back(file_id);
  }
  std::vector<DedupGroup> out;
  out.reserve(groups.size());
  for (auto& [key, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    DedupGroup g;
    g.kept = ids.front();
    g.dropped.assign(ids.begin() + 1, ids.end());
    out.push_back(std::move(g));
  }
  std::sort(out.begin(), out.end(),
            [](const DedupGroup& a, const DedupGroup& b) { return a.kept < b.kept; });
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

std::string to_string(Subset subset) {
  return subset == Subset::tubb ? "tubb" : "non_tubb";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + s);
}

Subset subset_from_string(const std::string& s) {
  if (s == "tubb") return Subset::tubb;
  if (s == "non_tubb") return Subset::non_tubb;
  throw std::invalid_argument("unknown subset: " + s);
}

namespace {

void validate(const AnnotationRecord& r) {
  if (r.boundaries_beats.size() != r.boundaries_seconds.size()) {
    throw InvariantViolation(r.file_id + ": beats and seconds lists differ in length");
  }
  for (std::size_t i = 1; i < r.boundaries_beats.size(); ++i) {
    if (r.boundaries_beats[i] <= r.boundaries_beats[i - 1] ||
        r.boundaries_seconds[i] <= r.boundaries_seconds[i - 1]) {
      throw InvariantViolation(r.file_id + ": boundaries are not strictly increasing");
    }
  }
}

}  // namespace

void export_annotations(std::span<const AnnotationRecord> records,
                        const std::filesystem::path& path) {
  for (const AnnotationRecord& r : records) validate(r);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const AnnotationRecord& r : records) {
    nlohmann::ordered_json j;
    j["file_id"] = r.file_id;
    j["subset"] = to_string(r.subset);
    j["split"] = to_string(r.split);
    j["boundaries_beats"] = r.boundaries_beats;
    j["boundaries_seconds"] = r.boundaries_seconds;
    j["marker_texts"] = r.marker_texts;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<AnnotationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    AnnotationRecord r;
    r.file_id = j.at("file_id").get<std::string>();
    r.boundaries_beats = j.at("boundaries_beats").get<std::vector<double>>();
    r.boundaries_seconds = j.at("boundaries_seconds").get<std::vector<double>>();
    if (j.contains("marker_texts")) {
      r.marker_texts = j["marker_texts"].get<std::vector<std::string>>();
    }
    if (j.contains("split")) r.split = split_from_string(j["split"].get<std::string>());
    if (j.contains("subset")) r.subset = subset_from_string(j["subset"].get<std::string>());
    validate(r);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace midiseg::curate
