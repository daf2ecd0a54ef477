// Corpus curation: onset-chromagram dedup, marker-based candidate filters,
// bar-line quantization of markers, pickup correction, and annotation export.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "midiseg/smf.hpp"

namespace midiseg::curate {

struct EmptySong : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Digest of the silence-trimmed binary 12-bin onset chromagram on the
// 16th-note grid. Identical note content hashes identically.
struct Fingerprint {
  std::uint64_t digest = 0;
  std::int64_t columns = 0;  // non-silent grid span (leading/trailing silence removed)

  bool operator==(const Fingerprint&) const = default;
};

Fingerprint fingerprint(const smf::ParsedSong& song);

enum class RejectReason {
  TooFewMarkers,      // fewer than 3 markers
  RatioTooLow,        // measures per marker < 6
  RatioTooHigh,       // measures per marker > 24
  NoInteriorMarkers,  // no marker strictly between first and last note onset
  Duplicate,          // same fingerprint as an earlier file
};

std::string to_string(RejectReason reason);

struct CurationDecision {
  bool keep = true;
  std::vector<RejectReason> reasons;  // keep == reasons.empty()
};

CurationDecision filter_candidates(const smf::ParsedSong& song, const smf::MeasureGrid& grid);

// Nearest bar start per marker (ties round down), deduplicated and sorted.
std::vector<int> quantize_markers_to_bars(std::span<const smf::Marker> markers, int ppq,
                                          const smf::MeasureGrid& grid);

// A boundary on a bar shorter than a half note followed by a bar of at least
// a half note moves forward one bar. Applied once; no cascading.
std::vector<int> pickup_correction(std::span<const int> boundaries, const smf::MeasureGrid& grid);

struct DedupGroup {
  std::string kept;  // lexicographically smallest file id in the group
  std::vector<std::string> dropped;
};

std::vector<DedupGroup> dedup(
    const std::vector<std::pair<std::string, Fingerprint>>& fingerprints);

enum class Split { train, validation, test };
enum class Subset { tubb, non_tubb };

std::string to_string(Split split);
std::string to_string(Subset subset);
Split split_from_string(const std::string& s);
Subset subset_from_string(const std::string& s);

struct AnnotationRecord {
  std::string file_id;
  std::vector<double> boundaries_beats;    // bar-quantized, strictly increasing
  std::vector<double> boundaries_seconds;  // same length as boundaries_beats
  std::vector<std::string> marker_texts;
  Split split = Split::train;
  Subset subset = Subset::non_tubb;
};

// One JSON object per line: file_id, subset, split, boundaries_beats,
// boundaries_seconds, marker_texts. Loads the released annotation format.
void export_annotations(std::span<const AnnotationRecord> records,
                        const std::filesystem::path& path);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

}  // namespace midiseg::curate
