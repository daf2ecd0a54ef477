// Standard MIDI File decoding: typed note/marker/tempo/time-signature events,
// tick->second conversion and the bar grid implied by the time signatures.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace midiseg::smf {

struct SmfError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Bad "MThd" magic, header length, or unsupported format.
struct MalformedHeader : SmfError {
  using SmfError::SmfError;
};
// SMPTE time division; only PPQ-based files are accepted.
struct UnsupportedDivision : SmfError {
  using SmfError::SmfError;
};
// Chunk or event data runs past the end of its buffer.
struct TruncatedChunk : SmfError {
  using SmfError::SmfError;
};

// One resolved note. `velocity` already carries the CC-7 * CC-11 product,
// scaled to [0,1]; `raw_velocity` is the untouched note-on byte.
struct NoteEvent {
  std::int64_t onset_tick = 0;
  std::int64_t duration_ticks = 1;  // >= 1 after clamping
  std::uint8_t pitch = 0;
  float velocity = 0.0f;
  std::uint8_t raw_velocity = 1;
  std::uint8_t program = 0;
  std::uint8_t channel = 0;
  std::uint16_t track = 0;
  bool is_drum = false;  // channel 10 in 1-based MIDI numbering
};

struct Marker {
  std::int64_t tick = 0;
  std::string text;
};

struct TempoEvent {
  std::int64_t tick = 0;
  std::uint32_t us_per_quarter = 500000;
};

// Tick-ordered tempo events. Normalized on construction: sorted, one event
// per tick (last wins), implicit 500000 us/qn at tick 0 when absent.
class TempoMap {
 public:
  static constexpr std::uint32_t kDefaultUsPerQuarter = 500000;

  TempoMap() : events_{TempoEvent{}} {}
  explicit TempoMap(std::vector<TempoEvent> events);

  std::span<const TempoEvent> events() const { return events_; }

 private:
  std::vector<TempoEvent> events_;
};

struct TimeSigEvent {
  std::int64_t tick = 0;
  int numerator = 4;
  int denominator = 4;  // power of two in {1,2,4,8,16,32}
};

// Tick-ordered time signatures, normalized like TempoMap (default 4/4 at 0).
class TimeSigMap {
 public:
  TimeSigMap() : events_{TimeSigEvent{}} {}
  explicit TimeSigMap(std::vector<TimeSigEvent> events);

  std::span<const TimeSigEvent> events() const { return events_; }

 private:
  std::vector<TimeSigEvent> events_;
};

struct ParsedSong {
  int ppq = 480;
  std::vector<NoteEvent> notes;  // sorted by (onset_tick, pitch, track)
  std::vector<Marker> markers;
  TempoMap tempo_map;
  TimeSigMap timesig_map;
  std::vector<std::string> warnings;  // non-fatal issues, e.g. dangling note-offs
};

struct Measure {
  double start_beat = 0.0;
  double duration_beats = 0.0;
  std::int64_t start_grid_tick = 0;  // round(start_beat * 4), the 4-per-beat grid
};

// Bar starts laid down from beat 0. A time-signature change starts a new
// measure at its event position; a mid-measure change truncates the bar.
class MeasureGrid {
 public:
  MeasureGrid() = default;
  explicit MeasureGrid(std::vector<Measure> measures) : measures_(std::move(measures)) {}

  std::span<const Measure> measures() const { return measures_; }
  int size() const { return static_cast<int>(measures_.size()); }
  const Measure& operator[](int i) const { return measures_[static_cast<std::size_t>(i)]; }

  // Index of the measure whose span contains `beat` (clamped to the grid).
  int index_containing(double beat) const;
  // Index of the bar start nearest to `beat`; exact ties go to the lower bar.
  int nearest_start_index(double beat) const;

 private:
  std::vector<Measure> measures_;
};

ParsedSong parse_midi(std::span<const std::uint8_t> bytes);
ParsedSong parse_midi_file(const std::filesystem::path& path);

// Serializes notes, markers, tempo and time-signature maps back to SMF bytes
// (format 1, no running status). Control-change state is not retained by
// ParsedSong, so only raw velocities survive a round trip.
std::vector<std::uint8_t> write_midi(const ParsedSong& song);
void write_midi_file(const ParsedSong& song, const std::filesystem::path& path);

// Piecewise-linear accumulation over tempo segments:
// sum of (dtick / ppq) * (us_per_quarter / 1e6).
double ticks_to_seconds(const TempoMap& tempo_map, int ppq, double tick);

// Lays measures down sequentially from beat 0 until a bar start lands at or
// beyond `end_beat` (that bar start is included).
MeasureGrid compute_measures(const TimeSigMap& timesig_map, int ppq, double end_beat);

// Last beat touched by any note or marker; 0 for an empty song.
double content_end_beat(const ParsedSong& song);

}  // namespace midiseg::smf
