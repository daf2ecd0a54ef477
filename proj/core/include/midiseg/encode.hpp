// 3-channel piano-roll rendering: notes on a 4-ticks-per-beat grid, drums in
// their own channel, synthesized overtones in a third, and fixed 3x128x512
// patches centered on bar starts.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "midiseg/smf.hpp"

namespace midiseg::encode {

struct QuantizedNote {
  std::int64_t onset_q = 0;    // grid ticks, 4 per beat
  std::int64_t duration_q = 1; // >= 1; drums are fixed to 1 (one 16th note)
  std::uint8_t pitch = 0;
  float velocity = 0.0f;
  std::uint8_t program = 0;
  bool is_drum = false;
};

struct InvalidK : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct OvertoneEntry {
  int multiple = 2;    // integer frequency multiple, in {2,3,4,5}
  float factor = 0.0f; // velocity factor; factors are strictly decreasing per row
};

// Random but fixed harmonic series per program, a pure function of (seed, K).
struct OvertoneTable {
  static constexpr int kNumPrograms = 128;
  std::uint64_t seed = 0;
  int k = 3;
  std::array<std::vector<OvertoneEntry>, kNumPrograms> rows;

  std::span<const OvertoneEntry> row(std::uint8_t program) const { return rows[program]; }
};

OvertoneTable build_overtone_table(std::uint64_t seed, int k);

// base_pitch + round(12 * log2(multiple)); empty when the result leaves 0..127.
std::optional<int> overtone_pitch(int base_pitch, int multiple);

// Channel 0: merged non-drum notes. Channel 1: drums. Channel 2: overtones.
class PianoRoll {
 public:
  static constexpr int kChannels = 3;
  static constexpr int kPitches = 128;
  enum Channel { kNotes = 0, kDrums = 1, kOvertones = 2 };

  explicit PianoRoll(std::int64_t width)
      : width_(std::max<std::int64_t>(width, 1)),
        data_(static_cast<std::size_t>(kChannels) * kPitches * width_, 0.0f) {}

  std::int64_t width() const { return width_; }

  float at(int channel, int pitch, std::int64_t t) const {
    return data_[index(channel, pitch, t)];
  }

  // Overlaps combine by maximum; values stay in [0,1].
  void deposit(int channel, int pitch, std::int64_t t, float value);

  std::span<const float> channel(int c) const {
    return std::span<const float>(data_).subspan(
        static_cast<std::size_t>(c) * kPitches * width_,
        static_cast<std::size_t>(kPitches) * width_);
  }

 private:
  std::size_t index(int channel, int pitch, std::int64_t t) const {
    return (static_cast<std::size_t>(channel) * kPitches + static_cast<std::size_t>(pitch)) *
               static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(t);
  }

  std::int64_t width_;
  std::vector<float> data_;
};

struct Patch {
  static constexpr int kChannels = 3;
  static constexpr int kHeight = 128;
  static constexpr int kWidth = 512;  // 128 quarter notes; center column is 256
  static constexpr int kCenterColumn = kWidth / 2;

  std::vector<float> data;  // row-major (channel, pitch, column)
  int center_measure_index = 0;
  bool label = false;

  Patch() : data(static_cast<std::size_t>(kChannels) * kHeight * kWidth, 0.0f) {}

  float at(int channel, int pitch, int column) const {
    return data[(static_cast<std::size_t>(channel) * kHeight + static_cast<std::size_t>(pitch)) *
                    kWidth +
                static_cast<std::size_t>(column)];
  }
};

// Rescale onsets/durations by 4/ppq, round to nearest; durations clamp to
// >= 1 and drum durations are overwritten to one grid tick.
std::vector<QuantizedNote> quantize_events(const smf::ParsedSong& song);

struct RenderOptions {
  bool overtones = true;
  bool drum_split = true;  // false merges drums into channel 0
};

PianoRoll render_pianoroll(std::span<const QuantizedNote> notes, const OvertoneTable& table,
                           const RenderOptions& opts = {}, std::int64_t min_width = 1);

Patch extract_patch(const PianoRoll& roll, const smf::MeasureGrid& grid, int measure_index,
                    const std::unordered_set<int>& boundaries);

// Lossless 8-bit PPM composite (R = notes, G = drums, B = overtones),
// pitch 127 on the top row.
void export_patch_image(const Patch& patch, const std::filesystem::path& path);

// Patch tensor file: per record an 8-byte header of little-endian u16
// (channels, height, width, label) followed by the row-major f32 payload.
// Records concatenate; order is the caller's measure order.
void write_patches(std::span<const Patch> patches, const std::filesystem::path& path);
std::vector<Patch> read_patches(const std::filesystem::path& path);

}  // namespace midiseg::encode
