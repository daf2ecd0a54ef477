// Test fixtures: a raw SMF byte assembler kept independent of smf::write_midi
// so parser tests have a second implementation to check against, plus
// synthetic corpora and the bundled toy patch dataset.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "midiseg/encode.hpp"

namespace midiseg::testing {

// Assembles SMF bytes track by track. Every write is explicit: delta times,
// status bytes (or their omission under running status) and meta payloads are
// laid down exactly as requested.
class SmfBuilder {
 public:
  explicit SmfBuilder(int ppq = 480, int format = 1) : ppq_(ppq), format_(format) {}

  SmfBuilder& begin_track();

  // Channel events. `running` omits the status byte; callers must only set it
  // when the previous event on the track had the same status.
  SmfBuilder& note_on(std::int64_t delta, int channel, int pitch, int velocity,
                      bool running = false);
  SmfBuilder& note_off(std::int64_t delta, int channel, int pitch, int velocity = 64,
                       bool running = false);
  SmfBuilder& control_change(std::int64_t delta, int channel, int controller, int value,
                             bool running = false);
  SmfBuilder& program_change(std::int64_t delta, int channel, int program);

  // Meta events.
  SmfBuilder& tempo(std::int64_t delta, std::uint32_t us_per_quarter);
  SmfBuilder& time_signature(std::int64_t delta, int numerator, int denominator_log2);
  SmfBuilder& marker(std::int64_t delta, const std::string& text);
  SmfBuilder& end_track(std::int64_t delta = 0);

  std::vector<std::uint8_t> bytes() const;

  int ppq() const { return ppq_; }

 private:
  void vlq(std::int64_t value);
  void status(std::uint8_t byte, bool running);

  int ppq_;
  int format_;
  std::vector<std::vector<std::uint8_t>> tracks_;
  std::uint8_t last_status_ = 0;
};

// The 20 round-trip fixtures: multi-track layouts, running status, tempo and
// time-signature changes, CC-7/11 curves, velocity-0 note-offs, channel and
// pitch extremes.
std::vector<std::vector<std::uint8_t>> make_roundtrip_fixtures();

// One annotated song: `sections` bars each hold four quarter notes around the
// section's base pitch, a marker sits on every section start, and an optional
// drum track runs throughout. All sections are 4/4.
struct SectionSpec {
  int bars = 8;
  int base_pitch = 60;
};

struct SongSpec {
  int ppq = 480;
  std::vector<SectionSpec> sections;
  int channel = 0;
  int program = 0;
  int velocity = 96;
  bool drums = false;
  int lead_silence_beats = 0;  // shifts notes and markers together
  int marker_count = -1;       // -1: one marker per section; else first N sections
  bool marker_past_end = false;
  std::string marker_prefix = "Section";
};

std::vector<std::uint8_t> make_section_song(const SongSpec& spec);

// Writes the 40-file curation corpus into `dir`. Returns the expected keep
// set; `expected_reasons` receives the reject-reason names per rejected file.
std::vector<std::string> write_curation_corpus(
    const std::filesystem::path& dir,
    std::vector<std::pair<std::string, std::vector<std::string>>>* expected_reasons = nullptr);

// Writes a small all-keeper corpus (id prefix "song"); every file passes the
// curation filters and carries boundaries both inside and outside a 16-bar
// exclusion margin.
std::vector<std::string> write_pipeline_corpus(const std::filesystem::path& dir, int n_songs = 5);

// The bundled toy dataset, 50 patches: 17 boundary-contrast patches (label 1,
// two bright registers switching at the center column) and 33 homogeneous
// patches (label 0, one faint band throughout).
std::vector<encode::Patch> make_toy_patches();

// Small unique temp directory under the system temp root, removed by TempDir's
// destructor.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace midiseg::testing
