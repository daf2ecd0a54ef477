#include "fixtures.hpp"

#include <fstream>
#include <random>
#include <stdexcept>
#include <utility>

namespace midiseg::testing {
namespace {

namespace fs = std::filesystem;

void push_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

}  // namespace

SmfBuilder& SmfBuilder::begin_track() {
  tracks_.emplace_back();
  last_status_ = 0;
  return *this;
}

void SmfBuilder::vlq(std::int64_t value) {
  if (value < 0) {
    throw std::invalid_argument("negative delta time");
  }
  std::uint8_t stack[10];
  int n = 0;
  do {
    stack[n++] = static_cast<std::uint8_t>(value & 0x7f);
    value >>= 7;
  } while (value > 0);
  std::vector<std::uint8_t>& t = tracks_.back();
  while (n > 1) {
    t.push_back(static_cast<std::uint8_t>(stack[--n] | 0x80));
  }
  t.push_back(stack[0]);
}

void SmfBuilder::status(std::uint8_t byte, bool running) {
  if (running) {
    if (byte != last_status_) {
      throw std::logic_error("running status requested but status byte differs");
    }
    return;
  }
  tracks_.back().push_back(byte);
  last_status_ = byte;
}

SmfBuilder& SmfBuilder::note_on(std::int64_t delta, int channel, int pitch, int velocity,
                                bool running) {
  vlq(delta);
  status(static_cast<std::uint8_t>(0x90 | channel), running);
  tracks_.back().push_back(static_cast<std::uint8_t>(pitch));
  tracks_.back().push_back(static_cast<std::uint8_t>(velocity));
  return *this;
}

SmfBuilder& SmfBuilder::note_off(std::int64_t delta, int channel, int pitch, int velocity,
                                 bool running) {
  vlq(delta);
  status(static_cast<std::uint8_t>(0x80 | channel), running);
  tracks_.back().push_back(static_cast<std::uint8_t>(pitch));
  tracks_.back().push_back(static_cast<std::uint8_t>(velocity));
  return *this;
}

SmfBuilder& SmfBuilder::control_change(std::int64_t delta, int channel, int controller, int value,
                                       bool running) {
  vlq(delta);
  status(static_cast<std::uint8_t>(0xB0 | channel), running);
  tracks_.back().push_back(static_cast<std::uint8_t>(controller));
  tracks_.back().push_back(static_cast<std::uint8_t>(value));
  return *this;
}

SmfBuilder& SmfBuilder::program_change(std::int64_t delta, int channel, int program) {
  vlq(delta);
  status(static_cast<std::uint8_t>(0xC0 | channel), false);
  tracks_.back().push_back(static_cast<std::uint8_t>(program));
  return *this;
}

SmfBuilder& SmfBuilder::tempo(std::int64_t delta, std::uint32_t us_per_quarter) {
  vlq(delta);
  std::vector<std::uint8_t>& t = tracks_.back();
  t.insert(t.end(), {0xFF, 0x51, 0x03});
  t.push_back(static_cast<std::uint8_t>((us_per_quarter >> 16) & 0xff));
  t.push_back(static_cast<std::uint8_t>((us_per_quarter >> 8) & 0xff));
  t.push_back(static_cast<std::uint8_t>(us_per_quarter & 0xff));
  last_status_ = 0;  // meta events cancel running status
  return *this;
}

SmfBuilder& SmfBuilder::time_signature(std::int64_t delta, int numerator, int denominator_log2) {
  vlq(delta);
  std::vector<std::uint8_t>& t = tracks_.back();
  t.insert(t.end(), {0xFF, 0x58, 0x04});
  t.push_back(static_cast<std::uint8_t>(numerator));
  t.push_back(static_cast<std::uint8_t>(denominator_log2));
  t.push_back(24);  // MIDI clocks per metronome click
  t.push_back(8);   // 32nd notes per quarter
  last_status_ = 0;
  return *this;
}

SmfBuilder& SmfBuilder::marker(std::int64_t delta, const std::string& text) {
  vlq(delta);
  std::vector<std::uint8_t>& t = tracks_.back();
  t.insert(t.end(), {0xFF, 0x06});
  vlq(static_cast<std::int64_t>(text.size()));
  t.insert(t.end(), text.begin(), text.end());
  last_status_ = 0;
  return *this;
}

SmfBuilder& SmfBuilder::end_track(std::int64_t delta) {
  vlq(delta);
  tracks_.back().insert(tracks_.back().end(), {0xFF, 0x2F, 0x00});
  last_status_ = 0;
  return *this;
}

std::vector<std::uint8_t> SmfBuilder::bytes() const {
  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd'};
  push_u32(out, 6);
  push_u16(out, static_cast<std::uint16_t>(format_));
  push_u16(out, static_cast<std::uint16_t>(tracks_.size()));
  push_u16(out, static_cast<std::uint16_t>(ppq_));
  for (const std::vector<std::uint8_t>& t : tracks_) {
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    push_u32(out, static_cast<std::uint32_t>(t.size()));
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> make_roundtrip_fixtures() {
  std::vector<std::vector<std::uint8_t>> fixtures;

  {
    // 1: minimal format 0, one note.
    SmfBuilder b(480, 0);
    b.begin_track().note_on(0, 0, 60, 100).note_off(480, 0, 60).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 2: running status across a chord and its releases.
    SmfBuilder b;
    b.begin_track();
    b.note_on(0, 0, 60, 90).note_on(0, 0, 64, 90, true).note_on(0, 0, 67, 90, true);
    b.note_off(480, 0, 60).note_off(0, 0, 64, 64, true).note_off(0, 0, 67, 64, true);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 3: velocity-0 note-ons acting as note-offs, all under one status byte.
    SmfBuilder b;
    b.begin_track();
    b.note_on(0, 0, 55, 80).note_on(240, 0, 55, 0, true);
    b.note_on(240, 0, 57, 80, true).note_on(240, 0, 57, 0, true);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 4: three tracks, two channels plus a conductor track.
    SmfBuilder b;
    b.begin_track().tempo(0, 600000).time_signature(0, 4, 2).end_track();
    b.begin_track().note_on(0, 0, 48, 70).note_off(960, 0, 48).end_track();
    b.begin_track().note_on(240, 1, 72, 110).note_off(480, 1, 72).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 5: tempo changes between notes.
    SmfBuilder b;
    b.begin_track().tempo(0, 500000).tempo(960, 250000).tempo(960, 750000).end_track();
    b.begin_track();
    b.note_on(0, 0, 60, 100).note_off(480, 0, 60);
    b.note_on(480, 0, 62, 100).note_off(480, 0, 62);
    b.note_on(480, 0, 64, 100).note_off(480, 0, 64);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 6: time-signature changes 4/4 -> 3/4 -> 6/8.
    SmfBuilder b;
    b.begin_track()
        .time_signature(0, 4, 2)
        .time_signature(1920, 3, 2)
        .time_signature(1440, 6, 3)
        .end_track();
    b.begin_track().note_on(0, 0, 60, 100).note_off(4800, 0, 60).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 7: CC-7 then CC-11 ahead of the note; scaling must not disturb the raw
    // velocity that round-trips.
    SmfBuilder b;
    b.begin_track();
    b.control_change(0, 0, 7, 100).control_change(0, 0, 11, 64, true);
    b.note_on(120, 0, 60, 127).note_off(480, 0, 60);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 8: CC curves changing mid-note and between notes.
    SmfBuilder b;
    b.begin_track();
    b.control_change(0, 2, 7, 127);
    b.note_on(0, 2, 52, 96).control_change(240, 2, 11, 32).note_off(240, 2, 52);
    b.control_change(0, 2, 7, 64, false);
    b.note_on(240, 2, 54, 96).note_off(480, 2, 54);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 9: drums on channel 9 alongside a melodic channel.
    SmfBuilder b;
    b.begin_track();
    b.note_on(0, 9, 36, 120).note_on(0, 9, 42, 80, true);
    b.note_off(120, 9, 36).note_off(0, 9, 42, 64, true);
    b.end_track();
    b.begin_track().note_on(0, 3, 60, 90).note_off(960, 3, 60).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 10: program changes routing different instruments per channel.
    SmfBuilder b;
    b.begin_track();
    b.program_change(0, 0, 0).note_on(0, 0, 60, 90).note_off(480, 0, 60);
    b.program_change(0, 0, 24).note_on(0, 0, 62, 90).note_off(480, 0, 62);
    b.end_track();
    b.begin_track();
    b.program_change(0, 5, 40).note_on(0, 5, 67, 85).note_off(480, 5, 67);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 11: overlapping notes on the same pitch; offs pair first-in-first-out.
    SmfBuilder b;
    b.begin_track();
    b.note_on(0, 0, 60, 100).note_on(240, 0, 60, 80, true);
    b.note_off(240, 0, 60).note_off(240, 0, 60, 64, true);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 12: marker meta events between notes.
    SmfBuilder b;
    b.begin_track().marker(0, "Intro").marker(1920, "Verse 1").marker(1920, "Chorus").end_track();
    b.begin_track().note_on(0, 0, 60, 100).note_off(3840, 0, 60).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 13: notes spread over many channels in one track.
    SmfBuilder b;
    b.begin_track();
    for (int ch = 0; ch < 16; ++ch) {
      if (ch == 9) {
        continue;
      }
      b.note_on(ch == 0 ? 0 : 60, ch, 40 + ch, 64 + ch);
    }
    for (int ch = 0; ch < 16; ++ch) {
      if (ch == 9) {
        continue;
      }
      b.note_off(ch == 0 ? 480 : 0, ch, 40 + ch);
    }
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 14: high-resolution division.
    SmfBuilder b(960);
    b.begin_track().note_on(0, 0, 60, 100).note_off(960, 0, 60).note_on(480, 0, 61, 100)
        .note_off(1920, 0, 61).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 15: coarse division.
    SmfBuilder b(96);
    b.begin_track().note_on(0, 0, 60, 100).note_off(96, 0, 60).note_on(48, 0, 65, 90)
        .note_off(192, 0, 65).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 16: multi-byte delta times.
    SmfBuilder b;
    b.begin_track();
    b.note_on(0, 0, 60, 100).note_off(100000, 0, 60);
    b.note_on(200000, 0, 62, 100).note_off(480, 0, 62);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 17: pitch and velocity extremes.
    SmfBuilder b;
    b.begin_track();
    b.note_on(0, 0, 0, 1).note_off(480, 0, 0);
    b.note_on(0, 0, 127, 127).note_off(480, 0, 127);
    b.end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 18: an empty conductor track beside a note track.
    SmfBuilder b;
    b.begin_track().end_track();
    b.begin_track().note_on(0, 4, 70, 88).note_off(480, 4, 70).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 19: simultaneous onsets across tracks; merged order must be stable.
    SmfBuilder b;
    b.begin_track().note_on(0, 0, 60, 90).note_off(480, 0, 60).end_track();
    b.begin_track().note_on(0, 1, 60, 90).note_off(480, 1, 60).end_track();
    b.begin_track().note_on(0, 2, 55, 90).note_off(480, 2, 55).end_track();
    fixtures.push_back(b.bytes());
  }
  {
    // 20: everything at once — running status, CCs, tempo and meter changes,
    // drums, markers, velocity-0 offs.
    SmfBuilder b;
    b.begin_track()
        .tempo(0, 500000)
        .time_signature(0, 4, 2)
        .marker(0, "A")
        .tempo(1920, 400000)
        .time_signature(1920, 3, 2)
        .marker(0, "B")
        .end_track();
    b.begin_track();
    b.control_change(0, 0, 7, 110).control_change(0, 0, 11, 90, true);
    b.note_on(0, 0, 60, 100).note_on(240, 0, 64, 100, true).note_on(240, 0, 60, 0, true);
    b.note_on(240, 0, 64, 0, true);
    b.end_track();
    b.begin_track();
    b.note_on(0, 9, 36, 120).note_off(120, 9, 36).note_on(360, 9, 38, 110).note_off(120, 9, 38);
    b.end_track();
    fixtures.push_back(b.bytes());
  }

  return fixtures;
}

std::vector<std::uint8_t> make_section_song(const SongSpec& spec) {
  const int ppq = spec.ppq;
  const std::int64_t lead = static_cast<std::int64_t>(spec.lead_silence_beats) * ppq;
  std::int64_t total_bars = 0;
  for (const SectionSpec& s : spec.sections) {
    total_bars += s.bars;
  }
  const std::int64_t end_tick = lead + total_bars * 4 * ppq;

  SmfBuilder b(ppq);

  // Conductor track: tempo, meter, markers at section starts.
  b.begin_track().tempo(0, 500000).time_signature(0, 4, 2);
  {
    const int n_markers =
        spec.marker_count < 0 ? static_cast<int>(spec.sections.size()) : spec.marker_count;
    std::int64_t prev = 0;
    std::int64_t section_start = lead;
    for (int i = 0; i < static_cast<int>(spec.sections.size()); ++i) {
      if (i < n_markers) {
        b.marker(section_start - prev, spec.marker_prefix + " " + std::to_string(i + 1));
        prev = section_start;
      }
      section_start += static_cast<std::int64_t>(spec.sections[i].bars) * 4 * ppq;
    }
    if (spec.marker_past_end) {
      b.marker(end_tick - prev, spec.marker_prefix + " coda");
      prev = end_tick;
      b.marker(ppq, spec.marker_prefix + " end");
    }
  }
  b.end_track();

  // Melody track: four quarter notes per bar around the section base pitch.
  b.begin_track();
  if (spec.program != 0) {
    b.program_change(0, spec.channel, spec.program);
  }
  static constexpr int kOffsets[4] = {0, 4, 7, 11};
  std::int64_t prev = 0;
  std::int64_t tick = lead;
  for (const SectionSpec& s : spec.sections) {
    for (int bar = 0; bar < s.bars; ++bar) {
      for (int beat = 0; beat < 4; ++beat) {
        const int pitch = s.base_pitch + kOffsets[beat];
        b.note_on(tick - prev, spec.channel, pitch, spec.velocity);
        b.note_off(ppq, spec.channel, pitch);
        prev = tick + ppq;
        tick += ppq;
      }
    }
  }
  b.end_track();

  if (spec.drums) {
    b.begin_track();
    std::int64_t dprev = 0;
    for (std::int64_t beat = 0; beat < total_bars * 4; ++beat) {
      const std::int64_t t = lead + beat * ppq;
      const int pitch = (beat % 2 == 0) ? 36 : 38;
      b.note_on(t - dprev, 9, pitch, 110);
      b.note_off(ppq / 2, 9, pitch);
      dprev = t + ppq / 2;
    }
    b.end_track();
  }

  return b.bytes();
}

namespace {

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

SongSpec keeper_spec(int i) {
  SongSpec s;
  const int n_sections = 4 + (i % 2);
  const int bars = 7 + (i % 3);
  for (int j = 0; j < n_sections; ++j) {
    s.sections.push_back({bars, 40 + 3 * i + 5 * j});
  }
  return s;
}

}  // namespace

std::vector<std::string> write_curation_corpus(
    const fs::path& dir,
    std::vector<std::pair<std::string, std::vector<std::string>>>* expected_reasons) {
  fs::create_directories(dir);
  std::vector<std::string> keep;
  auto expect = [&](const std::string& id, std::vector<std::string> reasons) {
    if (expected_reasons != nullptr) {
      expected_reasons->emplace_back(id, std::move(reasons));
    }
  };

  for (int i = 0; i < 10; ++i) {
    const std::string id = "k0" + std::to_string(i);
    write_file(dir / (id + ".mid"), make_section_song(keeper_spec(i)));
    keep.push_back(id);
    expect(id, {});
  }
  for (int i = 0; i < 8; ++i) {
    SongSpec s = keeper_spec(i);
    s.marker_count = 2;
    const std::string id = "r_few0" + std::to_string(i);
    write_file(dir / (id + ".mid"), make_section_song(s));
    expect(id, {"too_few_markers"});
  }
  for (int i = 0; i < 6; ++i) {
    SongSpec s;
    for (int j = 0; j < 6; ++j) {
      s.sections.push_back({2, 45 + 2 * i + 4 * j});
    }
    const std::string id = "r_low0" + std::to_string(i);
    write_file(dir / (id + ".mid"), make_section_song(s));
    expect(id, {"ratio_too_low"});
  }
  for (int i = 0; i < 5; ++i) {
    SongSpec s;
    for (int j = 0; j < 3; ++j) {
      s.sections.push_back({34, 41 + 2 * i + 6 * j});
    }
    const std::string id = "r_high0" + std::to_string(i);
    write_file(dir / (id + ".mid"), make_section_song(s));
    expect(id, {"ratio_too_high"});
  }
  for (int i = 0; i < 5; ++i) {
    SongSpec s;
    for (int j = 0; j < 3; ++j) {
      s.sections.push_back({10, 44 + 2 * i + 4 * j});
    }
    s.marker_count = 1;  // only the marker at tick 0 (== first onset)
    s.marker_past_end = true;
    const std::string id = "r_int0" + std::to_string(i);
    write_file(dir / (id + ".mid"), make_section_song(s));
    expect(id, {"no_interior_markers"});
  }

  // Six cosmetic variants of keepers; all hash to an existing fingerprint.
  {
    write_file(dir / "zz_dup00.mid", make_section_song(keeper_spec(0)));
    write_file(dir / "zz_dup01.mid", make_section_song(keeper_spec(1)));
    SongSpec octave = keeper_spec(2);
    for (SectionSpec& sec : octave.sections) {
      sec.base_pitch += 12;
    }
    write_file(dir / "zz_dup02.mid", make_section_song(octave));
    SongSpec shifted = keeper_spec(3);
    shifted.lead_silence_beats = 4;
    write_file(dir / "zz_dup03.mid", make_section_song(shifted));
    SongSpec renamed = keeper_spec(4);
    renamed.marker_prefix = "Part";
    write_file(dir / "zz_dup04.mid", make_section_song(renamed));
    SongSpec quiet = keeper_spec(5);
    quiet.velocity = 64;
    write_file(dir / "zz_dup05.mid", make_section_song(quiet));
    for (int i = 0; i < 6; ++i) {
      expect("zz_dup0" + std::to_string(i), {"duplicate"});
    }
  }

  return keep;
}

std::vector<std::string> write_pipeline_corpus(const fs::path& dir, int n_songs) {
  fs::create_directories(dir);
  std::vector<std::string> ids;
  for (int i = 0; i < n_songs; ++i) {
    SongSpec s;
    const int bars = 12 + (i % 2);
    for (int j = 0; j < 4; ++j) {
      s.sections.push_back({bars, 38 + 5 * i + 7 * j});
    }
    s.drums = (i % 2 == 0);
    s.program = 8 * i;
    const std::string id = "song" + std::to_string(i);
    write_file(dir / (id + ".mid"), make_section_song(s));
    ids.push_back(id);
  }
  return ids;
}

std::vector<encode::Patch> make_toy_patches() {
  std::mt19937_64 rng(20240817);
  auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto fill = [](encode::Patch& p, int pitch_lo, int pitch_hi, int col_lo, int col_hi, float v) {
    for (int pitch = pitch_lo; pitch < pitch_hi; ++pitch) {
      for (int col = col_lo; col < col_hi; ++col) {
        p.data[(0 * encode::Patch::kHeight + static_cast<std::size_t>(pitch)) *
                   encode::Patch::kWidth +
               static_cast<std::size_t>(col)] = v;
      }
    }
  };

  // Positives carry two bright registers that switch at the center column;
  // negatives carry one faint narrow band throughout. The ink contrast keeps
  // the classes separable by the average activation of almost any filter, so
  // plain gradient descent overfits the set quickly.
  // Boundaries are the minority class, as in real corpora; the training
  // loop's positive duplication brings the epochs back to near balance.
  std::vector<encode::Patch> out;
  for (int i = 0; i < 17; ++i) {
    encode::Patch p;
    p.label = true;
    p.center_measure_index = 16 + i;
    const int low = 12 + static_cast<int>(rng() % 8);
    const int high = 72 + static_cast<int>(rng() % 8);
    const float v = static_cast<float>(0.8 + 0.2 * unit());
    fill(p, low, low + 32, 0, encode::Patch::kCenterColumn, v);
    fill(p, high, high + 32, encode::Patch::kCenterColumn, encode::Patch::kWidth, v);
    out.push_back(std::move(p));
  }
  for (int i = 0; i < 33; ++i) {
    encode::Patch p;
    p.label = false;
    p.center_measure_index = 16 + i;
    const int band = 48 + static_cast<int>(rng() % 16);
    const float v = static_cast<float>(0.1 + 0.1 * unit());
    fill(p, band, band + 8, 0, encode::Patch::kWidth, v);
    out.push_back(std::move(p));
  }
  return out;
}

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  std::uint64_t nonce = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  path_ = fs::temp_directory_path() / ("midiseg_" + tag + "_" + std::to_string(nonce));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

}  // namespace midiseg::testing
