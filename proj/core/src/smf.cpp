#include "midiseg/smf.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace midiseg::smf {

namespace {

constexpr double kBeatEps = 1e-9;

struct Reader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;

  std::size_t remaining() const { return data.size() - pos; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw TruncatedChunk(std::string("unexpected end of data while reading ") + what);
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return data[pos++];
  }

  std::uint16_t u16be(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>((data[pos] << 8) | data[pos + 1]);
    pos += 2;
    return v;
  }

  std::uint32_t u32be(const char* what) {
    need(4, what);
    std::uint32_t v = (static_cast<std::uint32_t>(data[pos]) << 24) |
                      (static_cast<std::uint32_t>(data[pos + 1]) << 16) |
                      (static_cast<std::uint32_t>(data[pos + 2]) << 8) |
                      static_cast<std::uint32_t>(data[pos + 3]);
    pos += 4;
    return v;
  }

  // Variable-length quantity, at most 4 bytes per the SMF spec.
  std::uint32_t vlq(const char* what) {
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8(what);
      value = (value << 7) | (b & 0x7Fu);
      if ((b & 0x80u) == 0) return value;
    }
    throw TruncatedChunk(std::string("variable-length quantity longer than 4 bytes in ") + what);
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto out = data.subspan(pos, n);
    pos += n;
    return out;
  }
};

// Note key during on/off pairing.
constexpr int note_key(int channel, int pitch) { return (channel << 8) | pitch; }

struct PendingNote {
  std::int64_t onset = 0;
  std::uint8_t raw_velocity = 1;
};

struct RawNote {
  std::int64_t onset = 0;
  std::int64_t duration = 1;
  std::uint8_t pitch = 0;
  std::uint8_t raw_velocity = 1;
  std::uint8_t channel = 0;
  std::uint16_t track = 0;
};

// Timed controller / program state, merged across tracks.
struct StateEvent {
  std::int64_t tick = 0;
  std::uint64_t order = 0;  // global file order, stable tie-break within a tick
  std::uint8_t value = 0;
};

class StateTimeline {
 public:
  void add(std::int64_t tick, std::uint64_t order, std::uint8_t value) {
    events_.push_back({tick, order, value});
  }

  void finalize() {
    std::stable_sort(events_.begin(), events_.end(), [](const StateEvent& a, const StateEvent& b) {
      return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
    });
  }

  // Value in effect at `tick` (events at the same tick all apply; last wins).
  std::uint8_t value_at(std::int64_t tick, std::uint8_t fallback) const {
    auto it = std::upper_bound(
        events_.begin(), events_.end(), tick,
        [](std::int64_t t, const StateEvent& e) { return t < e.tick; });
    if (it == events_.begin()) return fallback;
    return std::prev(it)->value;
  }

 private:
  std::vector<StateEvent> events_;
};

std::vector<std::uint8_t> encode_vlq(std::int64_t value) {
  if (value < 0 || value > 0x0FFFFFFF) {
    throw std::invalid_argument("delta time out of variable-length-quantity range");
  }
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(value & 0x7F));
  value >>= 7;
  while (value > 0) {
    out.push_back(static_cast<std::uint8_t>((value & 0x7F) | 0x80));
    value >>= 7;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

int log2_exact(int v) {
  int e = 0;
  while ((1 << e) < v) ++e;
  return e;
}

}  // namespace

TempoMap::TempoMap(std::vector<TempoEvent> events) {
  for (const auto& e : events) {
    if (e.tick < 0) throw std::invalid_argument("tempo event at negative tick");
    if (e.us_per_quarter == 0) throw std::invalid_argument("tempo of 0 us per quarter");
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const TempoEvent& a, const TempoEvent& b) { return a.tick < b.tick; });
  for (const auto& e : events) {
    if (!events_.empty() && events_.back().tick == e.tick) {
      events_.back() = e;  // last event at a tick wins
    } else {
      events_.push_back(e);
    }
  }
  if (events_.empty() || events_.front().tick != 0) {
    events_.insert(events_.begin(), TempoEvent{0, kDefaultUsPerQuarter});
  }
}

TimeSigMap::TimeSigMap(std::vector<TimeSigEvent> events) {
  for (const auto& e : events) {
    if (e.tick < 0) throw std::invalid_argument("time signature at negative tick");
    if (e.numerator < 1) throw std::invalid_argument("time signature numerator < 1");
    bool pow2 = e.denominator > 0 && (e.denominator & (e.denominator - 1)) == 0;
    if (!pow2 || e.denominator > 32) {
      throw std::invalid_argument("time signature denominator must be a power of two <= 32");
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const TimeSigEvent& a, const TimeSigEvent& b) { return a.tick < b.tick; });
  for (const auto& e : events) {
    if (!events_.empty() && events_.back().tick == e.tick) {
      events_.back() = e;
    } else {
      events_.push_back(e);
    }
  }
  if (events_.empty() || events_.front().tick != 0) {
    events_.insert(events_.begin(), TimeSigEvent{0, 4, 4});
  }
}

int MeasureGrid::index_containing(double beat) const {
  if (measures_.empty()) return 0;
  auto it = std::upper_bound(
      measures_.begin(), measures_.end(), beat + kBeatEps,
      [](double b, const Measure& m) { return b < m.start_beat; });
  if (it == measures_.begin()) return 0;
  return static_cast<int>(std::distance(measures_.begin(), it)) - 1;
}

int MeasureGrid::nearest_start_index(double beat) const {
  if (measures_.empty()) return 0;
  int lo = index_containing(beat);
  if (lo + 1 >= size()) return lo;
  double d_lo = std::abs(beat - measures_[static_cast<std::size_t>(lo)].start_beat);
  double d_hi = std::abs(measures_[static_cast<std::size_t>(lo) + 1].start_beat - beat);
  return d_lo <= d_hi ? lo : lo + 1;  // ties round down
}

ParsedSong parse_midi(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};

  r.need(8, "header chunk");
  if (!(bytes[0] == 'M' && bytes[1] == 'T' && bytes[2] == 'h' && bytes[3] == 'd')) {
    throw MalformedHeader("missing MThd magic");
  }
  r.pos = 4;
  std::uint32_t header_len = r.u32be("header length");
  if (header_len < 6) throw MalformedHeader("MThd length < 6");
  std::uint16_t format = r.u16be("format");
  std::uint16_t declared_tracks = r.u16be("track count");
  std::uint16_t division = r.u16be("division");
  if (format > 1) {
    throw MalformedHeader("unsupported SMF format " + std::to_string(format));
  }
  if (division & 0x8000u) {
    throw UnsupportedDivision("SMPTE time division is not supported");
  }
  if (division == 0) throw MalformedHeader("PPQ of 0");
  r.take(header_len - 6, "header padding");

  ParsedSong song;
  song.ppq = division;

  std::vector<RawNote> raw_notes;
  std::vector<TempoEvent> tempos;
  std::vector<TimeSigEvent> timesigs;
  StateTimeline cc7[16];
  StateTimeline cc11[16];
  StateTimeline program[16];
  std::uint64_t order = 0;

  std::uint16_t track_index = 0;
  while (r.remaining() > 0) {
    r.need(8, "chunk header");
    auto id = r.take(4, "chunk id");
    std::uint32_t len = r.u32be("chunk length");
    auto body = r.take(len, "chunk body");
    bool is_track = id[0] == 'M' && id[1] == 'T' && id[2] == 'r' && id[3] == 'k';
    if (!is_track) continue;  // unknown chunk types are skipped per the SMF spec

    Reader t{body};
    std::int64_t tick = 0;
    std::uint8_t running_status = 0;
    std::map<int, std::deque<PendingNote>> pending;
    bool ended = false;

    while (!ended && t.remaining() > 0) {
      tick += t.vlq("delta time");
      std::uint8_t b = t.u8("status");
      std::uint8_t status;
      std::uint8_t first_data;
      if (b & 0x80u) {
        status = b;
        if (status < 0xF0u) {
          running_status = status;
          first_data = t.u8("data byte");
        } else {
          running_status = 0;  // meta and sysex cancel running status
          first_data = 0;
        }
      } else {
        if (running_status == 0) {
          throw TruncatedChunk("data byte with no running status");
        }
        status = running_status;
        first_data = b;
      }

      if (status == 0xFF) {
        std::uint8_t type = t.u8("meta type");
        std::uint32_t len_meta = t.vlq("meta length");
        auto payload = t.take(len_meta, "meta payload");
        switch (type) {
          case 0x06:
            song.markers.push_back(
                Marker{tick, std::string(payload.begin(), payload.end())});
            break;
          case 0x51:
            if (len_meta >= 3) {
              std::uint32_t us = (static_cast<std::uint32_t>(payload[0]) << 16) |
                                 (static_cast<std::uint32_t>(payload[1]) << 8) |
                                 static_cast<std::uint32_t>(payload[2]);
              if (us > 0) tempos.push_back(TempoEvent{tick, us});
            }
            break;
          case 0x58:
            if (len_meta >= 2) {
              int nn = payload[0];
              int dd = payload[1];
              if (nn >= 1 && dd <= 5) {
                timesigs.push_back(TimeSigEvent{tick, nn, 1 << dd});
              } else {
                song.warnings.push_back("skipped out-of-range time signature " +
                                        std::to_string(nn) + "/2^" + std::to_string(dd));
              }
            }
            break;
          case 0x2F:
            ended = true;
            break;
          default:
            break;
        }
        continue;
      }

      if (status == 0xF0 || status == 0xF7) {
        std::uint32_t len_sysex = t.vlq("sysex length");
        t.take(len_sysex, "sysex payload");
        continue;
      }

      std::uint8_t kind = status & 0xF0u;
      std::uint8_t channel = status & 0x0Fu;
      switch (kind) {
        case 0x90: {
          std::uint8_t velocity = t.u8("note-on velocity");
          std::uint8_t pitch = first_data & 0x7Fu;
          if (velocity > 0) {
            pending[note_key(channel, pitch)].push_back(PendingNote{tick, velocity});
            break;
          }
          [[fallthrough]];  // velocity 0 is a note-off
        }
        case 0x80: {
          std::uint8_t pitch = first_data & 0x7Fu;
          if (kind == 0x80) t.u8("note-off velocity");
          auto& queue = pending[note_key(channel, pitch)];
          if (queue.empty()) {
            song.warnings.push_back("dangling note-off: track " + std::to_string(track_index) +
                                    " pitch " + std::to_string(pitch) + " tick " +
                                    std::to_string(tick));
            break;
          }
          PendingNote on = queue.front();  // first-in-first-out pairing
          queue.pop_front();
          raw_notes.push_back(RawNote{on.onset, std::max<std::int64_t>(1, tick - on.onset),
                                      pitch, on.raw_velocity, channel, track_index});
          break;
        }
        case 0xB0: {
          std::uint8_t value = t.u8("controller value");
          std::uint8_t controller = first_data & 0x7Fu;
          if (controller == 7) cc7[channel].add(tick, order++, value);
          if (controller == 11) cc11[channel].add(tick, order++, value);
          break;
        }
        case 0xC0:
          program[channel].add(tick, order++, first_data & 0x7Fu);
          break;
        case 0xD0:
          break;  // channel aftertouch: one data byte, already consumed
        case 0xA0:
        case 0xE0:
          t.u8("second data byte");
          break;
        default:
          throw TruncatedChunk("unexpected status byte " + std::to_string(status));
      }
    }

    // Unterminated notes are clamped at end of track.
    std::int64_t end_tick = tick;
    for (auto& [key, queue] : pending) {
      for (const PendingNote& on : queue) {
        raw_notes.push_back(RawNote{on.onset, std::max<std::int64_t>(1, end_tick - on.onset),
                                    static_cast<std::uint8_t>(key & 0x7F), on.raw_velocity,
                                    static_cast<std::uint8_t>(key >> 8), track_index});
        song.warnings.push_back("unterminated note clamped at end of track " +
                                std::to_string(track_index));
      }
    }
    ++track_index;
  }

  if (declared_tracks != track_index && declared_tracks != 0) {
    song.warnings.push_back("header declares " + std::to_string(declared_tracks) +
                            " tracks, found " + std::to_string(track_index));
  }

  for (auto& timeline : cc7) timeline.finalize();
  for (auto& timeline : cc11) timeline.finalize();
  for (auto& timeline : program) timeline.finalize();

  song.notes.reserve(raw_notes.size());
  for (const RawNote& n : raw_notes) {
    NoteEvent e;
    e.onset_tick = n.onset;
    e.duration_ticks = n.duration;
    e.pitch = n.pitch;
    e.raw_velocity = n.raw_velocity;
    e.channel = n.channel;
    e.track = n.track;
    e.is_drum = n.channel == 9;
    e.program = program[n.channel].value_at(n.onset, 0);
    double gain7 = cc7[n.channel].value_at(n.onset, 127) / 127.0;
    double gain11 = cc11[n.channel].value_at(n.onset, 127) / 127.0;
    e.velocity = static_cast<float>((n.raw_velocity / 127.0) * gain7 * gain11);
    song.notes.push_back(e);
  }
  std::stable_sort(song.notes.begin(), song.notes.end(),
                   [](const NoteEvent& a, const NoteEvent& b) {
                     if (a.onset_tick != b.onset_tick) return a.onset_tick < b.onset_tick;
                     if (a.pitch != b.pitch) return a.pitch < b.pitch;
                     return a.track < b.track;
                   });
  std::sort(song.markers.begin(), song.markers.end(),
            [](const Marker& a, const Marker& b) { return a.tick < b.tick; });

  song.tempo_map = TempoMap(std::move(tempos));
  song.timesig_map = TimeSigMap(std::move(timesigs));
  return song;
}

ParsedSong parse_midi_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SmfError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_midi(bytes);
}

namespace {

struct TrackEvent {
  std::int64_t tick = 0;
  int rank = 0;  // note-off < program change < note-on at equal ticks
  std::uint64_t seq = 0;
  std::vector<std::uint8_t> bytes;
};

void append_sorted_track(std::vector<std::uint8_t>& out, std::vector<TrackEvent> events,
                         std::int64_t end_tick) {
  std::sort(events.begin(), events.end(), [](const TrackEvent& a, const TrackEvent& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.seq < b.seq;
  });

  std::vector<std::uint8_t> body;
  std::int64_t cursor = 0;
  for (const TrackEvent& e : events) {
    auto delta = encode_vlq(e.tick - cursor);
    body.insert(body.end(), delta.begin(), delta.end());
    body.insert(body.end(), e.bytes.begin(), e.bytes.end());
    cursor = e.tick;
  }
  auto delta = encode_vlq(std::max<std::int64_t>(0, end_tick - cursor));
  body.insert(body.end(), delta.begin(), delta.end());
  body.push_back(0xFF);
  body.push_back(0x2F);
  body.push_back(0x00);

  out.push_back('M');
  out.push_back('T');
  out.push_back('r');
  out.push_back('k');
  std::uint32_t len = static_cast<std::uint32_t>(body.size());
  out.push_back(static_cast<std::uint8_t>(len >> 24));
  out.push_back(static_cast<std::uint8_t>(len >> 16));
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.push_back(static_cast<std::uint8_t>(len));
  out.insert(out.end(), body.begin(), body.end());
}

}  // namespace

std::vector<std::uint8_t> write_midi(const ParsedSong& song) {
  if (song.ppq <= 0 || song.ppq > 0x7FFF) {
    throw std::invalid_argument("ppq out of range for SMF division");
  }

  std::vector<std::uint16_t> note_tracks;
  for (const NoteEvent& n : song.notes) note_tracks.push_back(n.track);
  std::sort(note_tracks.begin(), note_tracks.end());
  note_tracks.erase(std::unique(note_tracks.begin(), note_tracks.end()), note_tracks.end());

  std::uint16_t n_chunks = static_cast<std::uint16_t>(1 + note_tracks.size());
  std::uint16_t format = n_chunks > 1 ? 1 : 0;

  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd', 0, 0, 0, 6};
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(format));
  out.push_back(static_cast<std::uint8_t>(n_chunks >> 8));
  out.push_back(static_cast<std::uint8_t>(n_chunks & 0xFF));
  out.push_back(static_cast<std::uint8_t>(song.ppq >> 8));
  out.push_back(static_cast<std::uint8_t>(song.ppq & 0xFF));

  std::uint64_t seq = 0;
  std::int64_t end_tick = 0;
  for (const NoteEvent& n : song.notes) {
    end_tick = std::max(end_tick, n.onset_tick + n.duration_ticks);
  }
  for (const Marker& m : song.markers) end_tick = std::max(end_tick, m.tick);

  // Conductor track: tempo, time signature, markers.
  std::vector<TrackEvent> conductor;
  for (const TempoEvent& e : song.tempo_map.events()) {
    conductor.push_back(TrackEvent{e.tick, 1, seq++,
                                   {0xFF, 0x51, 0x03,
                                    static_cast<std::uint8_t>(e.us_per_quarter >> 16),
                                    static_cast<std::uint8_t>(e.us_per_quarter >> 8),
                                    static_cast<std::uint8_t>(e.us_per_quarter)}});
    end_tick = std::max(end_tick, e.tick);
  }
  for (const TimeSigEvent& e : song.timesig_map.events()) {
    conductor.push_back(TrackEvent{e.tick, 1, seq++,
                                   {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(e.numerator),
                                    static_cast<std::uint8_t>(log2_exact(e.denominator)), 24, 8}});
    end_tick = std::max(end_tick, e.tick);
  }
  for (const Marker& m : song.markers) {
    TrackEvent e{m.tick, 1, seq++, {0xFF, 0x06}};
    auto len = encode_vlq(static_cast<std::int64_t>(m.text.size()));
    e.bytes.insert(e.bytes.end(), len.begin(), len.end());
    e.bytes.insert(e.bytes.end(), m.text.begin(), m.text.end());
    conductor.push_back(std::move(e));
  }
  append_sorted_track(out, std::move(conductor), end_tick);

  for (std::uint16_t track : note_tracks) {
    std::vector<TrackEvent> events;
    int current_program[16];
    std::fill(std::begin(current_program), std::end(current_program), -1);
    for (const NoteEvent& n : song.notes) {
      if (n.track != track) continue;
      std::uint8_t channel = n.channel & 0x0F;
      if (current_program[channel] != n.program) {
        events.push_back(TrackEvent{n.onset_tick, 1, seq++,
                                    {static_cast<std::uint8_t>(0xC0 | channel), n.program}});
        current_program[channel] = n.program;
      }
      std::uint8_t vel = std::clamp<std::uint8_t>(n.raw_velocity, 1, 127);
      events.push_back(TrackEvent{n.onset_tick, 2, seq++,
                                  {static_cast<std::uint8_t>(0x90 | channel), n.pitch, vel}});
      events.push_back(TrackEvent{n.onset_tick + n.duration_ticks, 0, seq++,
                                  {static_cast<std::uint8_t>(0x80 | channel), n.pitch, 64}});
    }
    append_sorted_track(out, std::move(events), end_tick);
  }
  return out;
}

void write_midi_file(const ParsedSong& song, const std::filesystem::path& path) {
  auto bytes = write_midi(song);
  std::ofstream outfile(path, std::ios::binary);
  if (!outfile) throw SmfError("cannot write " + path.string());
  outfile.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
}

double ticks_to_seconds(const TempoMap& tempo_map, int ppq, double tick) {
  auto events = tempo_map.events();
  double seconds = 0.0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    double segment_start = static_cast<double>(events[i].tick);
    if (tick <= segment_start) break;
    double segment_end =
        i + 1 < events.size() ? static_cast<double>(events[i + 1].tick) : tick;
    double span = std::min(tick, segment_end) - segment_start;
    if (span > 0) {
      seconds += span / ppq * (events[i].us_per_quarter / 1e6);
    }
  }
  return seconds;
}

MeasureGrid compute_measures(const TimeSigMap& timesig_map, int ppq, double end_beat) {
  if (end_beat < 0) throw std::invalid_argument("end_beat must be >= 0");
  auto sigs = timesig_map.events();

  std::vector<Measure> measures;
  std::size_t sig_idx = 0;
  double beat = 0.0;
  while (true) {
    // Advance to the signature governing this bar; a change landing exactly
    // on the bar start simply takes effect here.
    while (sig_idx + 1 < sigs.size() &&
           static_cast<double>(sigs[sig_idx + 1].tick) / ppq <= beat + kBeatEps) {
      ++sig_idx;
    }
    double nominal = sigs[sig_idx].numerator * 4.0 / sigs[sig_idx].denominator;
    double duration = nominal;
    if (sig_idx + 1 < sigs.size()) {
      double change_beat = static_cast<double>(sigs[sig_idx + 1].tick) / ppq;
      if (change_beat < beat + nominal - kBeatEps) {
        duration = change_beat - beat;  // mid-measure change truncates this bar
      }
    }
    measures.push_back(Measure{beat, duration, std::llround(beat * 4.0)});
    if (beat >= end_beat - kBeatEps) break;
    beat += duration;
  }
  return MeasureGrid(std::move(measures));
}

double content_end_beat(const ParsedSong& song) {
  double end = 0.0;
  for (const NoteEvent& n : song.notes) {
    end = std::max(end, static_cast<double>(n.onset_tick + n.duration_ticks) / song.ppq);
  }
  for (const Marker& m : song.markers) {
    end = std::max(end, static_cast<double>(m.tick) / song.ppq);
  }
  return end;
}

}  // namespace midiseg::smf
