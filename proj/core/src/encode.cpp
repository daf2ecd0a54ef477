#include "midiseg/encode.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace midiseg::encode {

namespace {

// mt19937_64 is bit-stable across platforms; std::uniform_* distributions are
// not, so value mapping is done by hand.
double next_unit_open_closed(std::mt19937_64& rng) {
  // (0, 1]: 53-bit mantissa draw, flipped so 0 is excluded.
  return 1.0 - (rng() >> 11) * 0x1.0p-53;
}

std::uint64_t next_below(std::mt19937_64& rng, std::uint64_t n) {
  return rng() % n;
}

void write_u16le(std::ofstream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  out.write(bytes, 2);
}

void write_f32le_block(std::ofstream& out, std::span<const float> values) {
  static_assert(std::endian::native == std::endian::little,
                "big-endian hosts need byte swapping here");
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
}

}  // namespace

void PianoRoll::deposit(int channel, int pitch, std::int64_t t, float value) {
  if (pitch < 0 || pitch >= kPitches || t < 0 || t >= width_) return;
  float clamped = std::clamp(value, 0.0f, 1.0f);
  float& cell = data_[index(channel, pitch, t)];
  cell = std::max(cell, clamped);
}

std::vector<QuantizedNote> quantize_events(const smf::ParsedSong& song) {
  if (song.ppq <= 0) throw std::invalid_argument("ppq must be positive");
  std::vector<QuantizedNote> out;
  out.reserve(song.notes.size());
  const double scale = 4.0 / song.ppq;
  for (const smf::NoteEvent& n : song.notes) {
    QuantizedNote q;
    q.onset_q = std::llround(n.onset_tick * scale);
    q.duration_q = std::max<std::int64_t>(1, std::llround(n.duration_ticks * scale));
    if (n.is_drum) q.duration_q = 1;  // drums get one 16th note regardless
    q.pitch = n.pitch;
    q.velocity = n.velocity;
    q.program = n.program;
    q.is_drum = n.is_drum;
    out.push_back(q);
  }
  return out;
}

OvertoneTable build_overtone_table(std::uint64_t seed, int k) {
  if (k < 1 || k > 4) {
    throw InvalidK("K must be in [1,4], got " + std::to_string(k));
  }
  OvertoneTable table;
  table.seed = seed;
  table.k = k;
  for (int program = 0; program < OvertoneTable::kNumPrograms; ++program) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(program)};
    std::mt19937_64 rng(seq);

    // K distinct multiples via partial Fisher-Yates over {2,3,4,5}.
    std::array<int, 4> candidates{2, 3, 4, 5};
    for (int i = 0; i < k; ++i) {
      auto j = i + static_cast<int>(next_below(rng, static_cast<std::uint64_t>(4 - i)));
      std::swap(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(j)]);
    }

    std::vector<double> factors(static_cast<std::size_t>(k));
    do {
      for (auto& f : factors) f = next_unit_open_closed(rng);
      std::sort(factors.rbegin(), factors.rend());
    } while (std::adjacent_find(factors.begin(), factors.end()) != factors.end());

    auto& row = table.rows[static_cast<std::size_t>(program)];
    row.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      row.push_back(OvertoneEntry{candidates[static_cast<std::size_t>(i)],
                                  static_cast<float>(factors[static_cast<std::size_t>(i)])});
    }
  }
  return table;
}

std::optional<int> overtone_pitch(int base_pitch, int multiple) {
  int offset = static_cast<int>(std::lround(12.0 * std::log2(static_cast<double>(multiple))));
  int pitch = base_pitch + offset;
  if (pitch > 127) return std::nullopt;
  return pitch;
}

PianoRoll render_pianoroll(std::span<const QuantizedNote> notes, const OvertoneTable& table,
                           const RenderOptions& opts, std::int64_t min_width) {
  std::int64_t width = min_width;
  for (const QuantizedNote& n : notes) {
    width = std::max(width, n.onset_q + n.duration_q);
  }
  PianoRoll roll(width);

  for (const QuantizedNote& n : notes) {
    int base_channel =
        n.is_drum ? (opts.drum_split ? PianoRoll::kDrums : PianoRoll::kNotes) : PianoRoll::kNotes;
    for (std::int64_t t = n.onset_q; t < n.onset_q + n.duration_q; ++t) {
      roll.deposit(base_channel, n.pitch, t, n.velocity);
    }
    if (n.is_drum || !opts.overtones) continue;

    for (const OvertoneEntry& entry : table.row(n.program)) {
      auto pitch = overtone_pitch(n.pitch, entry.multiple);
      if (!pitch) continue;
      const double d = static_cast<double>(n.duration_q);
      for (std::int64_t j = 0; j < n.duration_q; ++j) {
        // Linear decay from factor*v at onset to 0 at the note end.
        double value = entry.factor * n.velocity * (1.0 - static_cast<double>(j) / d);
        roll.deposit(PianoRoll::kOvertones, *pitch, n.onset_q + j, static_cast<float>(value));
      }
    }
  }
  return roll;
}

Patch extract_patch(const PianoRoll& roll, const smf::MeasureGrid& grid, int measure_index,
                    const std::unordered_set<int>& boundaries) {
  if (measure_index < 0 || measure_index >= grid.size()) {
    throw std::out_of_range("measure index outside grid");
  }
  Patch patch;
  patch.center_measure_index = measure_index;
  patch.label = boundaries.contains(measure_index);

  const std::int64_t center = grid[measure_index].start_grid_tick;
  const std::int64_t left = center - Patch::kCenterColumn;
  for (int c = 0; c < Patch::kChannels; ++c) {
    for (int p = 0; p < Patch::kHeight; ++p) {
      for (int col = 0; col < Patch::kWidth; ++col) {
        std::int64_t t = left + col;
        if (t < 0 || t >= roll.width()) continue;  // zero-padded at song edges
        patch.data[(static_cast<std::size_t>(c) * Patch::kHeight + static_cast<std::size_t>(p)) *
                       Patch::kWidth +
                   static_cast<std::size_t>(col)] = roll.at(c, p, t);
      }
    }
  }
  return patch;
}

void export_patch_image(const Patch& patch, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << Patch::kWidth << " " << Patch::kHeight << "\n255\n";
  for (int row = 0; row < Patch::kHeight; ++row) {
    int pitch = Patch::kHeight - 1 - row;  // pitch 127 at the top row
    for (int col = 0; col < Patch::kWidth; ++col) {
      for (int c = 0; c < Patch::kChannels; ++c) {
        float v = std::clamp(patch.at(c, pitch, col), 0.0f, 1.0f);
        out.put(static_cast<char>(std::lround(v * 255.0f)));
      }
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_patches(std::span<const Patch> patches, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Patch& p : patches) {
    write_u16le(out, Patch::kChannels);
    write_u16le(out, Patch::kHeight);
    write_u16le(out, Patch::kWidth);
    write_u16le(out, p.label ? 1 : 0);
    write_f32le_block(out, p.data);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Patch> read_patches(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Patch> patches;
  while (true) {
    unsigned char header[8];
    in.read(reinterpret_cast<char*>(header), 8);
    if (in.gcount() == 0 && in.eof()) break;
    if (in.gcount() != 8) throw std::runtime_error("truncated patch header in " + path.string());
    auto u16 = [&](int i) {
      return static_cast<std::uint16_t>(header[2 * i] | (header[2 * i + 1] << 8));
    };
    if (u16(0) != Patch::kChannels || u16(1) != Patch::kHeight || u16(2) != Patch::kWidth) {
      throw std::runtime_error("unexpected patch dimensions in " + path.string());
    }
    Patch p;
    p.label = u16(3) != 0;
    p.center_measure_index = static_cast<int>(patches.size());  // record ordinal
    in.read(reinterpret_cast<char*>(p.data.data()),
            static_cast<std::streamsize>(p.data.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != p.data.size() * sizeof(float)) {
      throw std::runtime_error("truncated patch payload in " + path.string());
    }
    patches.push_back(std::move(p));
  }
  return patches;
}

}  // namespace midiseg::encode
