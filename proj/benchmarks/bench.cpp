#include <cstdint>
#include <unordered_set>
#include <vector>

#include <benchmark/benchmark.h>

#include "midiseg/encode.hpp"
#include "midiseg/model.hpp"
#include "midiseg/smf.hpp"

using namespace midiseg;

namespace {

// 64 bars of four-note chords every beat, with markers: a mid-sized input.
std::vector<std::uint8_t> bench_song() {
  smf::ParsedSong song;
  song.ppq = 480;
  song.tempo_map = smf::TempoMap({{0, 500000}});
  song.timesig_map = smf::TimeSigMap({{0, 4, 4}});
  for (int beat = 0; beat < 64 * 4; ++beat) {
    for (int k = 0; k < 4; ++k) {
      smf::NoteEvent n;
      n.onset_tick = static_cast<std::int64_t>(beat) * 480;
      n.duration_ticks = 480;
      n.pitch = static_cast<std::uint8_t>(40 + 5 * k + (beat % 12));
      n.velocity = 0.75f;
      n.raw_velocity = 96;
      song.notes.push_back(n);
    }
  }
  for (int bar = 0; bar < 64; bar += 8) {
    song.markers.push_back({static_cast<std::int64_t>(bar) * 4 * 480, "Section"});
  }
  return smf::write_midi(song);
}

void BM_parse_midi(benchmark::State& state) {
  const std::vector<std::uint8_t> bytes = bench_song();
  for (auto _ : state) {
    benchmark::DoNotOptimize(smf::parse_midi(bytes));
  }
}
BENCHMARK(BM_parse_midi);

void BM_render_pianoroll(benchmark::State& state) {
  const smf::ParsedSong song = smf::parse_midi(bench_song());
  const std::vector<encode::QuantizedNote> notes = encode::quantize_events(song);
  const encode::OvertoneTable table = encode::build_overtone_table(0, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode::render_pianoroll(notes, table));
  }
}
BENCHMARK(BM_render_pianoroll);

void BM_extract_patch(benchmark::State& state) {
  const smf::ParsedSong song = smf::parse_midi(bench_song());
  const smf::MeasureGrid grid =
      smf::compute_measures(song.timesig_map, song.ppq, smf::content_end_beat(song));
  const std::vector<encode::QuantizedNote> notes = encode::quantize_events(song);
  const encode::OvertoneTable table = encode::build_overtone_table(0, 4);
  const encode::PianoRoll roll = encode::render_pianoroll(notes, table);
  const std::unordered_set<int> boundaries = {8, 16, 24};
  int measure = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode::extract_patch(roll, grid, measure, boundaries));
    measure = (measure + 1) % grid.size();
  }
}
BENCHMARK(BM_extract_patch);

void BM_network_forward(benchmark::State& state) {
  model::ModelConfig config;
  config.conv = {{static_cast<int>(state.range(0))}, {static_cast<int>(2 * state.range(0))}};
  config.hidden = 16;
  const model::NetworkT<float> net{config};
  const std::vector<float> input(static_cast<std::size_t>(3) * 128 * 512, 0.25f);
  model::ForwardCache<float> cache;
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(input, cache));
  }
}
BENCHMARK(BM_network_forward)->Arg(4)->Arg(8)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
