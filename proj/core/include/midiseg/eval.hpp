// Boundary scoring: per-measure hit rate with edge exclusion, one-to-one
// tolerance matching in seconds or bars, and the peak-picking decoder.
#pragma once

#include <set>
#include <span>
#include <utility>
#include <vector>

#include "midiseg/smf.hpp"

namespace midiseg::eval {

struct EvalResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;  // tp/(tp+fp), 0 when the denominator is 0
  double recall = 0.0;     // tp/(tp+fn), 0 when the denominator is 0
  double f1 = 0.0;         // harmonic mean, 0 when precision+recall is 0
  std::vector<std::pair<double, double>> matching;  // (pred, gt) pairs, tolerance modes
};

EvalResult make_result(int tp, int fp, int fn);

// Bar m is evaluable iff it lies at least margin_bars after the bar holding
// the first note onset and at least margin_bars before the bar holding the
// last one. All false when the song has no notes.
std::vector<bool> exclusion_mask(const smf::MeasureGrid& grid, double first_onset_beat,
                                 double last_onset_beat, int margin_bars = 16);
std::vector<bool> exclusion_mask(const smf::MeasureGrid& grid,
                                 std::span<const smf::NoteEvent> notes, int ppq,
                                 int margin_bars = 16);

// Exact bar-index matching over masked measures; positive iff prob > threshold.
EvalResult per_measure_eval(std::span<const double> probs, const std::set<int>& gt,
                            const std::vector<bool>& mask, double threshold = 0.5);

// Maximum-cardinality one-to-one matching with |pred - gt| <= tol.
// Both lists must be sorted ascending.
EvalResult tolerance_eval(std::span<const double> pred_times, std::span<const double> gt_times,
                          double tol);

// Same matching on bar indices, masked symmetrically on both sides.
EvalResult bar_tolerance_eval(std::span<const int> pred_bars, std::span<const int> gt_bars,
                              const std::vector<bool>& mask, int tol_bars = 1);

// Bars that are a strict local maximum within +-window_bars and exceed the
// centered moving average (half-width avg_window_bars) by offset.
std::vector<int> peak_pick(std::span<const double> probs, int window_bars = 4,
                           double offset = 0.1, int avg_window_bars = 16);

}  // namespace midiseg::eval
