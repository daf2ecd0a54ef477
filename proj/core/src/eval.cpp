#include "midiseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace midiseg::eval {

EvalResult make_result(int tp, int fp, int fn) {
  EvalResult r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                    : 0.0;
  return r;
}

std::vector<bool> exclusion_mask(const smf::MeasureGrid& grid, double first_onset_beat,
                                 double last_onset_beat, int margin_bars) {
  if (margin_bars < 0) throw std::invalid_argument("margin_bars must be >= 0");
  std::vector<bool> mask(static_cast<std::size_t>(grid.size()), false);
  if (grid.size() == 0 || last_onset_beat < first_onset_beat) return mask;
  int first_bar = grid.index_containing(first_onset_beat);
  int last_bar = grid.index_containing(last_onset_beat);
  for (int m = 0; m < grid.size(); ++m) {
    mask[static_cast<std::size_t>(m)] =
        (m - first_bar >= margin_bars) && (last_bar - m >= margin_bars);
  }
  return mask;
}

std::vector<bool> exclusion_mask(const smf::MeasureGrid& grid,
                                 std::span<const smf::NoteEvent> notes, int ppq,
                                 int margin_bars) {
  if (notes.empty()) {
    return std::vector<bool>(static_cast<std::size_t>(grid.size()), false);
  }
  double first = static_cast<double>(notes.front().onset_tick);
  double last = first;
  for (const smf::NoteEvent& n : notes) {
    first = std::min(first, static_cast<double>(n.onset_tick));
    last = std::max(last, static_cast<double>(n.onset_tick));
  }
  return exclusion_mask(grid, first / ppq, last / ppq, margin_bars);
}

EvalResult per_measure_eval(std::span<const double> probs, const std::set<int>& gt,
                            const std::vector<bool>& mask, double threshold) {
  if (probs.size() < mask.size()) {
    throw std::invalid_argument("probabilities must cover all masked measures");
  }
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t m = 0; m < mask.size(); ++m) {
    if (!mask[m]) continue;
    bool pred = probs[m] > threshold;
    bool truth = gt.contains(static_cast<int>(m));
    if (pred && truth) ++tp;
    if (pred && !truth) ++fp;
    if (!pred && truth) ++fn;
  }
  return make_result(tp, fp, fn);
}

namespace {

// Optimal for same-width tolerance windows: matching each ground truth (in
// ascending order) to the leftmost still-unmatched prediction in range never
// blocks a later ground truth that this prediction could not serve.
EvalResult match_sorted(std::span<const double> pred, std::span<const double> gt, double tol) {
  if (tol < 0) throw std::invalid_argument("tolerance must be >= 0");
  EvalResult r;
  std::size_t i = 0;
  int tp = 0;
  for (double g : gt) {
    while (i < pred.size() && pred[i] < g - tol) ++i;
    if (i < pred.size() && pred[i] <= g + tol) {
      r.matching.emplace_back(pred[i], g);
      ++tp;
      ++i;
    }
  }
  EvalResult counts = make_result(tp, static_cast<int>(pred.size()) - tp,
                                  static_cast<int>(gt.size()) - tp);
  counts.matching = std::move(r.matching);
  return counts;
}

}  // namespace

EvalResult tolerance_eval(std::span<const double> pred_times, std::span<const double> gt_times,
                          double tol) {
  return match_sorted(pred_times, gt_times, tol);
}

EvalResult bar_tolerance_eval(std::span<const int> pred_bars, std::span<const int> gt_bars,
                              const std::vector<bool>& mask, int tol_bars) {
  auto masked = [&](std::span<const int> bars) {
    std::vector<double> out;
    for (int b : bars) {
      if (b >= 0 && static_cast<std::size_t>(b) < mask.size() &&
          mask[static_cast<std::size_t>(b)]) {
        out.push_back(static_cast<double>(b));
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  auto pred = masked(pred_bars);
  auto gt = masked(gt_bars);
  return match_sorted(pred, gt, static_cast<double>(tol_bars));
}

std::vector<int> peak_pick(std::span<const double> probs, int window_bars, double offset,
                           int avg_window_bars) {
  if (window_bars < 1) throw std::invalid_argument("window_bars must be >= 1");
  std::vector<int> peaks;
  const int n = static_cast<int>(probs.size());
  for (int m = 0; m < n; ++m) {
    bool strict_max = true;
    for (int j = std::max(0, m - window_bars); j <= std::min(n - 1, m + window_bars); ++j) {
      if (j != m && probs[static_cast<std::size_t>(j)] >= probs[static_cast<std::size_t>(m)]) {
        strict_max = false;
        break;
      }
    }
    if (!strict_max) continue;

    int lo = std::max(0, m - avg_window_bars);
    int hi = std::min(n - 1, m + avg_window_bars);
    double sum = 0.0;
    for (int j = lo; j <= hi; ++j) sum += probs[static_cast<std::size_t>(j)];
    double moving_avg = sum / (hi - lo + 1);
    if (probs[static_cast<std::size_t>(m)] > moving_avg + offset) peaks.push_back(m);
  }
  return peaks;
}

}  // namespace midiseg::eval
