/* Copyright 2026 The Melofill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melofill/melody.hpp"

namespace melofill {

/// Ordered bins with masses summing to 1, or no mass at all.
struct Histogram {
  std::vector<std::int64_t> labels;
  std::vector<double> mass;

  bool empty() const;
  friend bool operator==(const Histogram&, const Histogram&) = default;
};

/// Label of the IOI bin collecting intervals above one bar.
inline constexpr std::int64_t kIoiOverflow = -1;

/// IOI bin labels: every multiple of 30 or 40 ticks in (0, 1920], then the
/// overflow bin.
std::span<const std::int64_t> ioi_bins();

/// Duration-weighted pitch-class histogram (12 bins).
Histogram pch(const Melody& m);
/// Histogram of consecutive onset differences. An interval between bins is
/// counted in the nearest one (the lower on a tie); intervals above 1920
/// ticks go to the overflow bin. Empty below two notes.
Histogram ioi_hist(const Melody& m);

/// Sum of per-bin minima. Throws std::invalid_argument on different labels;
/// 0 with a warning when either side is empty.
double overlap_area(const Histogram& a, const Histogram& b);

/// Mean of the non-empty histograms, each piece weighted equally.
Histogram mean_histogram(std::span<const Histogram> hs);

inline constexpr int kMaxBarDistance = 16;

/// Bar-pair similarity: shared (position, pitch, duration) triples, counted
/// as a multiset, over the larger bar's note count (at least 1).
double bar_similarity(const Melody& m, std::int64_t u, std::int64_t v);

/// Per distance d = 1..16 (index d-1): mean similarity of bar pairs (u, u+d)
/// inside the piece; NaN where no pair exists. Empty for pieces under 2 bars.
std::vector<double> similarity_curve(const Melody& m);

struct StructureResult {
  double error = 0.0;             // mean |gen - ref| over distances defined on both sides
  std::vector<double> gen_curve;  // corpus means, NaN where undefined
  std::vector<double> ref_curve;
  std::size_t skipped = 0;        // pieces under two bars
};
StructureResult structure_similarity_error(std::span<const Melody> gen, std::span<const Melody> ref);

enum class NgramGroup { Short, Mid, Long };
std::pair<int, int> group_range(NgramGroup g);  // inclusive n range
const char* group_name(NgramGroup g);

/// Distinct over total pitch n-grams (absolute pitches, windows within a
/// piece) across the corpus for one n; nullopt when the corpus has none.
std::optional<double> distinct_ratio(std::span<const Melody> corpus, int n);
/// Mean of `distinct_ratio` over the group's n, skipping n without grams;
/// 0 when no n qualifies. Throws on an empty corpus.
double diversity(std::span<const Melody> corpus, NgramGroup g);

inline constexpr int kNumMetrics = 6;
/// D_P, D_R, D_S, D_Ds, D_Dm, D_Dl.
const char* metric_name(int i);

/// Raw metric values of one generated corpus against a reference.
struct MetricValues {
  double dp = 0, dr = 0, ds = 0;
  std::array<double, 3> diversity{};      // generated corpus, short/mid/long
  std::array<double, 3> ref_diversity{};  // reference corpus
  std::size_t skipped_pieces = 0;

  /// Values in ranking orientation: D_P, D_R as is, D_S, then the three
  /// diversity gaps |gen - ref|.
  std::array<double, kNumMetrics> ranking_values() const;
};

MetricValues evaluate(std::span<const Melody> gen, std::span<const Melody> ref);

/// Average ranks (1 = best) of `values`; ties share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> values, bool higher_is_better);

/// Per-setting metric ranks and their sums (task scores).
struct TaskScores {
  std::vector<std::array<double, kNumMetrics>> ranks;
  std::vector<double> score;
};
/// `values[s]` are setting s's values in ranking orientation. Needs at least
/// two settings.
TaskScores task_scores(std::span<const std::array<double, kNumMetrics>> values);

/// Rank of each setting by total task score (lower is better; ties averaged).
std::vector<double> overall_ranks(std::span<const std::vector<double>> task_scores_per_task);

struct RunSet {
  std::string setting;
  std::string task;  // e.g. continuation, inpainting
  std::vector<MetricValues> runs;
};

struct ReportRow {
  std::string setting;
  std::string task;
  std::array<double, kNumMetrics + 3> mean{};  // D_P D_R D_S D_Ds D_Dm D_Dl, then diversity gaps
  std::array<double, kNumMetrics + 3> stddev{};
  double task_score = 0;
  double overall_rank = 0;
  std::size_t runs = 0;
};

struct MetricsReport {
  std::vector<ReportRow> rows;
  std::string tsv() const;
  std::string json() const;
};

/// Means and sample standard deviations over runs; task scores rank the
/// run means within each task; overall rank orders settings by the sum of
/// their task scores across tasks.
MetricsReport build_report(std::span<const RunSet> sets);

}  // namespace melofill
