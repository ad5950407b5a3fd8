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
#include "melofill/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

#include "melofill/log.hpp"

namespace melofill {

bool Histogram::empty() const {
  return std::all_of(mass.begin(), mass.end(), [](double x) { return x == 0.0; });
}

std::span<const std::int64_t> ioi_bins() {
  static const std::vector<std::int64_t> bins = [] {
    std::vector<std::int64_t> b;
    for (std::int64_t t = 1; t <= kTicksPerBar; ++t) {
      if (t % 30 == 0 || t % 40 == 0) b.push_back(t);
    }
    b.push_back(kIoiOverflow);
    return b;
  }();
  return bins;
}

namespace {

void normalize(Histogram& h) {
  const double s = std::accumulate(h.mass.begin(), h.mass.end(), 0.0);
  if (s > 0) {
    for (auto& x : h.mass) x /= s;
  }
}

}  // namespace

Histogram pch(const Melody& m) {
  Histogram h;
  h.labels.resize(12);
  std::iota(h.labels.begin(), h.labels.end(), 0);
  h.mass.assign(12, 0.0);
  for (const auto& n : m.notes) h.mass[static_cast<std::size_t>(n.pitch % 12)] += static_cast<double>(n.duration);
  normalize(h);
  return h;
}

Histogram ioi_hist(const Melody& m) {
  const auto bins = ioi_bins();
  Histogram h;
  h.labels.assign(bins.begin(), bins.end());
  h.mass.assign(bins.size(), 0.0);
  const auto grid = bins.first(bins.size() - 1);
  for (std::size_t i = 1; i < m.notes.size(); ++i) {
    const auto d = m.notes[i].onset - m.notes[i - 1].onset;
    std::size_t k;
    if (d > kTicksPerBar) {
      k = bins.size() - 1;
    } else {
      const auto it = std::lower_bound(grid.begin(), grid.end(), d);
      if (it == grid.end()) {
        k = grid.size() - 1;
      } else if (it == grid.begin() || *it == d) {
        k = static_cast<std::size_t>(it - grid.begin());
      } else {
        k = static_cast<std::size_t>(it - grid.begin());
        if (d - *(it - 1) <= *it - d) --k;
      }
    }
    h.mass[k] += 1.0;
  }
  normalize(h);
  return h;
}

double overlap_area(const Histogram& a, const Histogram& b) {
  if (a.labels != b.labels) throw std::invalid_argument("overlap_area: histograms have different bins");
  if (a.empty() || b.empty()) {
    log().warn("overlap_area: empty histogram");
    return 0.0;
  }
  double s = 0;
  for (std::size_t i = 0; i < a.mass.size(); ++i) s += std::min(a.mass[i], b.mass[i]);
  return s;
}

Histogram mean_histogram(std::span<const Histogram> hs) {
  Histogram out;
  std::size_t used = 0;
  for (const auto& h : hs) {
    if (out.labels.empty()) {
      out.labels = h.labels;
      out.mass.assign(h.labels.size(), 0.0);
    } else if (h.labels != out.labels) {
      throw std::invalid_argument("mean_histogram: histograms have different bins");
    }
    if (h.empty()) continue;
    for (std::size_t i = 0; i < h.mass.size(); ++i) out.mass[i] += h.mass[i];
    ++used;
  }
  if (used) {
    for (auto& x : out.mass) x /= static_cast<double>(used);
  }
  return out;
}

namespace {

using Triple = std::tuple<std::int64_t, int, std::int64_t>;

std::map<std::int64_t, std::vector<Triple>> bars_of(const Melody& m) {
  std::map<std::int64_t, std::vector<Triple>> bars;
  for (const auto& n : m.notes) {
    bars[n.bar()].emplace_back(n.onset - n.bar() * kTicksPerBar, n.pitch, n.duration);
  }
  for (auto& [b, v] : bars) std::sort(v.begin(), v.end());
  return bars;
}

double similarity(const std::vector<Triple>& a, const std::vector<Triple>& b) {
  std::vector<Triple> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  const auto denom = std::max<std::size_t>({a.size(), b.size(), 1});
  return static_cast<double>(common.size()) / static_cast<double>(denom);
}

}  // namespace

double bar_similarity(const Melody& m, std::int64_t u, std::int64_t v) {
  const auto bars = bars_of(m);
  static const std::vector<Triple> kNone;
  const auto a = bars.find(u), b = bars.find(v);
  return similarity(a == bars.end() ? kNone : a->second, b == bars.end() ? kNone : b->second);
}

std::vector<double> similarity_curve(const Melody& m) {
  std::int64_t nbars = m.notes.empty() ? 0 : m.notes.back().bar() + 1;
  if (nbars < 2) return {};
  const auto bars = bars_of(m);
  std::vector<std::vector<Triple>> dense(static_cast<std::size_t>(nbars));
  for (const auto& [b, v] : bars) dense[static_cast<std::size_t>(b)] = v;
  std::vector<double> curve(kMaxBarDistance, std::numeric_limits<double>::quiet_NaN());
  for (int d = 1; d <= kMaxBarDistance; ++d) {
    if (d >= nbars) break;
    double s = 0;
    for (std::int64_t u = 0; u + d < nbars; ++u) {
      s += similarity(dense[static_cast<std::size_t>(u)], dense[static_cast<std::size_t>(u + d)]);
    }
    curve[static_cast<std::size_t>(d - 1)] = s / static_cast<double>(nbars - d);
  }
  return curve;
}

namespace {

std::vector<double> corpus_curve(std::span<const Melody> corpus, std::size_t& skipped) {
  std::vector<std::vector<double>> curves(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < corpus.size(); ++i) curves[i] = similarity_curve(corpus[i]);
  std::vector<double> sum(kMaxBarDistance, 0.0);
  std::vector<std::size_t> count(kMaxBarDistance, 0);
  for (const auto& c : curves) {
    if (c.empty()) {
      ++skipped;
      continue;
    }
    for (std::size_t d = 0; d < c.size(); ++d) {
      if (std::isnan(c[d])) continue;
      sum[d] += c[d];
      ++count[d];
    }
  }
  std::vector<double> out(kMaxBarDistance, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t d = 0; d < out.size(); ++d) {
    if (count[d]) out[d] = sum[d] / static_cast<double>(count[d]);
  }
  return out;
}

}  // namespace

StructureResult structure_similarity_error(std::span<const Melody> gen, std::span<const Melody> ref) {
  StructureResult r;
  r.gen_curve = corpus_curve(gen, r.skipped);
  r.ref_curve = corpus_curve(ref, r.skipped);
  double s = 0;
  std::size_t n = 0;
  for (std::size_t d = 0; d < r.gen_curve.size(); ++d) {
    if (std::isnan(r.gen_curve[d]) || std::isnan(r.ref_curve[d])) continue;
    s += std::abs(r.gen_curve[d] - r.ref_curve[d]);
    ++n;
  }
  if (r.skipped) log().info("structure similarity: skipped {} piece(s) under two bars", r.skipped);
  r.error = n ? s / static_cast<double>(n) : 0.0;
  return r;
}

std::pair<int, int> group_range(NgramGroup g) {
  switch (g) {
    case NgramGroup::Short: return {3, 5};
    case NgramGroup::Mid: return {6, 10};
    case NgramGroup::Long: return {11, 20};
  }
  return {0, -1};
}

const char* group_name(NgramGroup g) {
  switch (g) {
    case NgramGroup::Short: return "short";
    case NgramGroup::Mid: return "mid";
    case NgramGroup::Long: return "long";
  }
  return "?";
}

std::optional<double> distinct_ratio(std::span<const Melody> corpus, int n) {
  std::set<std::vector<int>> seen;
  std::size_t total = 0;
  std::vector<int> w(static_cast<std::size_t>(n));
  for (const auto& m : corpus) {
    if (m.notes.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= m.notes.size(); ++i) {
      for (int k = 0; k < n; ++k) w[static_cast<std::size_t>(k)] = m.notes[i + static_cast<std::size_t>(k)].pitch;
      seen.insert(w);
      ++total;
    }
  }
  if (!total) return std::nullopt;
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

double diversity(std::span<const Melody> corpus, NgramGroup g) {
  if (corpus.empty()) throw std::invalid_argument("diversity: empty corpus");
  const auto [lo, hi] = group_range(g);
  double s = 0;
  int used = 0;
  for (int n = lo; n <= hi; ++n) {
    if (const auto r = distinct_ratio(corpus, n)) {
      s += *r;
      ++used;
    }
  }
  return used ? s / used : 0.0;
}

const char* metric_name(int i) {
  static const char* names[] = {"D_P", "D_R", "D_S", "D_Ds", "D_Dm", "D_Dl"};
  return i >= 0 && i < kNumMetrics ? names[i] : "?";
}

std::array<double, kNumMetrics> MetricValues::ranking_values() const {
  return {dp,
          dr,
          ds,
          std::abs(diversity[0] - ref_diversity[0]),
          std::abs(diversity[1] - ref_diversity[1]),
          std::abs(diversity[2] - ref_diversity[2])};
}

MetricValues evaluate(std::span<const Melody> gen, std::span<const Melody> ref) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("evaluate: empty corpus");
  MetricValues v;
  auto hist = [](std::span<const Melody> c, auto fn) {
    std::vector<Histogram> hs(c.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < c.size(); ++i) hs[i] = fn(c[i]);
    return mean_histogram(hs);
  };
  v.dp = overlap_area(hist(gen, pch), hist(ref, pch));
  v.dr = overlap_area(hist(gen, ioi_hist), hist(ref, ioi_hist));
  const auto s = structure_similarity_error(gen, ref);
  v.ds = s.error;
  v.skipped_pieces = s.skipped;
  for (int g = 0; g < 3; ++g) {
    v.diversity[static_cast<std::size_t>(g)] = diversity(gen, static_cast<NgramGroup>(g));
    v.ref_diversity[static_cast<std::size_t>(g)] = diversity(ref, static_cast<NgramGroup>(g));
  }
  return v;
}

std::vector<double> average_ranks(std::span<const double> values, bool higher_is_better) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return higher_is_better ? values[a] > values[b] : values[a] < values[b];
  });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

TaskScores task_scores(std::span<const std::array<double, kNumMetrics>> values) {
  if (values.size() < 2) throw std::invalid_argument("task_score needs at least two settings");
  TaskScores t;
  t.ranks.resize(values.size());
  t.score.assign(values.size(), 0.0);
  std::vector<double> column(values.size());
  for (int m = 0; m < kNumMetrics; ++m) {
    for (std::size_t s = 0; s < values.size(); ++s) column[s] = values[s][static_cast<std::size_t>(m)];
    const auto r = average_ranks(column, m < 2);
    for (std::size_t s = 0; s < values.size(); ++s) {
      t.ranks[s][static_cast<std::size_t>(m)] = r[s];
      t.score[s] += r[s];
    }
  }
  return t;
}

std::vector<double> overall_ranks(std::span<const std::vector<double>> per_task) {
  if (per_task.empty()) return {};
  std::vector<double> total(per_task.front().size(), 0.0);
  for (const auto& ts : per_task) {
    if (ts.size() != total.size()) throw std::invalid_argument("overall_ranks: ragged task scores");
    for (std::size_t i = 0; i < ts.size(); ++i) total[i] += ts[i];
  }
  return average_ranks(total, false);
}

namespace {

constexpr int kColumns = kNumMetrics + 3;
const char* column_name(int i) {
  static const char* names[] = {"D_P", "D_R", "D_S", "D_Ds", "D_Dm", "D_Dl", "gap_Ds", "gap_Dm", "gap_Dl"};
  return names[i];
}

std::array<double, kColumns> columns(const MetricValues& v) {
  const auto r = v.ranking_values();
  return {v.dp, v.dr, v.ds, v.diversity[0], v.diversity[1], v.diversity[2], r[3], r[4], r[5]};
}

}  // namespace

MetricsReport build_report(std::span<const RunSet> sets) {
  MetricsReport rep;
  std::vector<std::string> tasks, settings;
  for (const auto& s : sets) {
    if (s.runs.empty()) throw std::invalid_argument("report: setting " + s.setting + " has no runs");
    if (std::find(tasks.begin(), tasks.end(), s.task) == tasks.end()) tasks.push_back(s.task);
    if (std::find(settings.begin(), settings.end(), s.setting) == settings.end()) settings.push_back(s.setting);
    ReportRow row;
    row.setting = s.setting;
    row.task = s.task;
    row.runs = s.runs.size();
    for (const auto& r : s.runs) {
      const auto c = columns(r);
      for (int k = 0; k < kColumns; ++k) row.mean[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
    }
    for (auto& x : row.mean) x /= static_cast<double>(s.runs.size());
    if (s.runs.size() > 1) {
      for (const auto& r : s.runs) {
        const auto c = columns(r);
        for (int k = 0; k < kColumns; ++k) {
          const auto d = c[static_cast<std::size_t>(k)] - row.mean[static_cast<std::size_t>(k)];
          row.stddev[static_cast<std::size_t>(k)] += d * d;
        }
      }
      for (auto& x : row.stddev) x = std::sqrt(x / static_cast<double>(s.runs.size() - 1));
    }
    rep.rows.push_back(row);
  }

  // Task scores per task over the settings present in it.
  std::map<std::string, std::vector<double>> ts_by_setting;
  for (const auto& task : tasks) {
    std::vector<std::size_t> idx;
    std::vector<std::array<double, kNumMetrics>> vals;
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
      if (rep.rows[i].task != task) continue;
      idx.push_back(i);
      const auto& m = rep.rows[i].mean;
      vals.push_back({m[0], m[1], m[2], m[6], m[7], m[8]});
    }
    if (vals.size() < 2) {
      log().warn("report: task {} has a single setting; task score not ranked", task);
      for (auto i : idx) rep.rows[i].task_score = kNumMetrics;
      continue;
    }
    const auto t = task_scores(vals);
    for (std::size_t k = 0; k < idx.size(); ++k) rep.rows[idx[k]].task_score = t.score[k];
  }
  std::vector<double> totals(settings.size(), 0.0);
  for (const auto& row : rep.rows) {
    const auto s = static_cast<std::size_t>(std::find(settings.begin(), settings.end(), row.setting) - settings.begin());
    totals[s] += row.task_score;
  }
  const auto overall = average_ranks(totals, false);
  for (auto& row : rep.rows) {
    const auto s = static_cast<std::size_t>(std::find(settings.begin(), settings.end(), row.setting) - settings.begin());
    row.overall_rank = overall[s];
  }
  return rep;
}

std::string MetricsReport::tsv() const {
  std::ostringstream o;
  o << "# D_S: mean |gen - ref| of bar-pair similarity curves, distances 1..16;"
       " similarity = shared (position, pitch, duration) multiset / larger bar size\n";
  o << "# D_D columns are distinct/total pitch n-gram ratios; gap_* are |gen - ref| used for ranking\n";
  o << "setting\ttask\truns";
  for (int k = 0; k < kColumns; ++k) o << '\t' << column_name(k);
  o << "\tTS\trank\n";
  char buf[64];
  for (const auto& r : rows) {
    o << r.setting << '\t' << r.task << '\t' << r.runs;
    for (int k = 0; k < kColumns; ++k) {
      std::snprintf(buf, sizeof buf, "\t%.6f±%.6f", r.mean[static_cast<std::size_t>(k)], r.stddev[static_cast<std::size_t>(k)]);
      o << buf;
    }
    std::snprintf(buf, sizeof buf, "\t%g\t%g\n", r.task_score, r.overall_rank);
    o << buf;
  }
  return o.str();
}

std::string MetricsReport::json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"setting", r.setting}, {"task", r.task}, {"runs", r.runs},
                       {"task_score", r.task_score}, {"overall_rank", r.overall_rank}};
    for (int k = 0; k < kColumns; ++k) {
      row["mean"][column_name(k)] = r.mean[static_cast<std::size_t>(k)];
      row["std"][column_name(k)] = r.stddev[static_cast<std::size_t>(k)];
    }
    j.push_back(row);
  }
  return j.dump(2) + "\n";
}

}  // namespace melofill
