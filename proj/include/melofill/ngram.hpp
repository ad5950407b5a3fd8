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
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melofill/melody.hpp"
#include "melofill/representation.hpp"

namespace melofill {

enum class Dimension : std::uint8_t { Pitch, Rhythm, Combined };
inline constexpr std::array kAllDimensions = {Dimension::Pitch, Dimension::Rhythm,
                                              Dimension::Combined};
const char* dimension_name(Dimension d);
std::optional<Dimension> parse_dimension(const std::string& s);

/// One element of a relative melodic projection. Pitch items use `interval`
/// only, rhythm items `onset` only (in-bar ticks), combined items both
/// (interval into a note paired with that note's in-bar onset).
struct Item {
  std::int32_t interval = 0;
  std::int32_t onset = 0;
  auto operator<=>(const Item&) const = default;
};

using ItemRun = std::vector<Item>;

/// A degree-k gram spans k notes: k-1 items for pitch and combined, k for
/// rhythm.
constexpr std::size_t window_length(Dimension d, int degree) {
  return static_cast<std::size_t>(d == Dimension::Rhythm ? degree : degree - 1);
}

/// Rests longer than one bar split the melody into independent runs.
inline constexpr std::int64_t kRunBreakRest = kTicksPerBar;

/// Relative projection of each run of notes; empty runs are omitted.
std::vector<ItemRun> relative_projection(const Melody& m, Dimension d);

/// All contiguous windows of `window` items.
std::vector<ItemRun> extract_ngrams(std::span<const Item> run, std::size_t window);

/// (p_s - p_null) / sqrt(p_s (1 - p_s) / n_k); nullopt when p_s is 0 or 1.
std::optional<double> t_statistic(double p_s, double p_null, double n_k);

struct NGram {
  Dimension dimension = Dimension::Pitch;
  int degree = 2;
  ItemRun items;
  friend bool operator==(const NGram&, const NGram&) = default;
};

struct LexiconEntry {
  NGram gram;
  std::uint64_t frequency = 0;
  double relative_frequency = 0.0;
  double t_score = 0.0;
};

/// Counts for one (dimension, degree) bucket.
struct BucketStats {
  std::uint64_t total = 0;     // windows counted
  std::uint64_t distinct = 0;  // distinct grams
  std::uint64_t kept = 0;      // lexicon members (degree >= 3)
};

using GramCounts = std::map<ItemRun, std::uint64_t>;

/// Product of the relative frequencies of the k-1 overlapping degree-2 grams
/// inside `items`; 0 when any of them was never observed.
double null_probability(Dimension d, std::span<const Item> items, const GramCounts& bigrams,
                        std::uint64_t bigram_total);

class Lexicon {
 public:
  struct Meta {
    std::uint64_t corpus_hash = 0;
    int n_max = 12;
    double top_ratio = 0.25;
  };

  Lexicon() = default;

  const Meta& meta() const { return meta_; }
  /// Members ordered by (dimension, degree, descending t-score, items).
  const std::vector<LexiconEntry>& entries() const { return entries_; }
  const BucketStats& bucket(Dimension d, int degree) const;
  /// Degree-2 counts kept as the null model; not lexicon members.
  const GramCounts& bigrams(Dimension d) const;

  const LexiconEntry* find(Dimension d, int degree, std::span<const Item> items) const;
  bool contains(Dimension d, int degree, std::span<const Item> items) const {
    return find(d, degree, items) != nullptr;
  }
  bool empty() const { return entries_.empty(); }

  std::string serialize() const;
  static Lexicon parse(const std::string& text);
  void save(const std::string& path) const;
  static Lexicon load(const std::string& path);

 private:
  friend Lexicon build_lexicon(std::span<const Melody>, int, double, std::uint64_t);
  void reindex();

  Meta meta_;
  std::vector<LexiconEntry> entries_;
  std::map<std::pair<Dimension, int>, BucketStats> buckets_;
  std::array<GramCounts, 3> bigrams_;
  std::map<std::pair<Dimension, int>, std::map<ItemRun, std::size_t>> index_;
};

/// Counts every degree 2..n_max window per dimension, scores degree >= 3
/// grams by t-statistic against the degree-2 null model (n_k = number of
/// distinct grams in the bucket) and keeps the top ceil(top_ratio * distinct)
/// per bucket. Ties at equal score are ordered by items.
Lexicon build_lexicon(std::span<const Melody> corpus, int n_max = 12, double top_ratio = 0.25,
                      std::uint64_t corpus_hash = 0);

/// Half-open range of note indices.
struct NoteSpan {
  std::size_t begin = 0;
  std::size_t length = 0;
  std::size_t end() const { return begin + length; }
  friend bool operator==(const NoteSpan&, const NoteSpan&) = default;
};

/// Greedy left-to-right longest match of lexicon grams (degree n_max down to
/// 3) over the note tokens of `t`. Returned spans are disjoint and sorted.
std::vector<NoteSpan> max_match(const TokenSequence& t, const Lexicon& lex, Dimension d);

}  // namespace melofill
