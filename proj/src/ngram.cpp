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
#include "melofill/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "melofill/hash.hpp"
#include "melofill/log.hpp"

namespace melofill {

const char* dimension_name(Dimension d) {
  switch (d) {
    case Dimension::Pitch: return "pitch";
    case Dimension::Rhythm: return "rhythm";
    case Dimension::Combined: return "combined";
  }
  return "?";
}

std::optional<Dimension> parse_dimension(const std::string& s) {
  for (auto d : kAllDimensions) {
    if (s == dimension_name(d)) return d;
  }
  return std::nullopt;
}

namespace {

// Item for the note at `i` within a run starting at `first`; for pitch and
// combined the first note of the run has no item.
Item item_at(Dimension d, std::span<const NoteEvent> notes, std::size_t i) {
  const auto onset = static_cast<std::int32_t>(notes[i].onset % kTicksPerBar);
  switch (d) {
    case Dimension::Pitch: return {notes[i].pitch - notes[i - 1].pitch, 0};
    case Dimension::Rhythm: return {0, onset};
    case Dimension::Combined: return {notes[i].pitch - notes[i - 1].pitch, onset};
  }
  return {};
}

std::vector<std::pair<std::size_t, std::size_t>> note_runs(std::span<const NoteEvent> notes) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;  // [begin, end)
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= notes.size(); ++i) {
    if (i == notes.size() || notes[i].onset - notes[i - 1].end() > kRunBreakRest) {
      if (i > begin) runs.emplace_back(begin, i);
      begin = i;
    }
  }
  return runs;
}

std::vector<ItemRun> project(std::span<const NoteEvent> notes, Dimension d) {
  std::vector<ItemRun> out;
  for (auto [b, e] : note_runs(notes)) {
    ItemRun run;
    for (std::size_t i = (d == Dimension::Rhythm ? b : b + 1); i < e; ++i) {
      run.push_back(item_at(d, notes, i));
    }
    if (!run.empty()) out.push_back(std::move(run));
  }
  return out;
}

}  // namespace

std::vector<ItemRun> relative_projection(const Melody& m, Dimension d) {
  return project(m.notes, d);
}

std::vector<ItemRun> extract_ngrams(std::span<const Item> run, std::size_t window) {
  std::vector<ItemRun> out;
  if (window == 0 || run.size() < window) return out;
  out.reserve(run.size() - window + 1);
  for (std::size_t i = 0; i + window <= run.size(); ++i) {
    out.emplace_back(run.begin() + static_cast<std::ptrdiff_t>(i),
                     run.begin() + static_cast<std::ptrdiff_t>(i + window));
  }
  return out;
}

std::optional<double> t_statistic(double p_s, double p_null, double n_k) {
  if (p_s <= 0.0 || p_s >= 1.0 || n_k <= 0.0) return std::nullopt;
  return (p_s - p_null) / std::sqrt(p_s * (1.0 - p_s) / n_k);
}

double null_probability(Dimension d, std::span<const Item> items, const GramCounts& bigrams,
                        std::uint64_t bigram_total) {
  const auto w2 = window_length(d, 2);
  if (bigram_total == 0 || items.size() < w2) return 0.0;
  double p = 1.0;
  ItemRun key(w2);
  for (std::size_t i = 0; i + w2 <= items.size(); ++i) {
    std::copy_n(items.begin() + static_cast<std::ptrdiff_t>(i), w2, key.begin());
    auto it = bigrams.find(key);
    if (it == bigrams.end()) return 0.0;
    p *= static_cast<double>(it->second) / static_cast<double>(bigram_total);
  }
  return p;
}

const BucketStats& Lexicon::bucket(Dimension d, int degree) const {
  static const BucketStats empty;
  auto it = buckets_.find({d, degree});
  return it == buckets_.end() ? empty : it->second;
}

const GramCounts& Lexicon::bigrams(Dimension d) const {
  return bigrams_[static_cast<std::size_t>(d)];
}

const LexiconEntry* Lexicon::find(Dimension d, int degree, std::span<const Item> items) const {
  auto b = index_.find({d, degree});
  if (b == index_.end()) return nullptr;
  auto it = b->second.find(ItemRun(items.begin(), items.end()));
  return it == b->second.end() ? nullptr : &entries_[it->second];
}

void Lexicon::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& g = entries_[i].gram;
    index_[{g.dimension, g.degree}].emplace(g.items, i);
  }
}

Lexicon build_lexicon(std::span<const Melody> corpus, int n_max, double top_ratio,
                      std::uint64_t corpus_hash) {
  if (n_max < 2) throw std::invalid_argument("n_max must be >= 2");
  if (!(top_ratio > 0.0 && top_ratio <= 1.0)) throw std::invalid_argument("top_ratio must be in (0, 1]");

  Lexicon lex;
  lex.meta_ = {corpus_hash, n_max, top_ratio};

  std::array<std::vector<ItemRun>, 3> runs;
  for (auto d : kAllDimensions) {
    for (const auto& m : corpus) {
      for (auto& r : relative_projection(m, d)) runs[static_cast<std::size_t>(d)].push_back(std::move(r));
    }
  }

  // One bucket per (dimension, degree); buckets are independent.
  struct Bucket {
    Dimension dim;
    int degree;
    GramCounts counts;
    std::uint64_t total = 0;
    std::vector<LexiconEntry> kept;
  };
  std::vector<Bucket> buckets;
  for (auto d : kAllDimensions) {
    for (int k = 2; k <= n_max; ++k) buckets.push_back({d, k, {}, 0, {}});
  }

#pragma omp parallel for schedule(dynamic)
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    auto& bk = buckets[b];
    const auto w = window_length(bk.dim, bk.degree);
    for (const auto& run : runs[static_cast<std::size_t>(bk.dim)]) {
      if (run.size() < w) continue;
      for (std::size_t i = 0; i + w <= run.size(); ++i) {
        ++bk.counts[ItemRun(run.begin() + static_cast<std::ptrdiff_t>(i),
                            run.begin() + static_cast<std::ptrdiff_t>(i + w))];
        ++bk.total;
      }
    }
  }

  auto bigram_bucket = [&](Dimension d) -> const Bucket& {
    return buckets[static_cast<std::size_t>(d) * static_cast<std::size_t>(n_max - 1)];
  };

#pragma omp parallel for schedule(dynamic)
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    auto& bk = buckets[b];
    if (bk.degree < 3 || bk.counts.empty()) continue;
    const auto& bi = bigram_bucket(bk.dim);
    const double n_k = static_cast<double>(bk.counts.size());
    std::vector<LexiconEntry> scored;
    scored.reserve(bk.counts.size());
    for (const auto& [items, count] : bk.counts) {
      const double p_s = static_cast<double>(count) / static_cast<double>(bk.total);
      const double p_null = null_probability(bk.dim, items, bi.counts, bi.total);
      const auto score = t_statistic(p_s, p_null, n_k);
      if (!score) continue;
      scored.push_back({{bk.dim, bk.degree, items}, count, p_s, *score});
    }
    if (scored.size() < bk.counts.size()) {
      log().warn("{} degree {}: {} gram(s) with p(s)=1 excluded", dimension_name(bk.dim),
                 bk.degree, bk.counts.size() - scored.size());
    }
    std::sort(scored.begin(), scored.end(), [](const LexiconEntry& a, const LexiconEntry& b) {
      if (a.t_score != b.t_score) return a.t_score > b.t_score;
      return a.gram.items < b.gram.items;
    });
    const auto keep = static_cast<std::size_t>(
        std::ceil(top_ratio * static_cast<double>(bk.counts.size()) - 1e-9));
    scored.resize(std::min(keep, scored.size()));
    bk.kept = std::move(scored);
  }

  for (auto& bk : buckets) {
    auto& stats = lex.buckets_[{bk.dim, bk.degree}];
    stats.total = bk.total;
    stats.distinct = bk.counts.size();
    stats.kept = bk.kept.size();
    if (bk.degree == 2) lex.bigrams_[static_cast<std::size_t>(bk.dim)] = std::move(bk.counts);
    for (auto& e : bk.kept) lex.entries_.push_back(std::move(e));
  }
  lex.reindex();
  return lex;
}

namespace {

std::string items_text(Dimension d, std::span<const Item> items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += ' ';
    switch (d) {
      case Dimension::Pitch: s += std::to_string(items[i].interval); break;
      case Dimension::Rhythm: s += std::to_string(items[i].onset); break;
      case Dimension::Combined:
        s += std::to_string(items[i].interval) + ':' + std::to_string(items[i].onset);
        break;
    }
  }
  return s;
}

ItemRun parse_items(Dimension d, const std::string& s) {
  ItemRun out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    Item it;
    if (d == Dimension::Combined) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw std::runtime_error("lexicon: bad combined item " + tok);
      it.interval = std::stoi(tok.substr(0, colon));
      it.onset = std::stoi(tok.substr(colon + 1));
    } else if (d == Dimension::Pitch) {
      it.interval = std::stoi(tok);
    } else {
      it.onset = std::stoi(tok);
    }
    out.push_back(it);
  }
  return out;
}

std::string score_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string Lexicon::serialize() const {
  std::ostringstream out;
  out << "# melofill lexicon v1\n"
      << "# corpus_hash " << hex64(meta_.corpus_hash) << '\n'
      << "# n_max " << meta_.n_max << '\n'
      << "# top_ratio " << score_text(meta_.top_ratio) << '\n'
      << "# tie_break score_desc,items_lex_asc\n";
  for (const auto& [key, st] : buckets_) {
    out << "# bucket " << dimension_name(key.first) << ' ' << key.second << " total " << st.total
        << " distinct " << st.distinct << " kept " << st.kept << '\n';
  }
  for (auto d : kAllDimensions) {
    for (const auto& [items, count] : bigrams_[static_cast<std::size_t>(d)]) {
      out << dimension_name(d) << "\t2\t" << items_text(d, items) << '\t' << count << "\t-\n";
    }
  }
  for (const auto& e : entries_) {
    out << dimension_name(e.gram.dimension) << '\t' << e.gram.degree << '\t'
        << items_text(e.gram.dimension, e.gram.items) << '\t' << e.frequency << '\t'
        << score_text(e.t_score) << '\n';
  }
  return out.str();
}

Lexicon Lexicon::parse(const std::string& text) {
  Lexicon lex;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("lexicon line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream h(line.substr(1));
      std::string key;
      h >> key;
      if (key == "corpus_hash") {
        std::string hex;
        h >> hex;
        lex.meta_.corpus_hash = std::stoull(hex, nullptr, 16);
      } else if (key == "n_max") {
        h >> lex.meta_.n_max;
      } else if (key == "top_ratio") {
        h >> lex.meta_.top_ratio;
      } else if (key == "bucket") {
        std::string dim, w1, w2, w3;
        int degree = 0;
        BucketStats st;
        h >> dim >> degree >> w1 >> st.total >> w2 >> st.distinct >> w3 >> st.kept;
        auto d = parse_dimension(dim);
        if (!d || !h) fail("bad bucket header");
        lex.buckets_[{*d, degree}] = st;
      }
      continue;
    }
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 5) fail("expected 5 tab-separated columns");
    auto d = parse_dimension(cols[0]);
    if (!d) fail("unknown dimension " + cols[0]);
    const int degree = std::stoi(cols[1]);
    auto items = parse_items(*d, cols[2]);
    if (items.size() != window_length(*d, degree)) fail("item count does not match degree");
    const auto freq = std::stoull(cols[3]);
    if (degree == 2) {
      lex.bigrams_[static_cast<std::size_t>(*d)][items] = freq;
      continue;
    }
    const auto& st = lex.buckets_[{*d, degree}];
    LexiconEntry e{{*d, degree, std::move(items)}, freq,
                   st.total ? static_cast<double>(freq) / static_cast<double>(st.total) : 0.0,
                   std::strtod(cols[4].c_str(), nullptr)};
    lex.entries_.push_back(std::move(e));
  }
  lex.reindex();
  return lex;
}

void Lexicon::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << serialize();
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<NoteSpan> max_match(const TokenSequence& t, const Lexicon& lex, Dimension d) {
  std::vector<NoteEvent> notes;
  for (const auto& tok : t) {
    if (tok.is_note()) notes.push_back({tok.pitch(), tok.onset(), tok.duration()});
  }
  std::vector<NoteSpan> spans;
  if (notes.size() < 2 || lex.empty()) return spans;

  // run_end[i]: one past the last note in i's run.
  std::vector<std::size_t> run_end(notes.size());
  for (std::size_t i = notes.size(); i-- > 0;) {
    const bool breaks = i + 1 == notes.size() || notes[i + 1].onset - notes[i].end() > kRunBreakRest;
    run_end[i] = breaks ? i + 1 : run_end[i + 1];
  }

  const int n_max = lex.meta().n_max;
  ItemRun items;
  std::size_t i = 0;
  while (i < notes.size()) {
    std::size_t matched = 0;
    const auto avail = run_end[i] - i;
    for (int n = std::min<int>(n_max, static_cast<int>(avail)); n >= 3 && !matched; --n) {
      items.clear();
      for (std::size_t j = (d == Dimension::Rhythm ? i : i + 1); j < i + static_cast<std::size_t>(n); ++j) {
        items.push_back(item_at(d, notes, j));
      }
      if (lex.contains(d, n, items)) matched = static_cast<std::size_t>(n);
    }
    if (matched) {
      spans.push_back({i, matched});
      i += matched;
    } else {
      ++i;
    }
  }
  return spans;
}

}  // namespace melofill
