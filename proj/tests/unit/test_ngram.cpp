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
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "melofill/ngram.hpp"
#include "oracles.hpp"

using namespace melofill;
using namespace melofill::testing;

namespace {

Melody pitches(std::initializer_list<int> ps, int dur = 480) {
  Melody m;
  std::int64_t t = 0;
  for (int p : ps) {
    m.notes.push_back({p, t, dur});
    t += dur;
  }
  return m;
}

ItemRun intervals(std::initializer_list<int> v) {
  ItemRun r;
  for (int x : v) r.push_back({x, 0});
  return r;
}

}  // namespace

TEST_CASE("relative_projection") {
  const auto m = pitches({60, 64, 67});
  const auto p = relative_projection(m, Dimension::Pitch);
  REQUIRE(p.size() == 1);
  CHECK(p[0] == intervals({4, 3}));
  CHECK(relative_projection(transpose(m, 7), Dimension::Pitch) == p);

  const auto r = relative_projection(m, Dimension::Rhythm);
  REQUIRE(r.size() == 1);
  CHECK(r[0] == ItemRun{{0, 0}, {0, 480}, {0, 960}});

  const auto c = relative_projection(m, Dimension::Combined);
  CHECK(c.at(0) == ItemRun{{4, 480}, {3, 960}});

  Melody gap = pitches({60, 62, 64});
  gap.notes.push_back({65, gap.notes.back().end() + 2000, 480});
  gap.notes.push_back({67, gap.notes.back().end(), 480});
  CHECK(relative_projection(gap, Dimension::Pitch).size() == 2);
  CHECK(relative_projection(gap, Dimension::Rhythm).size() == 2);
  // exactly one bar of rest does not break the run
  Melody bar = pitches({60, 62});
  bar.notes.push_back({64, bar.notes.back().end() + 1920, 480});
  CHECK(relative_projection(bar, Dimension::Pitch).size() == 1);
}

TEST_CASE("extract_ngrams") {
  const ItemRun run = intervals({1, 2, 3});
  CHECK(extract_ngrams(run, 2) == std::vector<ItemRun>{intervals({1, 2}), intervals({2, 3})});
  CHECK(extract_ngrams(run, 4).empty());
  for (std::size_t len = 0; len < 15; ++len) {
    ItemRun r(len);
    for (std::size_t k = 1; k < 6; ++k) {
      CHECK(extract_ngrams(r, k).size() == (len >= k ? len - k + 1 : 0));
    }
  }
}

TEST_CASE("t_statistic") {
  CHECK(*t_statistic(0.3, 0.3, 10) == 0.0);
  CHECK(*t_statistic(0.01, 0.001, 1000) == doctest::Approx(2.8604).epsilon(1e-4));
  const double a = *t_statistic(0.05, 0.01, 250), b = *t_statistic(0.05, 0.01, 1000);
  CHECK(b == doctest::Approx(2 * a));
  CHECK_FALSE(t_statistic(0.0, 0.0, 10));
  CHECK_FALSE(t_statistic(1.0, 0.5, 10));
}

TEST_CASE("null_probability") {
  GramCounts bi = {{intervals({2}), 3}, {intervals({-1}), 1}};
  CHECK(null_probability(Dimension::Pitch, intervals({2, -1}), bi, 4) == doctest::Approx(0.75 * 0.25));
  CHECK(null_probability(Dimension::Pitch, intervals({2, 5}), bi, 4) == 0.0);
  GramCounts one = {{intervals({0}), 5}};
  CHECK(null_probability(Dimension::Pitch, intervals({0, 0, 0}), one, 5) == 1.0);
  GramCounts rb = {{ItemRun{{0, 0}, {0, 480}}, 2}, {ItemRun{{0, 480}, {0, 960}}, 2}};
  CHECK(null_probability(Dimension::Rhythm, ItemRun{{0, 0}, {0, 480}, {0, 960}}, rb, 8) ==
        doctest::Approx(0.0625));
}

TEST_CASE("build_lexicon matches the brute-force oracle") {
  const auto corpus = fixture_corpus(20, 3);
  for (double ratio : {0.25, 0.5, 1.0}) {
    const auto lex = build_lexicon(corpus, 12, ratio);
    CHECK(compare_with_oracle(lex, oracle_lexicon(corpus, 12, ratio)) == 0);
  }
  const auto small = build_lexicon(corpus, 5, 0.25);
  CHECK(compare_with_oracle(small, oracle_lexicon(corpus, 5, 0.25)) == 0);
}

TEST_CASE("build_lexicon properties") {
  const auto corpus = fixture_corpus(20, 4);
  const auto lex = build_lexicon(corpus);

  SUBCASE("bucket sizes follow top ratio") {
    for (auto d : kAllDimensions) {
      for (int k = 3; k <= 12; ++k) {
        const auto& b = lex.bucket(d, k);
        CHECK(b.kept <= static_cast<std::uint64_t>(std::ceil(0.25 * static_cast<double>(b.distinct))));
      }
    }
  }
  SUBCASE("window counting identity") {
    for (auto d : kAllDimensions) {
      std::vector<ItemRun> runs;
      for (const auto& m : corpus) {
        for (auto& r : relative_projection(m, d)) runs.push_back(r);
      }
      for (int k = 2; k <= 12; ++k) {
        std::uint64_t expect = 0;
        for (const auto& r : runs) {
          const auto w = window_length(d, k);
          if (r.size() >= w) expect += r.size() - w + 1;
        }
        CHECK(lex.bucket(d, k).total == expect);
      }
    }
  }
  SUBCASE("pitch and combined lexicons are transposition-invariant") {
    std::vector<Melody> up;
    for (const auto& m : corpus) up.push_back(transpose(m, 5));
    const auto lex2 = build_lexicon(up);
    CHECK(lex2.entries().size() == lex.entries().size());
    for (std::size_t i = 0; i < lex.entries().size(); ++i) {
      CHECK(lex.entries()[i].gram == lex2.entries()[i].gram);
      CHECK(lex.entries()[i].t_score == lex2.entries()[i].t_score);
    }
  }
  SUBCASE("rhythm lexicon ignores tempo") {
    std::vector<Melody> fast = corpus;
    for (auto& m : fast) m.tempo_us /= 2;
    CHECK(build_lexicon(fast).serialize() == lex.serialize());
  }
  SUBCASE("repeated melody dominates") {
    std::vector<Melody> mixed(fixture_corpus(30, 5));
    const auto motif = synth_melody(999);
    for (int i = 0; i < 30; ++i) mixed.push_back(motif);
    const auto l = build_lexicon(mixed, 4, 0.25);
    const auto proj = relative_projection(motif, Dimension::Pitch).at(0);
    const auto grams = extract_ngrams(proj, 2);
    std::size_t found = 0;
    for (const auto& g : grams) found += l.contains(Dimension::Pitch, 3, g);
    CHECK(found * 2 > grams.size());
  }
  SUBCASE("serialization round-trip") {
    const auto text = lex.serialize();
    const auto back = Lexicon::parse(text);
    CHECK(back.serialize() == text);
    CHECK(back.entries().size() == lex.entries().size());
    CHECK(text.find("# corpus_hash") != std::string::npos);
  }
  SUBCASE("deterministic") { CHECK(build_lexicon(corpus).serialize() == lex.serialize()); }
}

TEST_CASE("build_lexicon argument checks") {
  const auto corpus = fixture_corpus(2, 6);
  CHECK_THROWS(build_lexicon(corpus, 12, 0.0));
  CHECK_THROWS(build_lexicon(corpus, 1, 0.25));
  CHECK(build_lexicon(std::vector<Melody>{pitches({60})}).empty());
}

TEST_CASE("max_match") {
  const auto corpus = fixture_corpus(20, 7);
  const auto lex = build_lexicon(corpus);

  SUBCASE("empty lexicon") {
    CHECK(max_match(encode(corpus[0]), Lexicon{}, Dimension::Pitch).empty());
  }
  SUBCASE("longest match wins") {
    // corpus of one repeated phrase: every degree is present with p(s) < 1.
    std::vector<Melody> c;
    for (int i = 0; i < 5; ++i) c.push_back(pitches({60, 62, 64, 65, 67, 60, 62, 64, 65, 67}));
    c.push_back(pitches({60, 62, 64, 67, 69, 72}));
    const auto l = build_lexicon(c, 5, 1.0);
    const auto spans = max_match(encode(pitches({60, 62, 64, 65, 67})), l, Dimension::Pitch);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0] == NoteSpan{0, 5});
  }
  SUBCASE("spans are disjoint, sorted, and lexicon members") {
    for (auto d : kAllDimensions) {
      for (const auto& m : corpus) {
        const auto t = encode(m);
        const auto spans = max_match(t, lex, d);
        for (std::size_t i = 0; i < spans.size(); ++i) {
          CHECK(spans[i].length >= 3);
          if (i) CHECK(spans[i].begin >= spans[i - 1].end());
          Melody sub;
          for (std::size_t j = spans[i].begin; j < spans[i].end(); ++j) sub.notes.push_back(m.notes[j]);
          const auto proj = relative_projection(sub, d);
          REQUIRE(proj.size() == 1);
          CHECK(lex.contains(d, static_cast<int>(spans[i].length), proj[0]));
        }
      }
    }
  }
}
