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
#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "fixtures.hpp"
#include "melofill/infilling.hpp"

using namespace melofill;
using namespace melofill::testing;

namespace {

std::size_t notes_in(const TokenSequence& t) { return note_indices(t).size(); }

void check_spans(const TokenSequence& t, const std::vector<Span>& spans) {
  for (std::size_t i = 0; i < spans.size(); ++i) {
    CHECK(spans[i].length >= 1);
    CHECK(t[spans[i].start].is_note());
    CHECK(t[spans[i].end() - 1].is_note());
    if (i) CHECK(spans[i].start >= spans[i - 1].end());
  }
}

}  // namespace

TEST_CASE("attention_mask") {
  SUBCASE("hand example") {
    const auto m = attention_mask({3, {2}});
    REQUIRE(m.n == 5);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(m(0, j) == (j < 3));
      CHECK(m(3, j) == (j <= 3));
      CHECK(m(4, j));
    }
  }
  SUBCASE("no suffix is fully bidirectional") {
    const auto m = attention_mask({4, {}});
    CHECK(std::all_of(m.cells.begin(), m.cells.end(), [](auto c) { return c == 1; }));
  }
  SUBCASE("no prefix is causal") {
    const auto m = attention_mask({0, {3, 2}});
    for (std::size_t i = 0; i < m.n; ++i) {
      for (std::size_t j = 0; j < m.n; ++j) CHECK(m(i, j) == (j <= i));
    }
  }
}

TEST_CASE("build_masked_sample") {
  const auto t = encode(line({{60, 480}, {62, 480}, {64, 480}}));  // BOS n n n EOS
  SUBCASE("no spans") {
    const auto s = build_masked_sample(t, {});
    CHECK(s.prefix == t);
    CHECK(s.suffix.empty());
    CHECK(reconstruct(s) == t);
  }
  SUBCASE("one span of two tokens") {
    const std::vector<Span> spans = {{1, 2}};
    const auto s = build_masked_sample(t, spans);
    CHECK(s.prefix.size() == 4);
    CHECK(s.prefix[1].is(SpecialKind::MASK));
    CHECK(s.suffix.size() == 3);
    CHECK(s.suffix_inputs.size() == 3);
    CHECK(s.suffix_inputs[0].is(SpecialKind::MASK));
    CHECK(s.suffix_inputs[1] == t[1]);
    CHECK(s.suffix[0] == t[1]);
    CHECK(s.suffix[2].is(SpecialKind::SEP));
    CHECK(s.mask_positions == std::vector<std::size_t>{1});
    // MASK reuses the first masked note's timing
    CHECK(s.bar_context[1] == t[1].bar());
    CHECK(s.position_context[1] == t[1].position());
    CHECK(s.position_context[4] == t[1].position());
    CHECK(s.position_context[5] == t[1].position());
    CHECK(s.position_context[6] == t[2].position());
    CHECK(reconstruct(s) == t);
  }
  SUBCASE("argument errors") {
    const std::vector<Span> overlap = {{1, 2}, {2, 1}};
    CHECK_THROWS_AS(build_masked_sample(t, overlap), std::invalid_argument);
    const std::vector<Span> special = {{0, 2}};
    CHECK_THROWS_AS(build_masked_sample(t, special), std::invalid_argument);
  }
}

TEST_CASE("causal sample") {
  const auto t = encode(synth_melody(2));
  const auto s = build_causal_sample(t);
  CHECK(s.prefix.empty());
  CHECK(s.suffix_inputs.size() == t.size() - 1);
  CHECK(s.suffix[0] == t[1]);
  CHECK(reconstruct(s) == t);
}

TEST_CASE("sample_long_span") {
  Melody m;
  for (int i = 0; i < 100; ++i) m.notes.push_back({60 + i % 7, i * 240, 240});
  const auto t = encode(m);
  Rng rng(1);
  std::vector<int> hist(51, 0);
  const auto idx = note_indices(t);
  for (int i = 0; i < 10000; ++i) {
    const auto s = sample_long_span(t, 0.5, rng);
    const auto first = static_cast<std::size_t>(std::find(idx.begin(), idx.end(), s.start) - idx.begin());
    REQUIRE(first <= 50);
    ++hist[first];
    std::vector<Span> one = {s};
    CHECK(masked_note_fraction(t, one) == doctest::Approx(0.5));
  }
  // chi-square, 50 dof, critical value at alpha = 0.01 is 76.15
  double chi = 0;
  const double e = 10000.0 / 51;
  for (int h : hist) chi += (h - e) * (h - e) / e;
  CHECK(chi < 76.15);

  const auto two = encode(line({{60, 480}, {62, 480}}));
  CHECK(sample_long_span(two, 0.5, rng).length == 1);
}

TEST_CASE("sample_random_spans") {
  Rng rng(2);
  const auto corpus = fixture_corpus(10, 8, 24);
  double sum = 0;
  int count = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto t = encode(corpus[static_cast<std::size_t>(i) % corpus.size()]);
    const auto spans = sample_random_spans(t, 0.5, rng);
    check_spans(t, spans);
    for (const auto& s : spans) {
      std::size_t notes = 0;
      for (auto j = s.start; j < s.end(); ++j) notes += t[j].is_note();
      CHECK(notes <= 10);
    }
    sum += masked_note_fraction(t, spans);
    ++count;
  }
  CHECK(std::abs(sum / count - 0.5) < 0.02);

  Melody m;
  for (int i = 0; i < 100; ++i) m.notes.push_back({60 + i % 7, i * 240, 240});
  CHECK(sample_random_spans(encode(m), 0.001, rng).size() == 1);
}

TEST_CASE("sample_bar_spans") {
  SUBCASE("eight equal bars") {
    Melody m;
    for (int i = 0; i < 32; ++i) m.notes.push_back({60 + i % 7, i * 480, 480});
    const auto t = encode(m);
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const auto spans = sample_bar_spans(t, 0.5, rng);
      CHECK(spans.size() == 4);
      check_spans(t, spans);
      for (const auto& s : spans) CHECK(t[s.start].bar() == t[s.end() - 1].bar());
    }
  }
  SUBCASE("smallest superset of bars and empty bars skipped") {
    Rng rng(4);
    const auto t = encode(synth_melody(10, 16));
    for (int trial = 0; trial < 100; ++trial) {
      const auto spans = sample_bar_spans(t, 0.5, rng);
      const double f = masked_note_fraction(t, spans);
      CHECK(f >= 0.5 - 1e-12);
      // bars are added until the target is met, so dropping the largest
      // chosen bar must fall below it
      const auto n = notes_in(t);
      std::size_t largest = 0;
      for (const auto& s : spans) {
        std::size_t k = 0;
        for (auto j = s.start; j < s.end(); ++j) k += t[j].is_note();
        CHECK(k >= 1);
        largest = std::max(largest, k);
      }
      CHECK(f * static_cast<double>(n) - static_cast<double>(largest) < 0.5 * static_cast<double>(n));
    }
  }
}

TEST_CASE("sample_ngram_spans") {
  const auto corpus = fixture_corpus(30, 9, 16);
  const auto lex = build_lexicon(corpus);
  SUBCASE("empty lexicon falls back to random spans") {
    Rng rng(5);
    const auto t = encode(corpus[0]);
    std::size_t fallback = 0;
    const auto spans = sample_ngram_spans(t, Lexicon{}, Dimension::Pitch, 0.15, rng, 3, &fallback);
    CHECK(fallback == spans.size());
    CHECK(masked_note_fraction(t, spans) * static_cast<double>(notes_in(t)) ==
          doctest::Approx(std::ceil(0.15 * static_cast<double>(notes_in(t)))));
  }
  SUBCASE("masked count band") {
    Rng rng(6);
    for (auto d : kAllDimensions) {
      for (int i = 0; i < 300; ++i) {
        const auto t = encode(corpus[static_cast<std::size_t>(i) % corpus.size()]);
        const auto spans = sample_ngram_spans(t, lex, d, 0.15, rng);
        check_spans(t, spans);
        const double n = static_cast<double>(notes_in(t));
        const double masked = masked_note_fraction(t, spans) * n;
        CHECK(masked >= 0.15 * n - 1e-9);
        CHECK(masked <= 0.15 * n + 11 + 1e-9);
      }
    }
  }
  SUBCASE("ratio beyond budget uses every candidate") {
    Rng rng(7);
    const auto t = encode(corpus[1]);
    const auto cands = max_match(t, lex, Dimension::Rhythm);
    std::size_t fallback = 0;
    const auto spans = sample_ngram_spans(t, lex, Dimension::Rhythm, 0.99, rng, 3, &fallback);
    CHECK(spans.size() - fallback == cands.size());
  }
}

TEST_CASE("reconstruct for every objective") {
  const auto corpus = fixture_corpus(10, 10);
  const auto lex = build_lexicon(corpus);
  InfillConfig cfg;
  Rng rng(8);
  for (auto obj : kAllObjectives) {
    for (const auto& m : corpus) {
      const auto t = encode(m);
      const auto s = make_sample(obj, t, &lex, cfg, rng);
      CHECK(reconstruct(s) == t);
      CHECK(s.bar_context.size() == s.input_length());
      CHECK(s.suffix.size() == s.suffix_inputs.size());
      std::size_t masked = 0;
      for (const auto& sp : s.spans) masked += sp.length;
      if (obj != Objective::Slm) {
        CHECK(s.prefix.size() == t.size() - masked + s.spans.size());
        for (const auto& tok : s.suffix) CHECK((tok.is_note() || tok.is(SpecialKind::SEP) || tok.is(SpecialKind::SEG)));
      }
      if (obj == Objective::LongSpan) CHECK(s.spans.size() == 1);
    }
  }
}

TEST_CASE("make_training_batch") {
  const auto corpus = fixture_corpus(20, 11, 40);
  const auto lex = build_lexicon(corpus);
  InfillConfig cfg;

  SUBCASE("deterministic and bounded") {
    BatchRequest req{std::nullopt, 16, 42, 3};
    const auto a = make_training_batch(corpus, req, &lex, cfg);
    const auto b = make_training_batch(corpus, req, &lex, cfg);
    REQUIRE(a.size() == 16);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(dump_sample(a[i]) == dump_sample(b[i]));
      CHECK(reconstruct(a[i]).size() <= cfg.segment_tokens);
      CHECK(std::abs(a[i].transposition) <= 6);
    }
  }
  SUBCASE("fixed objective") {
    BatchRequest req{Objective::LongSpan, 32, 1, 0};
    for (const auto& s : make_training_batch(corpus, req, &lex, cfg)) {
      CHECK(s.objective == Objective::LongSpan);
      CHECK(s.spans.size() == 1);
    }
    req.objective = Objective::Slm;
    for (const auto& s : make_training_batch(corpus, req, &lex, cfg)) CHECK(s.prefix.empty());
  }
  SUBCASE("multi-task counts are balanced") {
    std::map<Objective, int> counts;
    for (std::uint64_t b = 0; b < 125; ++b) {
      BatchRequest req{std::nullopt, 32, 9, b};
      for (const auto& s : make_training_batch(corpus, req, &lex, cfg)) ++counts[s.objective];
    }
    // 4000 draws, p = 1/4: sigma = sqrt(4000 * 0.25 * 0.75) ~ 27.4
    CHECK(counts.size() == 4);
    for (auto [o, c] : counts) CHECK(std::abs(c - 1000) <= 83);
  }
  SUBCASE("round robin") {
    InfillConfig rr = cfg;
    rr.round_robin = true;
    for (std::uint64_t b = 0; b < 8; ++b) {
      BatchRequest req{std::nullopt, 4, 9, b};
      for (const auto& s : make_training_batch(corpus, req, &lex, rr)) {
        CHECK(s.objective == kMultiTaskObjectives[b % 4]);
      }
    }
  }
  SUBCASE("transposition leaves rhythm projections unchanged") {
    const auto& m = corpus[0];
    CHECK(relative_projection(transpose(m, 6), Dimension::Rhythm) ==
          relative_projection(m, Dimension::Rhythm));
  }
}

TEST_CASE("random_segment") {
  Rng rng(12);
  const auto m = synth_melody(13, 120);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_segment(m, 256, rng);
    CHECK(t.size() <= 256);
    CHECK(t.front().is(SpecialKind::BOS));
    CHECK(t[1].is_note());
    CHECK(t[1].bar() == 0);
    CHECK((t.back().is_note() || t.back().is(SpecialKind::EOS)));
  }
  const auto short_piece = synth_melody(14, 12);
  CHECK(random_segment(short_piece, 256, rng) == encode(short_piece));
}
