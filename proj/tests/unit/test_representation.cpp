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

#include "doctest.h"
#include "fixtures.hpp"
#include "melofill/corpus.hpp"
#include "melofill/grid.hpp"
#include "melofill/representation.hpp"

using namespace melofill;
using namespace melofill::testing;

TEST_CASE("tempo_bucket boundaries") {
  CHECK(tempo_bucket(59) == TempoClass::Largo);
  CHECK(tempo_bucket(60) == TempoClass::Larghetto);
  CHECK(tempo_bucket(65.99) == TempoClass::Larghetto);
  CHECK(tempo_bucket(66) == TempoClass::Adagio);
  CHECK(tempo_bucket(76) == TempoClass::Andante);
  CHECK(tempo_bucket(100) == TempoClass::Andante);
  CHECK(tempo_bucket(108) == TempoClass::Moderato);
  CHECK(tempo_bucket(120) == TempoClass::Allegro);
  CHECK(tempo_bucket(167.9) == TempoClass::Allegro);
  CHECK(tempo_bucket(168) == TempoClass::Presto);
  for (int c = 0; c < kNumTempoClasses; ++c) {
    const auto cls = static_cast<TempoClass>(c);
    CHECK(tempo_bucket(60'000'000.0 / tempo_class_us(cls)) == cls);
  }
}

TEST_CASE("symbol tables") {
  CHECK(position_symbols().size() == 96);
  CHECK(duration_symbols().size() == 69);
  CHECK(position_symbols().back() == 1890);
  CHECK(duration_symbols().front() == 30);
  CHECK(duration_symbols().back() == 1920);
  CHECK(std::is_sorted(position_symbols().begin(), position_symbols().end()));
}

TEST_CASE("detect_phrase_boundaries") {
  SUBCASE("empty") { CHECK(detect_phrase_boundaries(Melody{}).empty()); }
  SUBCASE("last note as the only candidate") {
    auto m = line({{60, 240}, {62, 240}, {64, 240}, {65, 240}, {67, 960}});
    CHECK(detect_phrase_boundaries(m).empty());
  }
  SUBCASE("eighth note followed by an eighth rest") {
    auto m = line({{60, 480}, {62, 480}, {64, 480}, {65, 480},
                   {67, 240}, {-1, 240}, {65, 480}, {64, 480}, {62, 480}});
    CHECK(detect_phrase_boundaries(m) == std::vector<std::size_t>{4});
  }
  SUBCASE("uniform eighths") {
    Melody m;
    for (int i = 0; i < 32; ++i) m.notes.push_back({60 + i % 5, i * 240, 240});
    CHECK(detect_phrase_boundaries(m).empty());
  }
  SUBCASE("first note kept only when clearly longer than the next candidate") {
    auto keep = line({{60, 1440}, {62, 480}, {64, 960}, {65, 960}, {67, 480}});
    // candidates 0 (1440), 2 (960 in bar 1); 1440 - 960 = 480 > 240
    CHECK(detect_phrase_boundaries(keep) == std::vector<std::size_t>{0, 2});
    auto drop = line({{60, 1080}, {62, 840}, {64, 960}, {65, 960}, {67, 480}});
    // 1080 - 960 = 120 < 240
    CHECK(detect_phrase_boundaries(drop) == std::vector<std::size_t>{2});
    auto edge = line({{60, 1200}, {62, 720}, {64, 960}, {65, 960}, {67, 480}});
    // removal needs a margin strictly below 240
    CHECK(detect_phrase_boundaries(edge) == std::vector<std::size_t>{0, 2});
  }
  SUBCASE("adjacent candidates keep the longer unless not clearly longer") {
    // notes 1 (960, bar 0 longest) and 2 (720, rest follows) are adjacent.
    auto m = line({{60, 240}, {62, 960}, {64, 480}, {-1, 240}, {65, 480}, {67, 480}, {69, 480},
                   {71, 480}});
    // 960 - 480 = 480 > 240: the later candidate is dropped.
    CHECK(detect_phrase_boundaries(m) == std::vector<std::size_t>{1});
    auto n = line({{60, 240}, {62, 720}, {64, 720}, {-1, 240}, {65, 480}, {67, 480}, {69, 480},
                   {71, 480}});
    // 720 - 720 = 0: the earlier candidate is dropped.
    CHECK(detect_phrase_boundaries(n) == std::vector<std::size_t>{2});
  }
}

TEST_CASE("encode") {
  SUBCASE("single note at 100 bpm") {
    Melody m;
    m.tempo_us = 600000;
    m.notes = {{60, 0, 480}};
    const auto t = encode(m);
    REQUIRE(t.size() == 3);
    CHECK(t[0].is(SpecialKind::BOS));
    CHECK(t[1] == CompoundToken::note(TempoClass::Andante, 0, 0, 60, 480));
    CHECK(t[2].is(SpecialKind::EOS));
  }
  SUBCASE("bar and position split") {
    Melody m;
    m.notes = {{60, 1950, 240}};
    const auto t = encode(m);
    CHECK(t[1].bar() == 1);
    CHECK(t[1].position() == 30);
  }
  SUBCASE("empty melody") {
    const auto t = encode(Melody{});
    REQUIRE(t.size() == 2);
    CHECK(t[0].is(SpecialKind::BOS));
    CHECK(t[1].is(SpecialKind::EOS));
  }
  SUBCASE("too long") {
    Melody m;
    m.notes = {{60, 128 * kTicksPerBar, 480}};
    CHECK_THROWS_AS(encode(m), EncodeError);
  }
  SUBCASE("SEG follows each boundary note and never changes the notes") {
    for (std::uint64_t s = 0; s < 30; ++s) {
      const auto m = synth_melody(s);
      const auto t = encode(m);
      const auto b = detect_phrase_boundaries(m);
      std::size_t segs = 0, note = 0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].is(SpecialKind::SEG)) {
          ++segs;
          REQUIRE(i > 0);
          CHECK(t[i - 1].is_note());
          CHECK(std::find(b.begin(), b.end(), note - 1) != b.end());
        }
        if (t[i].is_note()) {
          CHECK(t[i].pitch() == m.notes[note].pitch);
          CHECK(t[i].onset() == m.notes[note].onset);
          CHECK(position_index(t[i].position()) >= 0);
          ++note;
        }
      }
      CHECK(segs == b.size());
      CHECK(note == m.notes.size());
    }
  }
}

TEST_CASE("decode") {
  SUBCASE("round trip on fixtures") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      auto m = synth_melody(s);
      m.tempo_us = tempo_class_us(tempo_bucket(m.bpm()));
      CHECK(decode(encode(m)) == m);
    }
  }
  SUBCASE("onset from bar and position") {
    TokenSequence t = {CompoundToken::special(SpecialKind::BOS),
                       CompoundToken::note(TempoClass::Allegro, 2, 30, 60, 480),
                       CompoundToken::special(SpecialKind::EOS)};
    CHECK(decode(t).notes.at(0).onset == 3870);
  }
  SUBCASE("missing EOS is a warning") {
    TokenSequence t = {CompoundToken::special(SpecialKind::BOS),
                       CompoundToken::note(TempoClass::Allegro, 0, 0, 60, 480)};
    std::vector<std::string> w;
    CHECK(decode(t, &w).notes.size() == 1);
    CHECK(w.size() == 1);
  }
  SUBCASE("mixed special and note fields") {
    auto bad = CompoundToken::note(TempoClass::Allegro, 0, 0, 60, 480);
    bad[Attribute::Pitch] = CompoundToken::special_field(SpecialKind::PAD);
    TokenSequence t = {CompoundToken::special(SpecialKind::BOS), bad,
                       CompoundToken::special(SpecialKind::EOS)};
    try {
      decode(t);
      FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
      CHECK(e.index() == 1);
    }
  }
}

TEST_CASE("token text format") {
  const auto t = encode(synth_melody(12));
  CHECK(parse_tokens(write_tokens(t)) == t);
  CHECK(write_tokens({CompoundToken::special(SpecialKind::BOS)}) ==
        "<BOS>,<BOS>,<BOS>,<BOS>,<BOS>\n");
  CHECK_THROWS(parse_tokens("1,2,3\n"));
}

TEST_CASE("vocabulary") {
  const Vocabulary v;
  CHECK(v.size(Attribute::Tempo) == 22);
  CHECK(v.size(Attribute::Position) == 134);
  CHECK(v.size(Attribute::Pitch) == 262);
  CHECK(v.size(Attribute::Duration) == 134);
  CHECK(v.total_size() == 22 + 22 + 134 + 262 + 134);

  const auto note = CompoundToken::note(TempoClass::Presto, 37, 1880, 127, 640);
  const auto ids = v.ids(note);
  CHECK(ids[1] == 37 % 16);
  for (int a = 0; a < kNumAttributes; ++a) {
    const auto attr = static_cast<Attribute>(a);
    CHECK_FALSE(v.id_is_special(attr, ids[static_cast<std::size_t>(a)]));
    const auto back = v.value(attr, ids[static_cast<std::size_t>(a)]);
    REQUIRE(back);
    if (attr != Attribute::Bar) CHECK(*back == note[attr]);
  }
  const auto sep = v.ids(CompoundToken::special(SpecialKind::SEP));
  for (int a = 0; a < kNumAttributes; ++a) {
    const auto attr = static_cast<Attribute>(a);
    CHECK(sep[static_cast<std::size_t>(a)] == v.special_id(attr, SpecialKind::SEP));
    CHECK(v.value(attr, sep[static_cast<std::size_t>(a)]) ==
          CompoundToken::special_field(SpecialKind::SEP));
  }
  CHECK_FALSE(v.value(Attribute::Position, 100));
  CHECK_THROWS_AS(v.id(Attribute::Position, 31), std::out_of_range);
  CHECK(Vocabulary::unfolded().ids(note)[1] == 37);
}
