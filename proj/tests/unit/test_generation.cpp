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
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "melofill/generation.hpp"
#include "melofill/grid.hpp"

using namespace melofill;
using namespace melofill::testing;

namespace {

std::size_t offset_of(const Vocabulary& v, Attribute a) {
  std::size_t off = 0;
  for (int i = 0; i < static_cast<int>(a); ++i) off += static_cast<std::size_t>(v.size(static_cast<Attribute>(i)));
  return off;
}

std::vector<float> random_row(const Vocabulary& v, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> row(static_cast<std::size_t>(v.total_size()));
  for (auto& x : row) x = static_cast<float>(4 * rng.uniform01() - 2);
  return row;
}

Model<float> tiny_model(std::uint64_t seed = 0) {
  auto c = ModelConfig::tiny();
  c.seed = seed;
  return Model<float>(c);
}

void set_pitch_bias(Model<float>& m, int id, float value) {
  const auto& g = m.group("out.bias");
  m.params()[g.offset + offset_of(m.config().vocab, Attribute::Pitch) + static_cast<std::size_t>(id)] = value;
}

}  // namespace

TEST_CASE("sampler config") {
  SamplerConfig c;
  CHECK(c.temperature == 0.9);
  CHECK(c.top_k == 10);
  c.temperature = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.top_k = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("top-1 and near-zero temperature pick the argmax") {
  const std::vector<float> logits{0.1f, 2.0f, -1.0f, 2.0f, 1.5f};
  const std::vector<int> all{0, 1, 2, 3, 4};
  Rng rng(1);
  SamplerConfig top1;
  top1.top_k = 1;
  SamplerConfig cold;
  cold.temperature = 1e-4;
  for (int i = 0; i < 200; ++i) {
    CHECK(sample_id(logits, all, top1, rng) == 1);  // tie goes to the lower id
    const int c = sample_id(logits, all, cold, rng);
    CHECK((c == 1 || c == 3));
  }
  cold.top_k = 5;
  const std::vector<float> distinct{0.1f, 2.0f, -1.0f, 1.9f, 1.5f};
  for (int i = 0; i < 200; ++i) CHECK(sample_id(distinct, all, cold, rng) == 1);
}

TEST_CASE("sampled frequencies follow the truncated softmax") {
  const std::vector<float> logits{0.3f, 1.2f, -0.4f, 0.9f, 2.0f, 0.0f, 1.1f, -2.0f, 0.8f, 1.6f};
  std::vector<int> ids(logits.size());
  std::iota(ids.begin(), ids.end(), 0);
  SamplerConfig cfg;
  cfg.top_k = 5;
  cfg.temperature = 0.9;

  // Oracle: the five largest logits are ids 4, 9, 1, 6, 3.
  const std::vector<int> top{4, 9, 1, 6, 3};
  std::vector<double> expect;
  for (int id : top) expect.push_back(std::exp(logits[static_cast<std::size_t>(id)] / 0.9));
  const double z = std::accumulate(expect.begin(), expect.end(), 0.0);
  for (auto& e : expect) e /= z;

  const auto dist = truncated_distribution(logits, ids, cfg);
  REQUIRE(dist.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(dist[i].first == top[i]);
    CHECK(dist[i].second == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  Rng rng(2024);
  constexpr int kDraws = 100000;
  std::map<int, int> counts;
  for (int i = 0; i < kDraws; ++i) ++counts[sample_id(logits, ids, cfg, rng)];
  CHECK(counts.size() == 5);
  double chi2 = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double e = expect[i] * kDraws;
    const double o = counts[top[i]];
    chi2 += (o - e) * (o - e) / e;
  }
  // 4 degrees of freedom, alpha 0.01
  CHECK(chi2 < 13.277);
}

TEST_CASE("sample_next keeps specials consistent") {
  const Vocabulary v;
  SamplerConfig cfg;
  Rng rng(3);
  auto row = random_row(v, 4);
  const auto pitch = offset_of(v, Attribute::Pitch);

  SUBCASE("special pitch makes a special token") {
    row[pitch + static_cast<std::size_t>(v.special_id(Attribute::Pitch, SpecialKind::SEP))] = 50;
    const auto t = sample_next(row, v, cfg, rng);
    CHECK(t == CompoundToken::special(SpecialKind::SEP));
  }
  SUBCASE("ineligible specials and padding are never drawn") {
    // Strongly favour MASK, PAD and padding ids everywhere; none may come out.
    for (int a = 0; a < kNumAttributes; ++a) {
      const auto at = static_cast<Attribute>(a);
      const auto off = offset_of(v, at);
      for (int id = 0; id < v.size(at); ++id) {
        const bool junk = !v.value(at, id) || id == v.special_id(at, SpecialKind::MASK) ||
                          id == v.special_id(at, SpecialKind::PAD) ||
                          id == v.special_id(at, SpecialKind::BOS);
        if (junk) row[off + static_cast<std::size_t>(id)] = 40;
      }
    }
    for (int i = 0; i < 500; ++i) {
      const auto t = sample_next(row, v, cfg, rng);
      REQUIRE(t.is_note());
      CHECK(t[Attribute::Tempo] < kNumTempoClasses);
      CHECK(t.bar() < 16);
      CHECK(position_index(t.position()) >= 0);
      CHECK(duration_index(t.duration()) >= 0);
      CHECK(t.pitch() <= 127);
    }
  }
  SUBCASE("note heads never produce specials") {
    for (int a = 0; a < kNumAttributes; ++a) {
      if (a == 3) continue;
      const auto at = static_cast<Attribute>(a);
      row[offset_of(v, at) + static_cast<std::size_t>(v.special_id(at, SpecialKind::EOS))] = 60;
    }
    for (int i = 0; i < 200; ++i) {
      const auto t = sample_next(row, v, cfg, rng);
      CHECK((t.is_note() || t.is_special()));
    }
  }
}

TEST_CASE("gap samples") {
  const auto t = encode(synth_melody(8));
  const auto [a, b] = bar_range(t, 3, 7);
  REQUIRE(a < b);
  for (std::size_t i = a; i < b; ++i) {
    if (t[i].is_note()) CHECK((t[i].bar() >= 3 && t[i].bar() < 7));
  }
  const auto s = build_gap_sample(t, a, b, 3);
  CHECK(reconstruct(s) == t);
  CHECK(s.suffix.back().is(SpecialKind::SEP));
  CHECK(s.bar_context[s.mask_positions[0]] == 3);
  CHECK(s.position_context[s.mask_positions[0]] == 0);
  CHECK(s.bar_context[s.prefix.size()] == 3);
  CHECK(s.input_length() == s.bar_context.size());

  // Empty gap: the only target is SEP.
  const auto [c, d] = bar_range(t, 200, 210);
  CHECK(c == d);
  CHECK(t[c].is(SpecialKind::EOS));
  const auto e = build_gap_sample(t, c, d, 12);
  CHECK(e.suffix.size() == 1);
  CHECK(reconstruct(e) == t);
}

TEST_CASE("continuation") {
  auto model = tiny_model(1);
  SamplerConfig cfg;
  cfg.bar_limit = 8;
  cfg.max_new_tokens = 120;

  SUBCASE("from scratch stays under the bar limit and decodes") {
    // Suppress early stops so the run has to reach the bar limit or a budget.
    const auto& v = model.config().vocab;
    set_pitch_bias(model, v.special_id(Attribute::Pitch, SpecialKind::SEP), -100);
    set_pitch_bias(model, v.special_id(Attribute::Pitch, SpecialKind::EOS), -100);
    cfg.bar_limit = 32;
    Rng rng(5);
    const auto r = continue_melody(model, {}, cfg, rng);
    CHECK(r.tokens.front().is(SpecialKind::BOS));
    CHECK(r.tokens.back().is(SpecialKind::EOS));
    const auto m = decode(r.tokens);
    CHECK(is_monophonic(m));
    for (const auto& n : m.notes) CHECK((n.bar() >= 0 && n.bar() < 32));
    CHECK(r.stats.new_tokens > 0);

    Rng again(5);
    CHECK(continue_melody(model, {}, cfg, again).tokens == r.tokens);
  }
  SUBCASE("prompted continuation starts after the prompt") {
    auto prompt_m = synth_melody(9);
    std::erase_if(prompt_m.notes, [](const NoteEvent& n) { return n.bar() >= 4; });
    const auto prompt = encode(prompt_m);
    Rng rng(6);
    const auto r = continue_melody(model, prompt, cfg, rng, 4);
    CHECK(r.prompt_notes == prompt_m.notes.size());
    const auto m = decode(r.tokens);
    CHECK(is_monophonic(m));
    REQUIRE(m.notes.size() >= prompt_m.notes.size());
    for (std::size_t i = 0; i < prompt_m.notes.size(); ++i) CHECK(m.notes[i] == prompt_m.notes[i]);
    for (std::size_t i = prompt_m.notes.size(); i < m.notes.size(); ++i) CHECK(m.notes[i].bar() >= 4);
  }
  SUBCASE("a model that always stops yields the prompt") {
    set_pitch_bias(model, model.config().vocab.special_id(Attribute::Pitch, SpecialKind::EOS), 100);
    Rng rng(7);
    const auto r = continue_melody(model, {}, cfg, rng);
    CHECK(r.tokens.size() == 2);
    CHECK(r.stats.new_tokens == 0);
  }
  SUBCASE("persistent rejections force a stop") {
    // Every draw lands in bar 0 at position 0: after the first note each
    // later note would overlap it.
    const auto& v = model.config().vocab;
    set_pitch_bias(model, 60, 100);
    const auto& g = model.group("out.bias");
    model.params()[g.offset + offset_of(v, Attribute::Bar)] = 100;
    model.params()[g.offset + offset_of(v, Attribute::Position)] = 100;
    model.params()[g.offset + offset_of(v, Attribute::Duration) + 20] = 100;
    Rng rng(8);
    const auto r = continue_melody(model, {}, cfg, rng);
    CHECK(r.stats.forced_stop);
    CHECK(r.stats.rejections == 9);
    CHECK(decode(r.tokens).notes.size() == 1);
  }
  SUBCASE("invalid prompts") {
    const auto prompt = encode(synth_melody(10));
    Rng rng(1);
    CHECK_THROWS_AS(continue_melody(model, prompt, cfg, rng), std::invalid_argument);  // 12 bars > limit
    CHECK_THROWS_AS(continue_melody(model, prompt, cfg, rng, 2), std::invalid_argument);
  }
}

TEST_CASE("inpainting") {
  const auto piece = synth_melody(12, 20);
  REQUIRE(bar_count(piece) >= 16);
  const auto parts = split_for_inpainting(piece, 2);
  for (const auto* p : {&parts.pre, &parts.post}) {
    for (const auto& n : p->notes) CHECK((n.bar() >= 0 && n.bar() < 6));
  }
  for (const auto& n : parts.middle.notes) CHECK((n.bar() >= 0 && n.bar() < 4));
  CHECK(parts.pre.notes.size() + parts.middle.notes.size() + parts.post.notes.size() ==
        static_cast<std::size_t>(std::count_if(piece.notes.begin(), piece.notes.end(), [](const NoteEvent& n) {
          return n.bar() >= 2 && n.bar() < 18;
        })));
  CHECK_THROWS(split_for_inpainting(piece, bar_count(piece) - 15));

  auto model = tiny_model(2);
  SamplerConfig cfg;
  Rng rng(11);
  const auto r = inpaint(model, parts.pre, parts.post, cfg, rng);
  const auto m = decode(r.tokens);
  CHECK(is_monophonic(m));
  for (const auto& tok : r.fill) {
    if (tok.is_note()) CHECK((tok.bar() >= 6 && tok.bar() <= 9));
  }
  // The context survives the splice unchanged.
  std::vector<NoteEvent> ctx;
  for (const auto& n : m.notes) {
    if (n.bar() < 6) ctx.push_back(n);
  }
  CHECK(ctx == parts.pre.notes);
  std::size_t post = 0;
  for (const auto& n : m.notes) post += n.bar() >= 10;
  CHECK(post == parts.post.notes.size());

  Rng again(11);
  CHECK(inpaint(model, parts.pre, parts.post, cfg, again).tokens == r.tokens);

  SUBCASE("empty fill") {
    set_pitch_bias(model, model.config().vocab.special_id(Attribute::Pitch, SpecialKind::SEP), 100);
    Rng rng2(1);
    const auto e = inpaint(model, parts.pre, parts.post, cfg, rng2);
    CHECK(e.empty_fill);
    CHECK(decode(e.tokens).notes.size() == parts.pre.notes.size() + parts.post.notes.size());
  }
  SUBCASE("context outside six bars is rejected") {
    Melody bad = parts.pre;
    bad.notes.push_back({60, 6 * kTicksPerBar, 480});
    Rng rng3(1);
    CHECK_THROWS_AS(inpaint(model, bad, parts.post, cfg, rng3), std::invalid_argument);
  }
}

TEST_CASE("fine-tuning samples") {
  SUBCASE("continuation") {
    const auto corpus = fixture_corpus(6, 13);
    FinetuneConfig cfg;
    Rng rng(1);
    int from_scratch = 0;
    for (int i = 0; i < 300; ++i) {
      const auto s = make_finetune_sample(corpus, cfg, rng);
      const auto t = reconstruct(s);
      const auto notes = note_indices(t).size();
      std::size_t future = 0;
      for (const auto& tok : s.suffix) future += tok.is_note();
      // cutting at a bar start can only move more notes into the future
      CHECK(static_cast<double>(future) >= 0.25 * static_cast<double>(notes) - 1e-9);
      const auto bar = s.bar_context[s.mask_positions[0]];
      for (const auto& tok : s.suffix) {
        if (tok.is_note()) CHECK(tok.bar() >= bar);
      }
      for (std::size_t k = 0; k < s.mask_positions[0]; ++k) {
        if (s.prefix[k].is_note()) CHECK(s.prefix[k].bar() < bar);
      }
      from_scratch += bar == 0;
    }
    CHECK(from_scratch < 300);
  }
  SUBCASE("inpainting") {
    std::vector<Melody> corpus{synth_melody(21, 20), synth_melody(22, 18)};
    FinetuneConfig cfg;
    cfg.task = FinetuneTask::Inpainting;
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
      const auto s = make_finetune_sample(corpus, cfg, rng);
      for (const auto& tok : s.suffix) {
        if (tok.is_note()) CHECK((tok.bar() >= 6 && tok.bar() <= 9));
      }
      const auto m = decode(reconstruct(s));
      CHECK(bar_count(m) <= 16);
    }
    const auto short_corpus = fixture_corpus(3, 14);
    CHECK_THROWS_WITH_AS(make_finetune_sample(short_corpus, cfg, rng), doctest::Contains("16 bars"),
                         std::invalid_argument);
  }
  SUBCASE("batches are reproducible") {
    const auto corpus = fixture_corpus(4, 15);
    FinetuneConfig cfg;
    const auto a = make_finetune_batch(corpus, cfg, 6, 3, 2);
    const auto b = make_finetune_batch(corpus, cfg, 6, 3, 2);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].suffix == b[i].suffix);
  }
}
