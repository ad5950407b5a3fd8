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
#include "melofill/generation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "melofill/log.hpp"

namespace melofill {

void SamplerConfig::validate() const {
  if (!(temperature > 0)) throw std::invalid_argument("sampler: temperature must be > 0");
  if (top_k < 1) throw std::invalid_argument("sampler: top_k must be >= 1");
  if (max_resample < 0) throw std::invalid_argument("sampler: max_resample must be >= 0");
  if (bar_limit < 1) throw std::invalid_argument("sampler: bar_limit must be >= 1");
}

std::vector<std::pair<int, double>> truncated_distribution(std::span<const float> logits,
                                                           std::span<const int> candidates,
                                                           const SamplerConfig& cfg) {
  if (candidates.empty()) throw std::invalid_argument("no candidate ids");
  std::vector<int> ids(candidates.begin(), candidates.end());
  const auto k = std::min(ids.size(), static_cast<std::size_t>(cfg.top_k));
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](int a, int b) {
                      const auto la = logits[static_cast<std::size_t>(a)];
                      const auto lb = logits[static_cast<std::size_t>(b)];
                      return la != lb ? la > lb : a < b;
                    });
  ids.resize(k);
  const double top = logits[static_cast<std::size_t>(ids.front())];
  std::vector<std::pair<int, double>> out;
  double sum = 0;
  for (int id : ids) {
    const double p = std::exp((logits[static_cast<std::size_t>(id)] - top) / cfg.temperature);
    out.emplace_back(id, p);
    sum += p;
  }
  for (auto& [id, p] : out) p /= sum;
  return out;
}

int sample_id(std::span<const float> logits, std::span<const int> candidates,
              const SamplerConfig& cfg, Rng& rng) {
  const auto dist = truncated_distribution(logits, candidates, cfg);
  double u = rng.uniform01();
  for (const auto& [id, p] : dist) {
    if (u < p) return id;
    u -= p;
  }
  return dist.back().first;
}

namespace {

const std::vector<int>& value_ids(const Vocabulary& v, Attribute a) {
  // Candidate lists depend only on the vocabulary layout; cache the default.
  static const Vocabulary kDefault;
  static const auto build = [](const Vocabulary& voc, Attribute at) {
    std::vector<int> ids;
    for (int id = 0; id < voc.base[static_cast<std::size_t>(at)]; ++id) {
      if (voc.value(at, id)) ids.push_back(id);
    }
    return ids;
  };
  static const std::array<std::vector<int>, kNumAttributes> cached = [&] {
    std::array<std::vector<int>, kNumAttributes> c;
    for (int a = 0; a < kNumAttributes; ++a) c[static_cast<std::size_t>(a)] = build(kDefault, static_cast<Attribute>(a));
    return c;
  }();
  if (v.base == kDefault.base && v.bar_modulo == kDefault.bar_modulo) return cached[static_cast<std::size_t>(a)];
  thread_local std::array<std::vector<int>, kNumAttributes> custom;
  custom[static_cast<std::size_t>(a)] = build(v, a);
  return custom[static_cast<std::size_t>(a)];
}

std::size_t head_offset(const Vocabulary& v, Attribute a) {
  std::size_t off = 0;
  for (int i = 0; i < static_cast<int>(a); ++i) off += static_cast<std::size_t>(v.size(static_cast<Attribute>(i)));
  return off;
}

}  // namespace

CompoundToken sample_next(std::span<const float> row, const Vocabulary& v, const SamplerConfig& cfg,
                          Rng& rng) {
  auto head = [&](Attribute a) {
    return row.subspan(head_offset(v, a), static_cast<std::size_t>(v.size(a)));
  };
  std::vector<int> pitch_ids = value_ids(v, Attribute::Pitch);
  for (auto k : {SpecialKind::SEG, SpecialKind::SEP, SpecialKind::EOS}) {
    pitch_ids.push_back(v.special_id(Attribute::Pitch, k));
  }
  const int pid = sample_id(head(Attribute::Pitch), pitch_ids, cfg, rng);
  if (v.id_is_special(Attribute::Pitch, pid)) {
    return CompoundToken::special(static_cast<SpecialKind>(pid - v.base[3]));
  }
  CompoundToken t;
  for (int a = 0; a < kNumAttributes; ++a) {
    const auto at = static_cast<Attribute>(a);
    const int id = at == Attribute::Pitch ? pid : sample_id(head(at), value_ids(v, at), cfg, rng);
    t.fields[static_cast<std::size_t>(a)] = *v.value(at, id);
  }
  return t;
}

std::pair<std::size_t, std::size_t> bar_range(const TokenSequence& t, std::int32_t first_bar,
                                              std::int32_t end_bar) {
  std::size_t a = t.size(), b = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t[i].is_note()) continue;
    if (t[i].bar() >= first_bar && t[i].bar() < end_bar) {
      a = std::min(a, i);
      b = i + 1;
    }
  }
  if (a < b) return {a, b};
  // No note in range: insert before the first note at or after end_bar, or
  // before EOS.
  for (std::size_t i = 0; i < t.size(); ++i) {
    if ((t[i].is_note() && t[i].bar() >= end_bar) || t[i].is(SpecialKind::EOS)) return {i, i};
  }
  return {t.size(), t.size()};
}

MaskedSample build_gap_sample(const TokenSequence& t, std::size_t a, std::size_t b,
                              std::int32_t mask_bar) {
  if (a > b || b > t.size()) throw std::invalid_argument("gap outside sequence");
  MaskedSample s;
  s.objective = Objective::LongSpan;
  const auto mask = CompoundToken::special(SpecialKind::MASK);
  auto push = [&](TokenSequence& dst, const CompoundToken& tok, std::int32_t bar, std::int32_t pos) {
    dst.push_back(tok);
    s.bar_context.push_back(bar);
    s.position_context.push_back(pos);
  };
  for (std::size_t i = 0; i < a; ++i) push(s.prefix, t[i], t[i].bar(), t[i].position());
  s.mask_positions.push_back(s.prefix.size());
  push(s.prefix, mask, mask_bar, 0);
  for (std::size_t i = b; i < t.size(); ++i) push(s.prefix, t[i], t[i].bar(), t[i].position());
  s.attention.prefix_len = s.prefix.size();
  push(s.suffix_inputs, mask, mask_bar, 0);
  for (std::size_t i = a; i < b; ++i) {
    push(s.suffix_inputs, t[i], t[i].bar(), t[i].position());
    s.suffix.push_back(t[i]);
  }
  s.suffix.push_back(CompoundToken::special(SpecialKind::SEP));
  s.spans.push_back({a, b - a});
  s.attention.suffix_segment_lens.push_back(b - a + 1);
  return s;
}

namespace {

enum class Verdict { Accept, Reject, Stop };

// Shared decoding loop over a gap sample. `judge` sees the candidate token
// with its bar restored to an absolute index.
template <typename Judge>
TokenSequence decode_gap(const Model<float>& model, MaskedSample s, std::int32_t start_bar,
                         const SamplerConfig& cfg, Rng& rng, GenerationStats& stats, Judge judge) {
  cfg.validate();
  const auto& v = model.config().vocab;
  const std::int32_t fold = v.bar_modulo ? v.base[static_cast<std::size_t>(Attribute::Bar)] : 0;
  ForwardOptions fo;
  fo.parallel = cfg.parallel;
  TokenSequence out;
  std::int32_t last_bar = start_bar;
  while (true) {
    if (stats.new_tokens >= cfg.max_new_tokens || s.input_length() >= model.config().max_input()) {
      stats.forced_stop = true;
      log().info("generation stopped at the token budget ({} new tokens)", stats.new_tokens);
      break;
    }
    const auto f = model.forward(s, fo);
    const std::span<const float> row(f.logits.data() + (f.rows() - 1) * f.vocab, f.vocab);
    std::optional<CompoundToken> accepted;
    bool stop = false;
    for (int attempt = 0; attempt <= cfg.max_resample; ++attempt) {
      auto tok = sample_next(row, v, cfg, rng);
      if (tok.is_note() && fold) {
        // Restore the absolute bar: the first bar at or after the previous
        // note's bar with the sampled residue.
        const auto r = tok.bar();
        tok[Attribute::Bar] = last_bar + ((r - last_bar) % fold + fold) % fold;
      }
      const auto verdict = judge(tok);
      if (verdict == Verdict::Stop) {
        stop = true;
        break;
      }
      if (verdict == Verdict::Accept) {
        accepted = tok;
        break;
      }
      ++stats.rejections;
    }
    if (stop) break;
    if (!accepted) {
      stats.forced_stop = true;
      log().info("generation: {} rejected draws in a row; forcing a stop", cfg.max_resample + 1);
      break;
    }
    const auto& tok = *accepted;
    ++stats.new_tokens;
    out.push_back(tok);
    if (tok.is_note()) last_bar = tok.bar();
    s.suffix_inputs.push_back(tok);
    s.bar_context.push_back(tok.bar());
    s.position_context.push_back(tok.position());
    s.suffix.push_back(CompoundToken::special(SpecialKind::SEP));
    ++s.attention.suffix_segment_lens.back();
  }
  return out;
}

std::int64_t note_end(const CompoundToken& t) { return t.onset() + t.duration(); }

}  // namespace

ContinuationResult continue_melody(const Model<float>& model, const TokenSequence& prompt,
                                   const SamplerConfig& cfg, Rng& rng,
                                   std::optional<std::int32_t> prompt_bars) {
  ContinuationResult res;
  TokenSequence head{CompoundToken::special(SpecialKind::BOS)};
  std::int64_t prev_end = 0;
  std::int32_t last_bar = -1;
  for (const auto& tok : prompt) {
    if (tok.is(SpecialKind::EOS)) break;
    if (tok.is(SpecialKind::BOS) || tok.is(SpecialKind::PAD)) continue;
    if (tok.is_note()) {
      ++res.prompt_notes;
      prev_end = std::max(prev_end, note_end(tok));
      last_bar = tok.bar();
    } else if (!tok.is(SpecialKind::SEG)) {
      throw std::invalid_argument("prompt holds a special other than SEG");
    }
    head.push_back(tok);
  }
  const std::int32_t start = prompt_bars.value_or(last_bar + 1);
  if (start <= last_bar) throw std::invalid_argument("prompt notes reach past the prompt bars");
  if (start >= cfg.bar_limit) throw std::invalid_argument("prompt already reaches the bar limit");

  TokenSequence layout = head;
  layout.push_back(CompoundToken::special(SpecialKind::EOS));
  auto s = build_gap_sample(layout, head.size(), head.size(), start);

  auto judge = [&](const CompoundToken& tok) {
    if (tok.is(SpecialKind::SEP) || tok.is(SpecialKind::EOS)) return Verdict::Stop;
    if (!tok.is_note()) return Verdict::Accept;
    if (tok.bar() >= cfg.bar_limit) return Verdict::Stop;
    if (tok.bar() < start || tok.onset() < prev_end) return Verdict::Reject;
    prev_end = note_end(tok);
    return Verdict::Accept;
  };
  const auto gen = decode_gap(model, std::move(s), start, cfg, rng, res.stats, judge);
  res.tokens = head;
  res.tokens.insert(res.tokens.end(), gen.begin(), gen.end());
  res.tokens.push_back(CompoundToken::special(SpecialKind::EOS));
  return res;
}

std::int32_t bar_count(const Melody& m) {
  return m.notes.empty() ? 0 : static_cast<std::int32_t>(m.notes.back().bar() + 1);
}

InpaintSplit split_for_inpainting(const Melody& m, std::int32_t start_bar) {
  if (start_bar < 0 || bar_count(m) < start_bar + kInpaintWindowBars) {
    throw std::invalid_argument("inpainting needs 16 bars from bar " + std::to_string(start_bar));
  }
  InpaintSplit out;
  for (auto* part : {&out.pre, &out.middle, &out.post}) part->tempo_us = m.tempo_us;
  for (const auto& n : m.notes) {
    const auto rel = n.bar() - start_bar;
    if (rel < 0 || rel >= kInpaintWindowBars) continue;
    Melody* dst = rel < kContextBars ? &out.pre : rel < kContextBars + kFillBars ? &out.middle : &out.post;
    const std::int64_t base = start_bar + (rel < kContextBars ? 0 : rel < kContextBars + kFillBars ? kContextBars : kContextBars + kFillBars);
    dst->notes.push_back({n.pitch, n.onset - base * kTicksPerBar, n.duration});
  }
  return out;
}

InpaintResult inpaint(const Model<float>& model, const Melody& pre, const Melody& post,
                      const SamplerConfig& cfg, Rng& rng) {
  for (const auto* part : {&pre, &post}) {
    for (const auto& n : part->notes) {
      if (n.bar() < 0 || n.bar() >= kContextBars) {
        throw std::invalid_argument("inpainting context notes must lie in bars 0..5");
      }
    }
  }
  Melody joined;
  joined.tempo_us = pre.notes.empty() ? post.tempo_us : pre.tempo_us;
  joined.notes = pre.notes;
  constexpr std::int64_t kShift = (kContextBars + kFillBars) * kTicksPerBar;
  for (const auto& n : post.notes) joined.notes.push_back({n.pitch, n.onset + kShift, n.duration});
  const auto t = encode(joined);
  const auto [a, b] = bar_range(t, kContextBars, kContextBars + kFillBars);
  auto s = build_gap_sample(t, a, b, kContextBars);

  std::int64_t prev_end = 0;
  for (const auto& n : pre.notes) prev_end = std::max(prev_end, n.end());
  const std::int64_t limit = post.notes.empty() ? kShift : post.notes.front().onset + kShift;

  InpaintResult res;
  auto judge = [&](const CompoundToken& tok) {
    if (tok.is(SpecialKind::SEP) || tok.is(SpecialKind::EOS)) return Verdict::Stop;
    if (!tok.is_note()) return Verdict::Accept;
    if (tok.bar() < kContextBars || tok.bar() >= kContextBars + kFillBars) return Verdict::Reject;
    if (tok.onset() < prev_end || note_end(tok) > limit) return Verdict::Reject;
    prev_end = note_end(tok);
    return Verdict::Accept;
  };
  res.fill = decode_gap(model, std::move(s), kContextBars, cfg, rng, res.stats, judge);
  // A fill is a run of notes; SEG-only output counts as empty.
  res.empty_fill = std::none_of(res.fill.begin(), res.fill.end(), [](const auto& x) { return x.is_note(); });
  res.tokens.assign(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(a));
  res.tokens.insert(res.tokens.end(), res.fill.begin(), res.fill.end());
  res.tokens.insert(res.tokens.end(), t.begin() + static_cast<std::ptrdiff_t>(b), t.end());
  if (res.empty_fill) log().info("inpainting produced an empty fill");
  return res;
}

namespace {

Melody augmented(const Melody& src, int max_transpose, Rng& rng) {
  int lo = -max_transpose, hi = max_transpose;
  for (const auto& n : src.notes) {
    lo = std::max(lo, -n.pitch);
    hi = std::min(hi, 127 - n.pitch);
  }
  return transpose(src, lo <= hi ? static_cast<int>(rng.uniform_int(lo, hi)) : 0);
}

}  // namespace

MaskedSample make_finetune_sample(std::span<const Melody> corpus, const FinetuneConfig& cfg,
                                  Rng& rng) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  if (cfg.task == FinetuneTask::Continuation) {
    const auto& src = corpus[rng.index(corpus.size())];
    const auto t = random_segment(augmented(src, cfg.max_transpose, rng), cfg.segment_tokens, rng);
    const auto idx = note_indices(t);
    if (idx.empty()) return build_gap_sample(t, 1, 1, 0);
    const double frac = cfg.min_suffix + (cfg.max_suffix - cfg.min_suffix) * rng.uniform01();
    const auto keep = static_cast<std::size_t>(std::floor((1.0 - frac) * static_cast<double>(idx.size())));
    const auto cut_bar = t[idx[std::min(keep, idx.size() - 1)]].bar();
    const auto [a, b] = bar_range(t, cut_bar, kNumBars);
    return build_gap_sample(t, a, b, cut_bar);
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (bar_count(corpus[i]) >= kInpaintWindowBars) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw std::invalid_argument("inpainting needs pieces of at least 16 bars; none in corpus");
  }
  const auto& src = corpus[eligible[rng.index(eligible.size())]];
  const auto start = static_cast<std::int32_t>(rng.uniform_int(0, bar_count(src) - kInpaintWindowBars));
  const auto parts = split_for_inpainting(augmented(src, cfg.max_transpose, rng), start);
  Melody joined;
  joined.tempo_us = parts.pre.tempo_us;
  joined.notes = parts.pre.notes;
  for (std::int32_t k = 1; k <= 2; ++k) {
    const auto& part = k == 1 ? parts.middle : parts.post;
    const std::int64_t shift = (k == 1 ? kContextBars : kContextBars + kFillBars) * kTicksPerBar;
    for (const auto& n : part.notes) joined.notes.push_back({n.pitch, n.onset + shift, n.duration});
  }
  const auto t = encode(joined);
  const auto [a, b] = bar_range(t, kContextBars, kContextBars + kFillBars);
  return build_gap_sample(t, a, b, kContextBars);
}

std::vector<MaskedSample> make_finetune_batch(std::span<const Melody> corpus,
                                              const FinetuneConfig& cfg, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t batch_id) {
  std::vector<MaskedSample> out(batch_size);
  // Validate once up front so worker threads never throw.
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  {
    Rng probe(0);
    (void)make_finetune_sample(corpus, cfg, probe);
  }
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < batch_size; ++i) {
    Rng rng(derive_seed(seed, batch_id, i));
    out[i] = make_finetune_sample(corpus, cfg, rng);
  }
  return out;
}

}  // namespace melofill
