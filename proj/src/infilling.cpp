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
#include "melofill/infilling.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "melofill/log.hpp"

namespace melofill {

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::PitchNgram: return "pitch_ngram";
    case Objective::RhythmNgram: return "rhythm_ngram";
    case Objective::CombinedNgram: return "combined_ngram";
    case Objective::LongSpan: return "long_span";
    case Objective::RandomSpan: return "random_span";
    case Objective::BarSpan: return "bar_span";
    case Objective::Slm: return "slm";
  }
  return "?";
}

std::optional<Objective> parse_objective(const std::string& s) {
  for (auto o : kAllObjectives) {
    if (s == objective_name(o)) return o;
  }
  return std::nullopt;
}

std::size_t AttentionSpec::suffix_len() const {
  return std::accumulate(suffix_segment_lens.begin(), suffix_segment_lens.end(), std::size_t{0});
}

MaskMatrix attention_mask(const AttentionSpec& spec) {
  MaskMatrix m;
  m.n = spec.total();
  m.cells.assign(m.n * m.n, 0);
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < m.n; ++j) m.cells[i * m.n + j] = spec.allowed(i, j) ? 1 : 0;
  }
  return m;
}

namespace {

std::size_t ceil_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
}

// Free starts for a span of `len` notes given occupied flags.
std::vector<std::size_t> free_starts(const std::vector<std::uint8_t>& used, std::size_t len) {
  std::vector<std::size_t> out;
  if (len == 0 || len > used.size()) return out;
  std::size_t run = 0;
  for (std::size_t i = 0; i < used.size(); ++i) {
    run = used[i] ? 0 : run + 1;
    if (run >= len) out.push_back(i + 1 - len);
  }
  return out;
}

void occupy(std::vector<std::uint8_t>& used, const NoteSpan& s) {
  std::fill(used.begin() + static_cast<std::ptrdiff_t>(s.begin),
            used.begin() + static_cast<std::ptrdiff_t>(s.end()), 1);
}

// Adds spans of at most `max_len` notes at uniform free starts until `target`
// notes are masked, shrinking the length when no slot fits.
void fill_random(std::vector<std::uint8_t>& used, std::vector<NoteSpan>& spans,
                 std::size_t& masked, std::size_t target, Rng& rng,
                 const std::function<std::size_t()>& draw_len) {
  while (masked < target) {
    std::size_t len = std::min(draw_len(), target - masked);
    std::vector<std::size_t> starts;
    for (; len > 0; --len) {
      starts = free_starts(used, len);
      if (!starts.empty()) break;
    }
    if (len == 0) break;
    const NoteSpan s{starts[rng.index(starts.size())], len};
    occupy(used, s);
    spans.push_back(s);
    masked += len;
  }
  std::sort(spans.begin(), spans.end(),
            [](const NoteSpan& a, const NoteSpan& b) { return a.begin < b.begin; });
}

}  // namespace

std::vector<Span> note_spans_to_token_spans(const TokenSequence& t, std::span<const NoteSpan> s) {
  const auto idx = note_indices(t);
  std::vector<Span> out;
  out.reserve(s.size());
  for (const auto& ns : s) {
    if (ns.length == 0 || ns.end() > idx.size()) throw std::out_of_range("note span outside sequence");
    const auto first = idx[ns.begin], last = idx[ns.end() - 1];
    out.push_back({first, last - first + 1});
  }
  return out;
}

double masked_note_fraction(const TokenSequence& t, std::span<const Span> spans) {
  std::size_t notes = 0, masked = 0;
  for (const auto& tok : t) notes += tok.is_note();
  for (const auto& s : spans) {
    for (std::size_t i = s.start; i < s.end(); ++i) masked += t[i].is_note();
  }
  return notes ? static_cast<double>(masked) / static_cast<double>(notes) : 0.0;
}

std::vector<Span> sample_ngram_spans(const TokenSequence& t, const Lexicon& lex, Dimension d,
                                     double ratio, Rng& rng, int fallback_length,
                                     std::size_t* fallback_spans) {
  const auto n = note_indices(t).size();
  if (n == 0) return {};
  const auto target = ceil_count(ratio, n);
  const auto cap = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(n) + lex.meta().n_max - 1 + 1e-9));

  auto cands = max_match(t, lex, d);
  rng.shuffle(cands);
  std::vector<std::uint8_t> used(n, 0);
  std::vector<NoteSpan> spans;
  std::size_t masked = 0;
  for (const auto& c : cands) {
    if (masked >= target) break;
    if (masked + c.length > cap) continue;
    occupy(used, c);
    spans.push_back(c);
    masked += c.length;
  }
  const auto from_lexicon = spans.size();
  fill_random(used, spans, masked, target, rng,
              [&] { return static_cast<std::size_t>(std::max(1, fallback_length)); });
  const auto fallback = spans.size() - from_lexicon;
  if (fallback) {
    log().debug("{} n-gram sampling: {} fallback span(s)", dimension_name(d), fallback);
  }
  if (fallback_spans) *fallback_spans = fallback;
  return note_spans_to_token_spans(t, spans);
}

Span sample_long_span(const TokenSequence& t, double ratio, Rng& rng) {
  const auto n = note_indices(t).size();
  if (n == 0) throw std::invalid_argument("long span needs at least one note");
  auto len = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  len = std::clamp<std::size_t>(len, 1, n);
  const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - len)));
  const NoteSpan ns{start, len};
  return note_spans_to_token_spans(t, std::span(&ns, 1)).front();
}

std::vector<Span> sample_random_spans(const TokenSequence& t, double ratio, Rng& rng, double p,
                                      int min_len, int max_len) {
  const auto n = note_indices(t).size();
  if (n == 0) return {};
  std::vector<std::uint8_t> used(n, 0);
  std::vector<NoteSpan> spans;
  std::size_t masked = 0;
  fill_random(used, spans, masked, ceil_count(ratio, n), rng, [&] {
    return static_cast<std::size_t>(std::clamp<std::int64_t>(rng.geometric(p), min_len, max_len));
  });
  return note_spans_to_token_spans(t, spans);
}

std::vector<Span> sample_bar_spans(const TokenSequence& t, double ratio, Rng& rng) {
  const auto idx = note_indices(t);
  const auto n = idx.size();
  std::vector<NoteSpan> bars;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && t[idx[j]].bar() == t[idx[i]].bar()) ++j;
    bars.push_back({i, j - i});
    i = j;
  }
  rng.shuffle(bars);
  std::vector<NoteSpan> chosen;
  std::size_t masked = 0;
  const double target = ratio * static_cast<double>(n) - 1e-9;
  for (const auto& b : bars) {
    if (static_cast<double>(masked) >= target) break;
    chosen.push_back(b);
    masked += b.length;
  }
  std::sort(chosen.begin(), chosen.end(),
            [](const NoteSpan& a, const NoteSpan& b) { return a.begin < b.begin; });
  return note_spans_to_token_spans(t, chosen);
}

MaskedSample build_masked_sample(const TokenSequence& t, std::span<const Span> spans,
                                 Objective objective) {
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.length == 0) throw std::invalid_argument("empty span");
    if (s.end() > t.size()) throw std::invalid_argument("span past end of sequence");
    if (!t[s.start].is_note() || !t[s.end() - 1].is_note()) {
      throw std::invalid_argument("span must start and end on note tokens");
    }
    if (i > 0 && s.start < spans[i - 1].end()) {
      throw std::invalid_argument("spans overlap or are unsorted");
    }
  }

  MaskedSample out;
  out.objective = objective;
  out.spans.assign(spans.begin(), spans.end());
  const auto mask = CompoundToken::special(SpecialKind::MASK);
  const auto sep = CompoundToken::special(SpecialKind::SEP);

  auto timing = [&](const CompoundToken& tok) {
    out.bar_context.push_back(tok.bar());
    out.position_context.push_back(tok.position());
  };

  std::size_t pos = 0;
  for (const auto& s : spans) {
    for (; pos < s.start; ++pos) {
      out.prefix.push_back(t[pos]);
      timing(t[pos]);
    }
    out.mask_positions.push_back(out.prefix.size());
    out.prefix.push_back(mask);
    timing(t[s.start]);
    pos = s.end();
  }
  for (; pos < t.size(); ++pos) {
    out.prefix.push_back(t[pos]);
    timing(t[pos]);
  }

  out.attention.prefix_len = out.prefix.size();
  for (const auto& s : spans) {
    out.suffix_inputs.push_back(mask);
    timing(t[s.start]);
    for (std::size_t i = s.start; i < s.end(); ++i) {
      out.suffix_inputs.push_back(t[i]);
      timing(t[i]);
      out.suffix.push_back(t[i]);
    }
    out.suffix.push_back(sep);
    out.attention.suffix_segment_lens.push_back(s.length + 1);
  }
  return out;
}

MaskedSample build_causal_sample(const TokenSequence& t) {
  MaskedSample out;
  out.objective = Objective::Slm;
  if (t.size() < 2) throw std::invalid_argument("causal sample needs at least two tokens");
  out.spans.push_back({0, t.size()});
  out.suffix_inputs.assign(t.begin(), t.end() - 1);
  out.suffix.assign(t.begin() + 1, t.end());
  for (const auto& tok : out.suffix_inputs) {
    out.bar_context.push_back(tok.bar());
    out.position_context.push_back(tok.position());
  }
  out.attention.suffix_segment_lens.push_back(out.suffix_inputs.size());
  return out;
}

TokenSequence reconstruct(const MaskedSample& s) {
  if (s.prefix.empty()) {
    TokenSequence out;
    if (!s.suffix_inputs.empty()) out.push_back(s.suffix_inputs.front());
    out.insert(out.end(), s.suffix.begin(), s.suffix.end());
    return out;
  }
  // Split the suffix targets back into per-span segments (SEP-terminated).
  std::vector<TokenSequence> segments;
  std::size_t at = 0;
  for (auto len : s.attention.suffix_segment_lens) {
    segments.emplace_back(s.suffix.begin() + static_cast<std::ptrdiff_t>(at),
                          s.suffix.begin() + static_cast<std::ptrdiff_t>(at + len - 1));
    at += len;
  }
  TokenSequence out;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < s.prefix.size(); ++i) {
    if (seg < s.mask_positions.size() && s.mask_positions[seg] == i) {
      out.insert(out.end(), segments[seg].begin(), segments[seg].end());
      ++seg;
    } else {
      out.push_back(s.prefix[i]);
    }
  }
  return out;
}

std::vector<Span> sample_objective_spans(Objective objective, const TokenSequence& t,
                                         const Lexicon* lex, const InfillConfig& cfg, Rng& rng,
                                         std::size_t* fallback_spans) {
  static const Lexicon kEmpty;
  const Lexicon& l = lex ? *lex : kEmpty;
  switch (objective) {
    case Objective::PitchNgram:
      return sample_ngram_spans(t, l, Dimension::Pitch, cfg.ngram_ratio, rng, cfg.fallback_length,
                                fallback_spans);
    case Objective::RhythmNgram:
      return sample_ngram_spans(t, l, Dimension::Rhythm, cfg.ngram_ratio, rng,
                                cfg.fallback_length, fallback_spans);
    case Objective::CombinedNgram:
      return sample_ngram_spans(t, l, Dimension::Combined, cfg.ngram_ratio, rng,
                                cfg.fallback_length, fallback_spans);
    case Objective::LongSpan:
      return {sample_long_span(t, cfg.long_ratio, rng)};
    case Objective::RandomSpan:
      return sample_random_spans(t, cfg.random_ratio, rng, cfg.geometric_p, cfg.span_min,
                                 cfg.span_max);
    case Objective::BarSpan:
      return sample_bar_spans(t, cfg.bar_ratio, rng);
    case Objective::Slm:
      return {};
  }
  return {};
}

MaskedSample make_sample(Objective objective, const TokenSequence& t, const Lexicon* lex,
                         const InfillConfig& cfg, Rng& rng) {
  if (objective == Objective::Slm) return build_causal_sample(t);
  std::size_t fallback = 0;
  const auto spans = sample_objective_spans(objective, t, lex, cfg, rng, &fallback);
  auto s = build_masked_sample(t, spans, objective);
  s.fallback_spans = fallback;
  return s;
}

TokenSequence random_segment(const Melody& m, std::size_t max_tokens, Rng& rng) {
  if (m.notes.empty()) return encode(m);
  std::vector<std::int64_t> bars;
  for (const auto& n : m.notes) {
    if (bars.empty() || bars.back() != n.bar()) bars.push_back(n.bar());
  }
  Melody window;
  window.tempo_us = m.tempo_us;
  auto take_from = [&](std::int64_t bar) {
    window.notes.clear();
    for (const auto& n : m.notes) {
      if (n.bar() < bar) continue;
      if (n.bar() - bar >= kNumBars) break;
      window.notes.push_back({n.pitch, n.onset - bar * kTicksPerBar, n.duration});
    }
  };
  take_from(bars.front());
  auto t = encode(window);
  if (t.size() > max_tokens) {
    take_from(bars[rng.index(bars.size())]);
    t = encode(window);
    if (t.size() > max_tokens) t.resize(max_tokens);
    // A truncated window must not end on a lone SEG.
    while (t.size() > 2 && !t.back().is_note() && !t.back().is(SpecialKind::EOS)) t.pop_back();
  }
  return t;
}

std::vector<MaskedSample> make_training_batch(std::span<const Melody> corpus,
                                              const BatchRequest& req, const Lexicon* lex,
                                              const InfillConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  std::vector<MaskedSample> batch(req.batch_size);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < req.batch_size; ++i) {
    Rng rng(derive_seed(req.seed, req.batch_id, i));
    const auto& src = corpus[rng.index(corpus.size())];
    int lo = -cfg.max_transpose, hi = cfg.max_transpose;
    for (const auto& n : src.notes) {
      lo = std::max(lo, -n.pitch);
      hi = std::min(hi, 127 - n.pitch);
    }
    const int shift = lo <= hi ? static_cast<int>(rng.uniform_int(lo, hi)) : 0;
    const auto segment = random_segment(transpose(src, shift), cfg.segment_tokens, rng);

    Objective obj;
    if (req.objective) {
      obj = *req.objective;
    } else if (cfg.round_robin) {
      obj = kMultiTaskObjectives[req.batch_id % kMultiTaskObjectives.size()];
    } else {
      obj = kMultiTaskObjectives[rng.index(kMultiTaskObjectives.size())];
    }
    // Objectives that need notes fall back to causal LM on note-less segments.
    if (note_indices(segment).empty() && obj != Objective::Slm) obj = Objective::Slm;
    batch[i] = make_sample(obj, segment, lex, cfg, rng);
    batch[i].transposition = shift;
  }
  return batch;
}

std::string dump_sample(const MaskedSample& s) {
  std::ostringstream out;
  out << "objective " << objective_name(s.objective) << "\n";
  out << "transposition " << s.transposition << "\n";
  out << "spans";
  for (std::size_t i = 0; i < s.spans.size(); ++i) {
    out << ' ' << s.spans[i].start << '+' << s.spans[i].length;
    if (i < s.mask_positions.size()) out << "@" << s.mask_positions[i];
  }
  out << "\nprefix " << s.prefix.size() << "\n" << write_tokens(s.prefix);
  out << "suffix_inputs " << s.suffix_inputs.size() << "\n" << write_tokens(s.suffix_inputs);
  out << "suffix_targets " << s.suffix.size() << "\n" << write_tokens(s.suffix);
  return out.str();
}

}  // namespace melofill
