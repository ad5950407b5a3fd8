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
#include "melofill/ngram.hpp"
#include "melofill/representation.hpp"
#include "melofill/rng.hpp"

namespace melofill {

/// Half-open range of token indices.
struct Span {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t end() const { return start + length; }
  friend bool operator==(const Span&, const Span&) = default;
};

enum class Objective : std::uint8_t {
  PitchNgram,
  RhythmNgram,
  CombinedNgram,
  LongSpan,
  RandomSpan,
  BarSpan,
  Slm,
};
inline constexpr std::array kAllObjectives = {
    Objective::PitchNgram, Objective::RhythmNgram, Objective::CombinedNgram, Objective::LongSpan,
    Objective::RandomSpan, Objective::BarSpan,     Objective::Slm};
/// The four objectives mixed by multi-task training.
inline constexpr std::array kMultiTaskObjectives = {Objective::PitchNgram, Objective::RhythmNgram,
                                                    Objective::CombinedNgram,
                                                    Objective::LongSpan};
const char* objective_name(Objective o);
std::optional<Objective> parse_objective(const std::string& s);

struct InfillConfig {
  double ngram_ratio = 0.15;
  double long_ratio = 0.5;
  double random_ratio = 0.5;
  double bar_ratio = 0.5;
  double geometric_p = 0.2;
  int span_min = 1;
  int span_max = 10;
  int fallback_length = 3;
  std::size_t segment_tokens = 256;
  int max_transpose = 6;
  /// Multi-task objective assignment: per-sample uniform draw, or one
  /// objective per batch cycling in order.
  bool round_robin = false;
};

/// Rows of the prefix attend to the whole prefix; suffix rows attend to the
/// whole prefix and causally to the suffix up to themselves.
struct AttentionSpec {
  std::size_t prefix_len = 0;
  std::vector<std::size_t> suffix_segment_lens;

  std::size_t suffix_len() const;
  std::size_t total() const { return prefix_len + suffix_len(); }
  bool allowed(std::size_t row, std::size_t col) const {
    return col < prefix_len || (col <= row);
  }
};

/// Dense row-major boolean matrix; true = may attend.
struct MaskMatrix {
  std::size_t n = 0;
  std::vector<std::uint8_t> cells;
  bool operator()(std::size_t i, std::size_t j) const { return cells[i * n + j] != 0; }
};

MaskMatrix attention_mask(const AttentionSpec& spec);

/// Blank-infilling training instance.
///
/// The model input is `prefix` followed by `suffix_inputs`; `suffix` holds
/// the prediction target for every suffix input position. For each span the
/// suffix segment is `[MASK, s_1 .. s_l]` as input and `[s_1 .. s_l, SEP]` as
/// targets. A causal-LM sample has an empty prefix and predicts token i+1 from
/// tokens 0..i.
struct MaskedSample {
  Objective objective = Objective::LongSpan;
  TokenSequence prefix;
  TokenSequence suffix_inputs;
  TokenSequence suffix;
  std::vector<Span> spans;                 // in the original sequence
  std::vector<std::size_t> mask_positions; // MASK index in prefix, per span
  AttentionSpec attention;
  /// Bar and in-bar position fed to the timing embeddings, one per model input
  /// position. MASK inputs reuse the first masked note's timing.
  std::vector<CompoundToken::Field> bar_context;
  std::vector<CompoundToken::Field> position_context;
  std::size_t fallback_spans = 0;  // n-gram shortfall filled by random spans
  int transposition = 0;

  std::size_t input_length() const { return prefix.size() + suffix_inputs.size(); }
  const CompoundToken& input(std::size_t i) const {
    return i < prefix.size() ? prefix[i] : suffix_inputs[i - prefix.size()];
  }
};

/// Token spans covering the given note ranges, including any specials
/// between the first and last covered note.
std::vector<Span> note_spans_to_token_spans(const TokenSequence& t, std::span<const NoteSpan> s);

/// Masked note count over note count for token spans in `t`.
double masked_note_fraction(const TokenSequence& t, std::span<const Span> spans);

/// Lexicon matches shuffled and accepted until ratio*n notes are masked,
/// never exceeding ratio*n + n_max - 1; any shortfall is filled with random
/// spans of `fallback_length` notes (shorter where space runs out).
std::vector<Span> sample_ngram_spans(const TokenSequence& t, const Lexicon& lex, Dimension d,
                                     double ratio, Rng& rng, int fallback_length = 3,
                                     std::size_t* fallback_spans = nullptr);

/// One span of round(ratio*n) notes (at least 1) at a uniform start.
Span sample_long_span(const TokenSequence& t, double ratio, Rng& rng);

/// Geometric(p) span lengths clipped to [min_len, max_len] at uniform free
/// starts until ceil(ratio*n) notes are masked; the last span is shortened to
/// land on the target.
std::vector<Span> sample_random_spans(const TokenSequence& t, double ratio, Rng& rng,
                                      double p = 0.2, int min_len = 1, int max_len = 10);

/// Whole non-empty bars drawn without replacement until ratio*n notes are
/// masked; one span per bar.
std::vector<Span> sample_bar_spans(const TokenSequence& t, double ratio, Rng& rng);

/// Throws std::invalid_argument if spans overlap, are unsorted, or do not
/// start and end on note tokens.
MaskedSample build_masked_sample(const TokenSequence& t, std::span<const Span> spans,
                                 Objective objective = Objective::LongSpan);

MaskedSample build_causal_sample(const TokenSequence& t);

/// Original sequence recovered from prefix and suffix alone.
TokenSequence reconstruct(const MaskedSample& s);

/// Spans for `objective` (empty for Slm).
std::vector<Span> sample_objective_spans(Objective objective, const TokenSequence& t,
                                         const Lexicon* lex, const InfillConfig& cfg, Rng& rng,
                                         std::size_t* fallback_spans = nullptr);

MaskedSample make_sample(Objective objective, const TokenSequence& t, const Lexicon* lex,
                         const InfillConfig& cfg, Rng& rng);

/// Random window of at most `max_tokens` tokens starting at a bar boundary,
/// re-based to bar 0.
TokenSequence random_segment(const Melody& m, std::size_t max_tokens, Rng& rng);

struct BatchRequest {
  std::optional<Objective> objective;  // nullopt: multi-task
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::uint64_t batch_id = 0;
};

/// Each sample draws a melody, a transposition in [-max_transpose,
/// max_transpose], a segment, an objective and its spans from its own stream
/// seeded by (seed, batch_id, sample index); output is independent of the
/// thread count.
std::vector<MaskedSample> make_training_batch(std::span<const Melody> corpus,
                                              const BatchRequest& req, const Lexicon* lex,
                                              const InfillConfig& cfg);

/// Debug dump: prefix/suffix token lines and the span map.
std::string dump_sample(const MaskedSample& s);

}  // namespace melofill
