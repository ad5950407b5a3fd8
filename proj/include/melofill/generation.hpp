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
#include <vector>

#include "melofill/infilling.hpp"
#include "melofill/model.hpp"
#include "melofill/rng.hpp"

namespace melofill {

struct SamplerConfig {
  double temperature = 0.9;
  int top_k = 10;
  std::size_t max_new_tokens = 1024;
  int bar_limit = 32;    // continuation stops at the first note in this bar
  int max_resample = 8;  // rejected draws before a forced stop
  bool parallel = true;

  void validate() const;
};

/// Temperature-scaled, top-k truncated distribution over `candidates`
/// (ids into `logits`). Ties at the cut are broken by the lower id.
/// Returns (id, probability) pairs in descending logit order.
std::vector<std::pair<int, double>> truncated_distribution(std::span<const float> logits,
                                                           std::span<const int> candidates,
                                                           const SamplerConfig& cfg);

/// One draw from a truncated distribution.
int sample_id(std::span<const float> logits, std::span<const int> candidates,
              const SamplerConfig& cfg, Rng& rng);

/// Samples a token from one row of concatenated logits (attribute order,
/// Vocabulary layout). The pitch head decides the kind: a special id there
/// makes the whole token that special (only SEG, SEP and EOS are eligible).
/// For a note, every other head samples among its value ids; specials and
/// padding ids are excluded. The bar field holds the folded bar.
CompoundToken sample_next(std::span<const float> row, const Vocabulary& v, const SamplerConfig& cfg,
                          Rng& rng);

struct GenerationStats {
  std::size_t new_tokens = 0;
  std::size_t rejections = 0;
  bool forced_stop = false;  // resample budget, token budget or model length ran out
};

/// Fine-tuning / inference layout: `t[0, a) MASK t[b, end)` as prefix and
/// `t[a, b)` as the single span, with the MASK embedded at `(mask_bar, 0)`.
/// `a == b` gives an empty span whose only target is SEP.
MaskedSample build_gap_sample(const TokenSequence& t, std::size_t a, std::size_t b,
                              std::int32_t mask_bar);

/// Token range covering the notes with bar in [first_bar, end_bar), as the
/// insertion point before the first later token when no note qualifies.
std::pair<std::size_t, std::size_t> bar_range(const TokenSequence& t, std::int32_t first_bar,
                                              std::int32_t end_bar);

struct ContinuationResult {
  TokenSequence tokens;  // prompt + generated + EOS
  std::size_t prompt_notes = 0;
  GenerationStats stats;
};

/// Extends `prompt` (an encoded piece, possibly just BOS/EOS or empty) from
/// bar `prompt_bars` on (default: the bar after the last prompt note).
/// Stops on SEP or EOS, on a note at `bar_limit` or later, or when a budget
/// runs out. Notes that start before the previous note ends are resampled.
ContinuationResult continue_melody(const Model<float>& model, const TokenSequence& prompt,
                                   const SamplerConfig& cfg, Rng& rng,
                                   std::optional<std::int32_t> prompt_bars = std::nullopt);

inline constexpr std::int32_t kContextBars = 6;
inline constexpr std::int32_t kFillBars = 4;
inline constexpr std::int32_t kInpaintWindowBars = 2 * kContextBars + kFillBars;

struct InpaintResult {
  TokenSequence tokens;  // pre context + fill + post context, with BOS/EOS
  TokenSequence fill;    // generated tokens only
  bool empty_fill = false;
  GenerationStats stats;
};

/// Fills bars 6..9 between `pre` (notes in bars 0..5) and `post` (notes in
/// bars 0..5, placed at bars 10..15). Filled notes must lie in bars 6..9 and
/// keep the result monophonic; other draws are resampled.
InpaintResult inpaint(const Model<float>& model, const Melody& pre, const Melody& post,
                      const SamplerConfig& cfg, Rng& rng);

/// Bars [start, start+6), [start+6, start+10) and [start+10, start+16) of
/// `m`, each re-based to bar 0. Throws if the piece is shorter than 16 bars
/// from `start`.
struct InpaintSplit {
  Melody pre, middle, post;
};
InpaintSplit split_for_inpainting(const Melody& m, std::int32_t start_bar);

/// Number of bars spanned by the notes (last note's bar + 1).
std::int32_t bar_count(const Melody& m);

enum class FinetuneTask { Continuation, Inpainting };

struct FinetuneConfig {
  FinetuneTask task = FinetuneTask::Continuation;
  double min_suffix = 0.25;  // continuation: fraction of notes in the future
  double max_suffix = 0.95;
  std::size_t segment_tokens = 256;
  int max_transpose = 6;
};

/// One fine-tuning sample drawn from `corpus` with `rng`: continuation cuts a
/// random segment at the bar holding the note that leaves a uniform fraction
/// in [min_suffix, max_suffix] in the future; inpainting takes a random
/// 16-bar window and masks its middle 4 bars. Throws std::invalid_argument
/// for inpainting when no piece has 16 bars.
MaskedSample make_finetune_sample(std::span<const Melody> corpus, const FinetuneConfig& cfg,
                                  Rng& rng);

std::vector<MaskedSample> make_finetune_batch(std::span<const Melody> corpus,
                                              const FinetuneConfig& cfg, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t batch_id);

}  // namespace melofill
