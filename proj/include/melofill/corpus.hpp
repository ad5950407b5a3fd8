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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "melofill/melody.hpp"
#include "melofill/midi.hpp"

namespace melofill {

/// Picks the melody track and flattens it to a monophonic line.
///
/// Candidates are non-percussion tracks whose notes are at least 90%
/// monophonic (a note counts when it overlaps no other note of the track);
/// the one with the highest mean pitch wins. Returns nullopt when the song
/// is not entirely in 4/4 or no track qualifies. Flattening keeps the higher
/// pitch among notes sharing an onset and truncates an earlier note at the
/// next onset. The first tempo event gives the piece tempo.
std::optional<Melody> extract_melody_track(const RawSong& song);

/// Snaps onsets to the nearer of the 30/40-tick grids and durations to the
/// duration symbol set, then restores monophony. Idempotent.
Melody quantize(const Melody& m);

enum class FilterRule : std::uint8_t { R1, R2, R3, R4 };
inline constexpr std::array kAllRules = {FilterRule::R1, FilterRule::R2, FilterRule::R3,
                                         FilterRule::R4};
const char* rule_name(FilterRule r);

struct FilterVerdict {
  bool accepted = true;
  std::vector<FilterRule> failed_rules;
};

/// R1: >= 32 notes. R2: >= 8 non-empty bars and non-empty bars > 70% of the
/// bars spanned by the melody. R3: no run of more than 10 identical
/// consecutive pitches. R4: more than 5 distinct pitch classes.
FilterVerdict filter_melody(const Melody& m);

/// Transposition-invariant key: stable hash of the consecutive pitch deltas.
std::uint64_t dedup_key(const Melody& m);

struct CorpusStats {
  std::size_t inputs = 0;
  std::size_t pieces = 0;
  std::size_t duplicates = 0;
  std::size_t unreadable = 0;
  std::size_t no_melody = 0;
  std::array<std::size_t, 4> rejected_by_rule{};  // indexed by FilterRule
  std::size_t rejected = 0;                       // pieces failing >= 1 rule
};

/// Runs parse -> extract -> quantize -> filter -> dedup over every .mid/.midi
/// file below `input_dir` (sorted by relative path). Writes accepted pieces to
/// `output_dir/pieces/<key>.notes` and `output_dir/manifest.tsv`. Files are
/// processed in parallel; the output is byte-identical between runs.
CorpusStats build_corpus(const std::filesystem::path& input_dir,
                         const std::filesystem::path& output_dir);

/// Loads every `.notes` file of a corpus directory (or of its `pieces/`
/// subdirectory when present), sorted by filename.
std::vector<Melody> load_corpus(const std::filesystem::path& dir);
std::vector<std::filesystem::path> corpus_files(const std::filesystem::path& dir);

/// Stable hash over the sorted file names and contents of a corpus.
std::uint64_t corpus_hash(const std::filesystem::path& dir);

}  // namespace melofill
