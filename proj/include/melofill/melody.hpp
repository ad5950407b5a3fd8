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

#include <cstdint>
#include <string>
#include <vector>

namespace melofill {

inline constexpr std::int64_t kTicksPerQuarter = 480;
inline constexpr std::int64_t kTicksPerBar = 4 * kTicksPerQuarter;  // 4/4 only
inline constexpr std::int32_t kDefaultTempoUs = 500000;            // 120 bpm

struct NoteEvent {
  std::int32_t pitch = 0;     // MIDI pitch, 0..127
  std::int64_t onset = 0;     // ticks from piece start
  std::int64_t duration = 0;  // ticks, > 0

  std::int64_t end() const { return onset + duration; }
  std::int64_t bar() const { return onset / kTicksPerBar; }
  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

/// Monophonic melody in 4/4 at 480 ticks per quarter note.
struct Melody {
  std::int32_t tempo_us = kDefaultTempoUs;  // microseconds per quarter note
  std::vector<NoteEvent> notes;             // sorted by onset, non-overlapping

  double bpm() const { return 60'000'000.0 / static_cast<double>(tempo_us); }
  std::int64_t bar_count() const {
    return notes.empty() ? 0 : notes.back().bar() + 1;
  }
  friend bool operator==(const Melody&, const Melody&) = default;
};

/// Shifts every pitch by `semitones`; caller keeps results inside 0..127.
Melody transpose(const Melody& m, int semitones);

/// True when consecutive notes never overlap in time.
bool is_monophonic(const Melody& m);

/// Line-oriented note format: a `tempo_us <n>` header line followed by one
/// `onset,duration,pitch` line per note.
std::string write_notes(const Melody& m);
Melody parse_notes(const std::string& text);
Melody read_notes_file(const std::string& path);
void write_notes_file(const std::string& path, const Melody& m);

}  // namespace melofill
