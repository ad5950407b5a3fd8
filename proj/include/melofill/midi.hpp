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

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "melofill/melody.hpp"

namespace melofill {

/// Malformed Standard MIDI File. `offset` is the byte position where
/// decoding failed and `chunk` names the chunk being read ("MThd", "MTrk#2").
class MidiParseError : public std::runtime_error {
 public:
  MidiParseError(const std::string& chunk, std::size_t offset, const std::string& what);
  std::size_t offset() const { return offset_; }
  const std::string& chunk() const { return chunk_; }

 private:
  std::string chunk_;
  std::size_t offset_;
};

struct MidiTrack {
  int track_index = 0;  // MTrk chunk index
  int channel = 0;      // 0-based; channel 9 is percussion
  std::vector<NoteEvent> notes;  // sorted by (onset, pitch), may overlap

  bool percussion() const { return channel == 9; }
};

struct TempoChange {
  std::int64_t tick = 0;
  std::int32_t us_per_quarter = kDefaultTempoUs;
};

struct TimeSignature {
  std::int64_t tick = 0;
  int numerator = 4;
  int denominator = 4;
};

/// Parsed file with all ticks rescaled to 480 per quarter note.
struct RawSong {
  int format = 0;
  std::vector<MidiTrack> tracks;  // one per (MTrk chunk, channel) with notes
  std::vector<TempoChange> tempo_map;
  std::vector<TimeSignature> time_signatures;
  std::vector<std::string> warnings;
};

/// Parses format 0 or 1. Note-ons without a matching note-off are dropped
/// and reported in `warnings`.
RawSong parse_midi(std::span<const std::uint8_t> bytes);
RawSong read_midi_file(const std::string& path);

/// Single-track format-0 file at 480 ticks per quarter with one tempo event
/// and a 4/4 time signature.
std::vector<std::uint8_t> write_midi(const Melody& m, int velocity = 80);
void write_midi_file(const std::string& path, const Melody& m);

}  // namespace melofill
