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
#include <stdexcept>
#include <string>
#include <vector>

#include "melofill/melody.hpp"

namespace melofill {

enum class TempoClass : std::uint8_t {
  Largo,      // < 60 bpm
  Larghetto,  // [60, 66)
  Adagio,     // [66, 76)
  Andante,    // [76, 108)
  Moderato,   // [108, 120)
  Allegro,    // [120, 168)
  Presto,     // >= 168
};
inline constexpr int kNumTempoClasses = 7;
inline constexpr int kNumBars = 128;

enum class SpecialKind : std::uint8_t { BOS, EOS, MASK, PAD, SEP, SEG };
inline constexpr int kNumSpecials = 6;

enum class Attribute : std::uint8_t { Tempo, Bar, Position, Pitch, Duration };
inline constexpr int kNumAttributes = 5;

const char* tempo_name(TempoClass c);
const char* special_name(SpecialKind k);  // "<BOS>" etc.

TempoClass tempo_bucket(double bpm);

/// Tempo written back by `decode`, in microseconds per quarter.
std::int32_t tempo_class_us(TempoClass c);

/// Five-field token. A note token holds attribute values in every field; a
/// special token holds the same special symbol in every field. Other
/// combinations can be parsed but are rejected by `decode`.
struct CompoundToken {
  using Field = std::int32_t;  // >= 0: attribute value, < 0: special symbol
  std::array<Field, kNumAttributes> fields{};

  static CompoundToken note(TempoClass tempo, std::int32_t bar, std::int32_t position,
                            std::int32_t pitch, std::int32_t duration);
  static CompoundToken special(SpecialKind k);

  static constexpr Field special_field(SpecialKind k) { return -1 - static_cast<Field>(k); }
  static constexpr bool field_is_special(Field f) { return f < 0; }

  bool is_note() const;
  bool is_special() const;
  bool is(SpecialKind k) const { return is_special() && fields[0] == special_field(k); }
  std::optional<SpecialKind> special_kind() const;

  Field operator[](Attribute a) const { return fields[static_cast<std::size_t>(a)]; }
  Field& operator[](Attribute a) { return fields[static_cast<std::size_t>(a)]; }
  Field bar() const { return (*this)[Attribute::Bar]; }
  Field position() const { return (*this)[Attribute::Position]; }
  Field pitch() const { return (*this)[Attribute::Pitch]; }
  Field duration() const { return (*this)[Attribute::Duration]; }
  std::int64_t onset() const {
    return static_cast<std::int64_t>(bar()) * kTicksPerBar + position();
  }

  friend bool operator==(const CompoundToken&, const CompoundToken&) = default;
};

using TokenSequence = std::vector<CompoundToken>;

class EncodeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(std::size_t index, const std::string& what)
      : std::runtime_error("token " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Indices of phrase-ending notes: each bar's longest note above a quarter
/// plus every note followed by a rest of at least an eighth, then pruned at
/// the first and last notes and between adjacent candidates.
std::vector<std::size_t> detect_phrase_boundaries(const Melody& m);

/// BOS, one note token per note with SEG after each phrase-ending note, EOS.
/// Throws EncodeError if a note lies at bar >= 128 or off the position grid.
TokenSequence encode(const Melody& m);

/// Inverse of `encode`; SEG and PAD are skipped. A missing EOS is accepted and
/// reported through `warnings`. Tempo is restored to the class representative.
Melody decode(const TokenSequence& t, std::vector<std::string>* warnings = nullptr);

/// Indices of note tokens in `t`.
std::vector<std::size_t> note_indices(const TokenSequence& t);

/// One token per line, five comma-separated fields; specials spelled <BOS>.
std::string write_tokens(const TokenSequence& t);
TokenSequence parse_tokens(const std::string& text);
TokenSequence read_tokens_file(const std::string& path);
void write_tokens_file(const std::string& path, const TokenSequence& t);

/// Model-facing vocabulary. Each attribute owns `base` ids for its values
/// followed by the six specials. Bars are
/// folded modulo `base[Bar]` when `bar_modulo` is set.
struct Vocabulary {
  std::array<int, kNumAttributes> base = {16, 16, 128, 256, 128};
  bool bar_modulo = true;

  int size(Attribute a) const { return base[static_cast<std::size_t>(a)] + kNumSpecials; }
  int total_size() const;
  int special_id(Attribute a, SpecialKind k) const {
    return base[static_cast<std::size_t>(a)] + static_cast<int>(k);
  }
  bool id_is_special(Attribute a, int id) const {
    return id >= base[static_cast<std::size_t>(a)];
  }

  /// Throws std::out_of_range naming the attribute and value when a field has
  /// no id.
  std::array<int, kNumAttributes> ids(const CompoundToken& t) const;
  int id(Attribute a, CompoundToken::Field f) const;

  /// Field for an id: a special symbol, an attribute value, or nullopt for
  /// padding ids that carry no symbol. Bars come back folded; callers restore
  /// the absolute bar from context.
  std::optional<CompoundToken::Field> value(Attribute a, int id) const;

  static Vocabulary unfolded() { return {{16, kNumBars, 128, 256, 128}, false}; }
};

}  // namespace melofill
