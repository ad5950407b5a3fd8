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
#include "melofill/representation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "melofill/grid.hpp"
#include "melofill/log.hpp"

namespace melofill {

const char* tempo_name(TempoClass c) {
  static constexpr const char* names[] = {"Largo",    "Larghetto", "Adagio", "Andante",
                                          "Moderato", "Allegro",   "Presto"};
  return names[static_cast<int>(c)];
}

const char* special_name(SpecialKind k) {
  static constexpr const char* names[] = {"<BOS>", "<EOS>", "<MASK>", "<PAD>", "<SEP>", "<SEG>"};
  return names[static_cast<int>(k)];
}

TempoClass tempo_bucket(double bpm) {
  if (bpm < 60) return TempoClass::Largo;
  if (bpm < 66) return TempoClass::Larghetto;
  if (bpm < 76) return TempoClass::Adagio;
  if (bpm < 108) return TempoClass::Andante;
  if (bpm < 120) return TempoClass::Moderato;
  if (bpm < 168) return TempoClass::Allegro;
  return TempoClass::Presto;
}

std::int32_t tempo_class_us(TempoClass c) {
  // 50, 63, 71, 92, 114, 144, 184 bpm
  static constexpr std::int32_t us[] = {1200000, 952381, 845070, 652174,
                                        526316,  416667, 326087};
  return us[static_cast<int>(c)];
}

CompoundToken CompoundToken::note(TempoClass tempo, std::int32_t bar, std::int32_t position,
                                  std::int32_t pitch, std::int32_t duration) {
  return {{static_cast<Field>(tempo), bar, position, pitch, duration}};
}

CompoundToken CompoundToken::special(SpecialKind k) {
  CompoundToken t;
  t.fields.fill(special_field(k));
  return t;
}

bool CompoundToken::is_note() const {
  return std::all_of(fields.begin(), fields.end(), [](Field f) { return f >= 0; });
}

bool CompoundToken::is_special() const {
  return fields[0] < 0 && fields[0] >= -kNumSpecials &&
         std::all_of(fields.begin(), fields.end(), [&](Field f) { return f == fields[0]; });
}

std::optional<SpecialKind> CompoundToken::special_kind() const {
  if (!is_special()) return std::nullopt;
  return static_cast<SpecialKind>(-1 - fields[0]);
}

std::vector<std::size_t> detect_phrase_boundaries(const Melody& m) {
  const auto& n = m.notes;
  if (n.empty()) return {};
  std::vector<std::size_t> cand;

  // Longest note of each bar, if longer than a quarter note.
  for (std::size_t i = 0; i < n.size();) {
    const auto bar = n[i].bar();
    std::size_t best = i;
    std::size_t j = i;
    for (; j < n.size() && n[j].bar() == bar; ++j) {
      if (n[j].duration > n[best].duration) best = j;
    }
    if (n[best].duration > kTicksPerQuarter) cand.push_back(best);
    i = j;
  }
  // Notes followed by a rest of at least an eighth note.
  for (std::size_t i = 0; i + 1 < n.size(); ++i) {
    if (n[i + 1].onset - n[i].end() >= kTicksPerQuarter / 2) cand.push_back(i);
  }
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  auto dur = [&](std::size_t idx) { return n[idx].duration; };
  constexpr std::int64_t kMargin = 240;
  if (!cand.empty() && cand.front() == 0) {
    const std::int64_t second = cand.size() > 1 ? dur(cand[1]) : 0;
    if (dur(0) - second < kMargin) cand.erase(cand.begin());
  }
  if (!cand.empty() && cand.back() == n.size() - 1) cand.pop_back();

  for (std::size_t i = 1; i < cand.size(); ++i) {
    if (cand[i] == cand[i - 1] + 1) {
      if (dur(cand[i - 1]) - dur(cand[i]) > kMargin) {
        cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(i) - 1);
      }
    }
  }
  return cand;
}

TokenSequence encode(const Melody& m) {
  const auto tempo = tempo_bucket(m.bpm());
  const auto bounds = detect_phrase_boundaries(m);
  TokenSequence t;
  t.reserve(m.notes.size() + bounds.size() + 2);
  t.push_back(CompoundToken::special(SpecialKind::BOS));
  std::size_t b = 0;
  for (std::size_t i = 0; i < m.notes.size(); ++i) {
    const auto& note = m.notes[i];
    const auto bar = note.bar();
    const auto pos = note.onset % kTicksPerBar;
    if (note.onset < 0 || bar >= kNumBars) {
      throw EncodeError("note " + std::to_string(i) + " at bar " + std::to_string(bar) +
                        " exceeds the 128-bar limit");
    }
    if (position_index(pos) < 0) {
      throw EncodeError("note " + std::to_string(i) + " onset " + std::to_string(note.onset) +
                        " is off the position grid");
    }
    if (note.pitch < 0 || note.pitch > 127) {
      throw EncodeError("note " + std::to_string(i) + " pitch out of range");
    }
    t.push_back(CompoundToken::note(tempo, static_cast<std::int32_t>(bar),
                                    static_cast<std::int32_t>(pos), note.pitch,
                                    static_cast<std::int32_t>(snap_duration(note.duration))));
    if (b < bounds.size() && bounds[b] == i) {
      t.push_back(CompoundToken::special(SpecialKind::SEG));
      ++b;
    }
  }
  t.push_back(CompoundToken::special(SpecialKind::EOS));
  return t;
}

Melody decode(const TokenSequence& t, std::vector<std::string>* warnings) {
  Melody m;
  bool tempo_set = false;
  bool saw_eos = false;
  for (std::size_t i = 0; i < t.size() && !saw_eos; ++i) {
    const auto& tok = t[i];
    if (tok.is_special()) {
      switch (*tok.special_kind()) {
        case SpecialKind::BOS:
          if (i != 0) throw DecodeError(i, "<BOS> after the first position");
          break;
        case SpecialKind::EOS:
          saw_eos = true;
          break;
        case SpecialKind::SEG:
        case SpecialKind::PAD:
          break;
        case SpecialKind::MASK:
        case SpecialKind::SEP:
          throw DecodeError(i, std::string("unexpected ") + special_name(*tok.special_kind()));
      }
      continue;
    }
    if (!tok.is_note()) throw DecodeError(i, "special symbol mixed with note fields");
    const auto tempo = tok[Attribute::Tempo];
    if (tempo >= kNumTempoClasses) throw DecodeError(i, "tempo class out of range");
    if (tok.bar() >= kNumBars) throw DecodeError(i, "bar out of range");
    if (position_index(tok.position()) < 0) throw DecodeError(i, "invalid position symbol");
    if (tok.pitch() > 127) throw DecodeError(i, "pitch out of range");
    if (duration_index(tok.duration()) < 0) throw DecodeError(i, "invalid duration symbol");
    if (!tempo_set) {
      m.tempo_us = tempo_class_us(static_cast<TempoClass>(tempo));
      tempo_set = true;
    }
    m.notes.push_back({tok.pitch(), tok.onset(), tok.duration()});
  }
  if (!saw_eos) {
    const std::string msg = "token sequence has no <EOS>; decoded as truncated";
    if (warnings) warnings->push_back(msg);
    log().debug("{}", msg);
  }
  return m;
}

std::vector<std::size_t> note_indices(const TokenSequence& t) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].is_note()) out.push_back(i);
  }
  return out;
}

namespace {

std::string field_text(CompoundToken::Field f) {
  if (f >= 0) return std::to_string(f);
  if (f >= -kNumSpecials) return special_name(static_cast<SpecialKind>(-1 - f));
  throw std::invalid_argument("invalid token field " + std::to_string(f));
}

CompoundToken::Field parse_field(const std::string& s, std::size_t line) {
  for (int k = 0; k < kNumSpecials; ++k) {
    if (s == special_name(static_cast<SpecialKind>(k))) {
      return CompoundToken::special_field(static_cast<SpecialKind>(k));
    }
  }
  std::size_t used = 0;
  long v = -1;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || v < 0 || v > 1'000'000) {
    throw std::runtime_error("tokens line " + std::to_string(line) + ": bad field '" + s + "'");
  }
  return static_cast<CompoundToken::Field>(v);
}

}  // namespace

std::string write_tokens(const TokenSequence& t) {
  std::string out;
  for (const auto& tok : t) {
    for (int k = 0; k < kNumAttributes; ++k) {
      if (k) out += ',';
      out += field_text(tok.fields[static_cast<std::size_t>(k)]);
    }
    out += '\n';
  }
  return out;
}

TokenSequence parse_tokens(const std::string& text) {
  TokenSequence t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    CompoundToken tok;
    std::size_t start = 0;
    for (int k = 0; k < kNumAttributes; ++k) {
      const auto comma = line.find(',', start);
      const bool last = k == kNumAttributes - 1;
      if (last != (comma == std::string::npos)) {
        throw std::runtime_error("tokens line " + std::to_string(lineno) +
                                 ": expected 5 comma-separated fields");
      }
      tok.fields[static_cast<std::size_t>(k)] =
          parse_field(line.substr(start, last ? std::string::npos : comma - start), lineno);
      start = comma + 1;
    }
    t.push_back(tok);
  }
  return t;
}

TokenSequence read_tokens_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_tokens(ss.str());
}

void write_tokens_file(const std::string& path, const TokenSequence& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << write_tokens(t);
}

int Vocabulary::total_size() const {
  int s = 0;
  for (int k = 0; k < kNumAttributes; ++k) s += size(static_cast<Attribute>(k));
  return s;
}

int Vocabulary::id(Attribute a, CompoundToken::Field f) const {
  const int b = base[static_cast<std::size_t>(a)];
  if (CompoundToken::field_is_special(f)) {
    return b + static_cast<int>(-1 - f);
  }
  int v = -1;
  switch (a) {
    case Attribute::Tempo: v = f < kNumTempoClasses ? f : -1; break;
    case Attribute::Bar: v = bar_modulo ? f % b : f; break;
    case Attribute::Position: v = position_index(f); break;
    case Attribute::Pitch: v = f <= 127 ? f : -1; break;
    case Attribute::Duration: v = duration_index(f); break;
  }
  if (v < 0 || v >= b) {
    static constexpr const char* names[] = {"tempo", "bar", "position", "pitch", "duration"};
    throw std::out_of_range(std::string("no vocabulary id for ") +
                            names[static_cast<int>(a)] + " value " + std::to_string(f));
  }
  return v;
}

std::array<int, kNumAttributes> Vocabulary::ids(const CompoundToken& t) const {
  std::array<int, kNumAttributes> out{};
  for (int k = 0; k < kNumAttributes; ++k) {
    out[static_cast<std::size_t>(k)] = id(static_cast<Attribute>(k), t.fields[static_cast<std::size_t>(k)]);
  }
  return out;
}

std::optional<CompoundToken::Field> Vocabulary::value(Attribute a, int id) const {
  using Field = CompoundToken::Field;
  if (id < 0 || id >= size(a)) return std::nullopt;
  if (id_is_special(a, id)) {
    return CompoundToken::special_field(
        static_cast<SpecialKind>(id - base[static_cast<std::size_t>(a)]));
  }
  auto from_table = [id](std::span<const std::int64_t> table) -> std::optional<Field> {
    if (id >= static_cast<int>(table.size())) return std::nullopt;
    return static_cast<Field>(table[static_cast<std::size_t>(id)]);
  };
  switch (a) {
    case Attribute::Tempo:
      if (id < kNumTempoClasses) return id;
      break;
    case Attribute::Bar:
      if (id < kNumBars) return id;
      break;
    case Attribute::Pitch:
      if (id <= 127) return id;
      break;
    case Attribute::Position:
      return from_table(position_symbols());
    case Attribute::Duration:
      return from_table(duration_symbols());
  }
  return std::nullopt;
}

}  // namespace melofill
