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
#include "melofill/melody.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace melofill {

Melody transpose(const Melody& m, int semitones) {
  Melody out = m;
  for (auto& n : out.notes) n.pitch += semitones;
  return out;
}

bool is_monophonic(const Melody& m) {
  for (std::size_t i = 1; i < m.notes.size(); ++i) {
    if (m.notes[i - 1].end() > m.notes[i].onset) return false;
  }
  return true;
}

std::string write_notes(const Melody& m) {
  std::ostringstream out;
  out << "tempo_us " << m.tempo_us << '\n';
  for (const auto& n : m.notes) out << n.onset << ',' << n.duration << ',' << n.pitch << '\n';
  return out.str();
}

Melody parse_notes(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Melody m;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (!have_header) {
      std::istringstream h(line);
      std::string key;
      if (!(h >> key >> m.tempo_us) || key != "tempo_us" || m.tempo_us <= 0) {
        throw std::runtime_error("notes line 1: expected 'tempo_us <positive int>'");
      }
      have_header = true;
      continue;
    }
    NoteEvent n;
    char c1 = 0, c2 = 0;
    std::istringstream l(line);
    if (!(l >> n.onset >> c1 >> n.duration >> c2 >> n.pitch) || c1 != ',' || c2 != ',') {
      throw std::runtime_error("notes line " + std::to_string(lineno) + ": malformed");
    }
    if (n.pitch < 0 || n.pitch > 127 || n.duration <= 0 || n.onset < 0) {
      throw std::runtime_error("notes line " + std::to_string(lineno) + ": out of range");
    }
    m.notes.push_back(n);
  }
  if (!have_header) throw std::runtime_error("notes: missing tempo header");
  return m;
}

Melody read_notes_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_notes(ss.str());
}

void write_notes_file(const std::string& path, const Melody& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << write_notes(m);
}

}  // namespace melofill
