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
#include "melofill/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "melofill/grid.hpp"
#include "melofill/hash.hpp"
#include "melofill/log.hpp"

namespace fs = std::filesystem;

namespace melofill {

namespace {

bool all_four_four(const RawSong& song) {
  return std::all_of(song.time_signatures.begin(), song.time_signatures.end(),
                     [](const TimeSignature& ts) {
                       return ts.numerator == 4 && ts.denominator == 4;
                     });
}

double monophonic_coverage(const std::vector<NoteEvent>& notes) {
  if (notes.empty()) return 0.0;
  std::vector<NoteEvent> v = notes;
  std::stable_sort(v.begin(), v.end(),
                   [](const NoteEvent& a, const NoteEvent& b) { return a.onset < b.onset; });
  std::size_t clean = 0;
  std::int64_t max_end = INT64_MIN;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool hit_prev = max_end > v[i].onset;
    const bool hit_next = i + 1 < v.size() && v[i + 1].onset < v[i].end();
    if (!hit_prev && !hit_next) ++clean;
    max_end = std::max(max_end, v[i].end());
  }
  return static_cast<double>(clean) / static_cast<double>(v.size());
}

std::vector<NoteEvent> flatten(std::vector<NoteEvent> notes) {
  std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.pitch > b.pitch;
  });
  std::vector<NoteEvent> out;
  for (const auto& n : notes) {
    if (!out.empty() && out.back().onset == n.onset) continue;  // lower voice of a chord
    if (!out.empty() && out.back().end() > n.onset) out.back().duration = n.onset - out.back().onset;
    out.push_back(n);
  }
  return out;
}

}  // namespace

std::optional<Melody> extract_melody_track(const RawSong& song) {
  if (!all_four_four(song)) return std::nullopt;
  const MidiTrack* best = nullptr;
  double best_mean = -1.0;
  for (const auto& t : song.tracks) {
    if (t.percussion() || t.notes.empty()) continue;
    if (monophonic_coverage(t.notes) < 0.9) continue;
    double sum = 0.0;
    for (const auto& n : t.notes) sum += n.pitch;
    const double mean = sum / static_cast<double>(t.notes.size());
    if (mean > best_mean) {
      best_mean = mean;
      best = &t;
    }
  }
  if (!best) return std::nullopt;
  Melody m;
  m.tempo_us = song.tempo_map.empty() ? kDefaultTempoUs : song.tempo_map.front().us_per_quarter;
  m.notes = flatten(best->notes);
  return m;
}

Melody quantize(const Melody& m) {
  std::vector<NoteEvent> snapped;
  snapped.reserve(m.notes.size());
  for (const auto& n : m.notes) {
    snapped.push_back({n.pitch, std::max<std::int64_t>(0, snap_onset(n.onset)),
                       snap_duration(n.duration)});
  }
  std::stable_sort(snapped.begin(), snapped.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.pitch > b.pitch;
  });
  Melody out;
  out.tempo_us = m.tempo_us;
  for (const auto& n : snapped) {
    if (!out.notes.empty()) {
      auto& prev = out.notes.back();
      if (n.onset < prev.onset + kStraightStep) continue;
      if (prev.end() > n.onset) prev.duration = floor_duration(n.onset - prev.onset);
    }
    out.notes.push_back(n);
  }
  return out;
}

const char* rule_name(FilterRule r) {
  switch (r) {
    case FilterRule::R1: return "R1";
    case FilterRule::R2: return "R2";
    case FilterRule::R3: return "R3";
    case FilterRule::R4: return "R4";
  }
  return "?";
}

FilterVerdict filter_melody(const Melody& m) {
  FilterVerdict v;
  const auto& notes = m.notes;
  if (notes.size() < 32) v.failed_rules.push_back(FilterRule::R1);

  std::set<std::int64_t> bars;
  for (const auto& n : notes) bars.insert(n.bar());
  const std::int64_t spanned = notes.empty() ? 0 : notes.back().bar() - notes.front().bar() + 1;
  const auto non_empty = static_cast<std::int64_t>(bars.size());
  if (non_empty < 8 || non_empty * 10 <= spanned * 7) v.failed_rules.push_back(FilterRule::R2);

  std::size_t run = 0, longest = 0;
  for (std::size_t i = 0; i < notes.size(); ++i) {
    run = (i > 0 && notes[i].pitch == notes[i - 1].pitch) ? run + 1 : 1;
    longest = std::max(longest, run);
  }
  if (longest > 10) v.failed_rules.push_back(FilterRule::R3);

  std::set<int> classes;
  for (const auto& n : notes) classes.insert(n.pitch % 12);
  if (classes.size() <= 5) v.failed_rules.push_back(FilterRule::R4);

  v.accepted = v.failed_rules.empty();
  return v;
}

std::uint64_t dedup_key(const Melody& m) {
  StableHash h;
  for (std::size_t i = 1; i < m.notes.size(); ++i) {
    h.update_i32(m.notes[i].pitch - m.notes[i - 1].pitch);
  }
  return h.digest();
}

namespace {

enum class Status { Accepted, Rejected, Duplicate, Unreadable, NoMelody };

const char* status_name(Status s) {
  switch (s) {
    case Status::Accepted: return "accepted";
    case Status::Rejected: return "rejected";
    case Status::Duplicate: return "duplicate";
    case Status::Unreadable: return "unreadable";
    case Status::NoMelody: return "no_melody";
  }
  return "?";
}

struct FileResult {
  std::string rel_path;
  Status status = Status::Unreadable;
  std::uint64_t key = 0;
  std::vector<FilterRule> failed;
  Melody melody;
  std::string error;
};

bool is_midi_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".mid" || ext == ".midi";
}

FileResult process_file(const fs::path& root, const fs::path& file) {
  FileResult r;
  r.rel_path = fs::relative(file, root).generic_string();
  try {
    const auto song = read_midi_file(file.string());
    auto melody = extract_melody_track(song);
    if (!melody) {
      r.status = Status::NoMelody;
      return r;
    }
    r.melody = quantize(*melody);
    r.key = dedup_key(r.melody);
    const auto verdict = filter_melody(r.melody);
    r.failed = verdict.failed_rules;
    r.status = verdict.accepted ? Status::Accepted : Status::Rejected;
  } catch (const std::exception& e) {
    r.status = Status::Unreadable;
    r.error = e.what();
  }
  return r;
}

}  // namespace

CorpusStats build_corpus(const fs::path& input_dir, const fs::path& output_dir) {
  if (!fs::is_directory(input_dir)) {
    throw std::runtime_error("input directory not found: " + input_dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(input_dir)) {
    if (e.is_regular_file() && is_midi_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    return fs::relative(a, input_dir).generic_string() < fs::relative(b, input_dir).generic_string();
  });

  std::vector<FileResult> results(files.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < files.size(); ++i) {
    results[i] = process_file(input_dir, files[i]);
  }

  CorpusStats stats;
  stats.inputs = files.size();
  std::unordered_set<std::uint64_t> seen;
  for (auto& r : results) {
    switch (r.status) {
      case Status::Unreadable:
        ++stats.unreadable;
        log().warn("skipping unreadable {}: {}", r.rel_path, r.error);
        break;
      case Status::NoMelody:
        ++stats.no_melody;
        break;
      case Status::Rejected:
        ++stats.rejected;
        for (auto rule : r.failed) ++stats.rejected_by_rule[static_cast<std::size_t>(rule)];
        break;
      case Status::Accepted:
        if (!seen.insert(r.key).second) {
          r.status = Status::Duplicate;
          ++stats.duplicates;
        } else {
          ++stats.pieces;
        }
        break;
      case Status::Duplicate:
        break;
    }
  }

  const fs::path pieces = output_dir / "pieces";
  fs::create_directories(pieces);
  for (const auto& e : fs::directory_iterator(pieces)) {
    if (e.path().extension() == ".notes") fs::remove(e.path());
  }
  for (const auto& r : results) {
    if (r.status == Status::Accepted) {
      write_notes_file((pieces / (hex64(r.key) + ".notes")).string(), r.melody);
    }
  }

  std::ofstream man(output_dir / "manifest.tsv", std::ios::binary);
  if (!man) throw std::runtime_error("cannot write manifest in " + output_dir.string());
  man << "# melofill corpus manifest v1\n"
      << "# inputs " << stats.inputs << "\n"
      << "# pieces " << stats.pieces << "\n"
      << "# duplicates " << stats.duplicates << "\n"
      << "# unreadable " << stats.unreadable << "\n"
      << "# no_melody " << stats.no_melody << "\n"
      << "# rejected " << stats.rejected << "\n";
  for (auto rule : kAllRules) {
    man << "# rejected_" << rule_name(rule) << ' '
        << stats.rejected_by_rule[static_cast<std::size_t>(rule)] << "\n";
  }
  man << "path\tstatus\tkey\tfailed_rules\n";
  for (const auto& r : results) {
    std::string rules;
    for (auto rule : r.failed) rules += (rules.empty() ? "" : ",") + std::string(rule_name(rule));
    const bool has_key = r.status == Status::Accepted || r.status == Status::Rejected ||
                         r.status == Status::Duplicate;
    man << r.rel_path << '\t' << status_name(r.status) << '\t' << (has_key ? hex64(r.key) : "-")
        << '\t' << (rules.empty() ? "-" : rules) << '\n';
  }
  return stats;
}

std::vector<fs::path> corpus_files(const fs::path& dir) {
  const fs::path root = fs::is_directory(dir / "pieces") ? dir / "pieces" : dir;
  if (!fs::is_directory(root)) throw std::runtime_error("corpus directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".notes") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<Melody> load_corpus(const fs::path& dir) {
  std::vector<Melody> out;
  for (const auto& f : corpus_files(dir)) out.push_back(read_notes_file(f.string()));
  return out;
}

std::uint64_t corpus_hash(const fs::path& dir) {
  StableHash h;
  for (const auto& f : corpus_files(dir)) {
    h.update(f.filename().string());
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    h.update(ss.str());
  }
  return h.digest();
}

}  // namespace melofill
