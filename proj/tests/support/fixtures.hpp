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
#include <filesystem>
#include <string>
#include <vector>

#include "melofill/melody.hpp"

namespace melofill::testing {

/// On-grid monophonic melody of `bars` bars that passes every filter rule.
/// Bars are drawn from a small rhythm vocabulary and often repeat an earlier
/// bar, so n-gram counts are not all 1.
Melody synth_melody(std::uint64_t seed, int bars = 12);

/// `n` distinct synthetic melodies.
std::vector<Melody> fixture_corpus(std::size_t n = 50, std::uint64_t seed = 1, int bars = 12);

/// Melody built from (pitch, duration) pairs laid end to end; pitch < 0 is a rest.
Melody line(std::initializer_list<std::pair<int, int>> notes, std::int32_t tempo_us = kDefaultTempoUs);

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "melofill");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Hand assembly of Standard MIDI File bytes.
class TrackBytes {
 public:
  TrackBytes& on(std::uint32_t delta, int ch, int pitch, int vel = 80);
  TrackBytes& off(std::uint32_t delta, int ch, int pitch);
  TrackBytes& raw(std::uint32_t delta, std::initializer_list<std::uint8_t> bytes);
  TrackBytes& tempo(std::uint32_t delta, std::uint32_t us);
  TrackBytes& time_sig(std::uint32_t delta, int num, int den_pow2);
  TrackBytes& end(std::uint32_t delta = 0);
  const std::vector<std::uint8_t>& bytes() const { return data_; }

 private:
  void delta(std::uint32_t d);
  std::vector<std::uint8_t> data_;
};

std::vector<std::uint8_t> smf(int format, int division, const std::vector<TrackBytes>& tracks);
void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes);

}  // namespace melofill::testing
