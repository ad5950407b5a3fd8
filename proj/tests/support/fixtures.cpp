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
#include "fixtures.hpp"

#include <array>
#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <stdexcept>

#include <unistd.h>

#include "melofill/corpus.hpp"
#include "melofill/rng.hpp"

namespace melofill::testing {

namespace {

// Bar rhythms in ticks; negative entries are rests. Each sums to 1920.
const std::vector<std::vector<int>> kRhythms = {
    {480, 480, 480, 480},
    {240, 240, 480, 960},
    {720, 240, 480, 480},
    {960, 480, 480},
    {160, 160, 160, 480, 960},
    {240, 240, 240, 240, 480, -480},
    {320, 320, 320, 480, 480},
    {240, -240, 480, 480, 480},
    {480, 240, 240, 720, 240},
    {1440, 480},
};

const std::array<int, 7> kMajor = {0, 2, 4, 5, 7, 9, 11};

int degree_pitch(int tonic, int degree) {
  const int oct = degree >= 0 ? degree / 7 : -((-degree + 6) / 7);
  const int step = degree - oct * 7;
  return tonic + 12 * oct + kMajor[static_cast<std::size_t>(step)];
}

Melody attempt(Rng& rng, int bars) {
  Melody m;
  const int bpm = static_cast<int>(rng.uniform_int(56, 180));
  m.tempo_us = 60'000'000 / bpm;
  const int tonic = 55 + static_cast<int>(rng.uniform_int(0, 11));

  struct Bar {
    std::vector<int> rhythm;
    std::vector<int> degrees;
  };
  std::vector<Bar> history;
  int degree = static_cast<int>(rng.uniform_int(0, 4));
  for (int b = 0; b < bars; ++b) {
    Bar bar;
    if (!history.empty() && rng.uniform01() < 0.35) {
      bar = history[rng.index(history.size())];
    } else {
      bar.rhythm = kRhythms[rng.index(kRhythms.size())];
      for (int d : bar.rhythm) {
        if (d < 0) continue;
        static const std::array<int, 9> steps = {-3, -2, -1, -1, 1, 1, 2, 3, 0};
        degree = std::clamp(degree + steps[rng.index(steps.size())], -4, 11);
        bar.degrees.push_back(degree);
      }
    }
    std::int64_t t = static_cast<std::int64_t>(b) * kTicksPerBar;
    std::size_t k = 0;
    for (int d : bar.rhythm) {
      if (d > 0) m.notes.push_back({degree_pitch(tonic, bar.degrees[k++]), t, d});
      t += d < 0 ? -d : d;
    }
    history.push_back(std::move(bar));
  }
  return m;
}

}  // namespace

Melody synth_melody(std::uint64_t seed, int bars) {
  for (std::uint64_t salt = 0; salt < 10000; ++salt) {
    Rng rng(derive_seed(seed, 0x5eed, salt));
    auto m = attempt(rng, bars);
    if (filter_melody(m).accepted) return m;
  }
  throw std::runtime_error("synth_melody: no accepted melody with " + std::to_string(bars) + " bars");
}

std::vector<Melody> fixture_corpus(std::size_t n, std::uint64_t seed, int bars) {
  std::vector<Melody> out;
  std::set<std::uint64_t> keys;
  for (std::uint64_t i = 0; out.size() < n; ++i) {
    auto m = synth_melody(derive_seed(seed, i), bars);
    if (keys.insert(dedup_key(m)).second) out.push_back(std::move(m));
  }
  return out;
}

Melody line(std::initializer_list<std::pair<int, int>> notes, std::int32_t tempo_us) {
  Melody m;
  m.tempo_us = tempo_us;
  std::int64_t t = 0;
  for (auto [p, d] : notes) {
    if (p >= 0) m.notes.push_back({p, t, d});
    t += d;
  }
  return m;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void TrackBytes::delta(std::uint32_t d) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = d & 0x7f;
  while (d >>= 7) buf[n++] = static_cast<std::uint8_t>(0x80 | (d & 0x7f));
  while (n) data_.push_back(buf[--n]);
}

TrackBytes& TrackBytes::on(std::uint32_t d, int ch, int pitch, int vel) {
  return raw(d, {static_cast<std::uint8_t>(0x90 | ch), static_cast<std::uint8_t>(pitch),
                 static_cast<std::uint8_t>(vel)});
}

TrackBytes& TrackBytes::off(std::uint32_t d, int ch, int pitch) {
  return raw(d, {static_cast<std::uint8_t>(0x80 | ch), static_cast<std::uint8_t>(pitch), 0});
}

TrackBytes& TrackBytes::raw(std::uint32_t d, std::initializer_list<std::uint8_t> bytes) {
  delta(d);
  data_.insert(data_.end(), bytes);
  return *this;
}

TrackBytes& TrackBytes::tempo(std::uint32_t d, std::uint32_t us) {
  return raw(d, {0xff, 0x51, 0x03, static_cast<std::uint8_t>(us >> 16),
                 static_cast<std::uint8_t>(us >> 8), static_cast<std::uint8_t>(us)});
}

TrackBytes& TrackBytes::time_sig(std::uint32_t d, int num, int den_pow2) {
  return raw(d, {0xff, 0x58, 0x04, static_cast<std::uint8_t>(num),
                 static_cast<std::uint8_t>(den_pow2), 24, 8});
}

TrackBytes& TrackBytes::end(std::uint32_t d) { return raw(d, {0xff, 0x2f, 0x00}); }

std::vector<std::uint8_t> smf(int format, int division, const std::vector<TrackBytes>& tracks) {
  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd', 0, 0, 0, 6};
  auto u16 = [&](int v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  };
  u16(format);
  u16(static_cast<int>(tracks.size()));
  u16(division);
  for (const auto& t : tracks) {
    const auto& b = t.bytes();
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    const auto n = static_cast<std::uint32_t>(b.size());
    out.insert(out.end(), {static_cast<std::uint8_t>(n >> 24), static_cast<std::uint8_t>(n >> 16),
                           static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)});
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace melofill::testing
