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
#include "melofill/grid.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <vector>

namespace melofill {

namespace {

std::vector<std::int64_t> make_positions() {
  std::vector<std::int64_t> v;
  for (std::int64_t t = 0; t < 1920; t += kStraightStep) v.push_back(t);
  for (std::int64_t t = 0; t < 1920; t += kTripletStep) v.push_back(t);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::int64_t> make_durations() {
  std::vector<std::int64_t> v;
  for (std::int64_t t = kStraightStep; t <= kMaxDuration; t += kStraightStep) v.push_back(t);
  for (std::int64_t t : {40, 80, 160, 320, 640}) v.push_back(t);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

const std::vector<std::int64_t>& positions() {
  static const auto v = make_positions();
  return v;
}

const std::vector<std::int64_t>& durations() {
  static const auto v = make_durations();
  return v;
}

std::int64_t round_to(std::int64_t x, std::int64_t step) {
  // Half-way values round up.
  const std::int64_t q = (x >= 0 ? x + step / 2 : x - step / 2 + 1) / step;
  return q * step;
}

int index_of(const std::vector<std::int64_t>& table, std::int64_t v) {
  auto it = std::lower_bound(table.begin(), table.end(), v);
  if (it == table.end() || *it != v) return -1;
  return static_cast<int>(it - table.begin());
}

}  // namespace

std::span<const std::int64_t> position_symbols() { return positions(); }
std::span<const std::int64_t> duration_symbols() { return durations(); }

std::int64_t snap_onset(std::int64_t ticks) {
  const auto s = round_to(ticks, kStraightStep);
  const auto t = round_to(ticks, kTripletStep);
  return std::llabs(t - ticks) < std::llabs(s - ticks) ? t : s;
}

std::int64_t snap_duration(std::int64_t ticks) {
  const auto& d = durations();
  if (ticks <= d.front()) return d.front();
  if (ticks >= d.back()) return d.back();
  auto hi = std::lower_bound(d.begin(), d.end(), ticks);
  auto lo = hi - 1;
  const auto dlo = ticks - *lo, dhi = *hi - ticks;
  if (dlo != dhi) return dlo < dhi ? *lo : *hi;
  // Equidistant: prefer the straight-grid symbol, then the shorter one.
  if (*hi % kStraightStep == 0 && *lo % kStraightStep != 0) return *hi;
  return *lo;
}

std::int64_t floor_duration(std::int64_t limit) {
  const auto& d = durations();
  auto it = std::upper_bound(d.begin(), d.end(), limit);
  return it == d.begin() ? 0 : *(it - 1);
}

int position_index(std::int64_t v) { return index_of(positions(), v); }
int duration_index(std::int64_t v) { return index_of(durations(), v); }

}  // namespace melofill
