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
#include <span>

namespace melofill {

// Mixed-precision timing grid: straight 64th notes (30 ticks) and 16th-note
// triplets (40 ticks) at 480 ticks per quarter.
inline constexpr std::int64_t kStraightStep = 30;
inline constexpr std::int64_t kTripletStep = 40;
inline constexpr std::int64_t kMaxDuration = 1920;

/// Sorted in-bar onset symbols: {0,30,..,1890} ∪ {0,40,..,1880}; 96 values.
std::span<const std::int64_t> position_symbols();

/// Sorted duration symbols: {30,60,..,1920} ∪ {40,80,160,320,640}; 69 values.
std::span<const std::int64_t> duration_symbols();

/// Snaps to whichever of the two grids is closer; ties go to the straight grid.
std::int64_t snap_onset(std::int64_t ticks);

/// Nearest duration symbol, clipped to [30, 1920]. Ties prefer the straight
/// grid, then the shorter symbol.
std::int64_t snap_duration(std::int64_t ticks);

/// Largest duration symbol <= limit, or 0 if limit < 30.
std::int64_t floor_duration(std::int64_t limit);

/// Index of `v` in the symbol table, or -1.
int position_index(std::int64_t v);
int duration_index(std::int64_t v);

}  // namespace melofill
