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
#include <string>
#include <string_view>

namespace melofill {

/// Fixed seed for every persisted hash (dedup keys, corpus and checkpoint
/// hashes). Changing it invalidates existing manifests.
inline constexpr std::uint64_t kHashSeed = 0x6d656c6f66696c6cULL;

/// Seeded FNV-1a over a byte stream; byte-order independent because callers
/// feed explicit little-endian encodings.
class StableHash {
 public:
  explicit StableHash(std::uint64_t seed = kHashSeed)
      : state_(kOffset ^ (seed * kPrime)) {}

  void update(std::span<const std::uint8_t> bytes) {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= kPrime;
    }
  }
  void update(std::string_view s) {
    update(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  void update_i32(std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(u), static_cast<std::uint8_t>(u >> 8),
                               static_cast<std::uint8_t>(u >> 16),
                               static_cast<std::uint8_t>(u >> 24)};
    update(b);
  }

  std::uint64_t digest() const { return state_; }

 private:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t state_;
};

std::string hex64(std::uint64_t v);

/// Hash of a file's contents; throws std::runtime_error if unreadable.
std::uint64_t hash_file(const std::string& path);

}  // namespace melofill
