// Copyright 2026 The rdgap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace rdgap {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  Fnv1a& bytes(std::span<const std::uint8_t> data) noexcept {
    for (std::uint8_t b : data) {
      state_ ^= b;
      state_ *= 0x100000001B3ULL;
    }
    return *this;
  }
  Fnv1a& text(std::string_view s) noexcept {
    return bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  Fnv1a& u64(std::uint64_t v) noexcept {
    std::uint8_t le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return bytes(le);
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

}  // namespace rdgap
