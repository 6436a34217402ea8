// SPDX-License-Identifier: Apache-2.0
//
// rcm - pretrained realistic channel model toolkit
// Copyright (C) 2026 the rcm authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef RCM_RNG_HPP
#define RCM_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace rcm {

/// Philox4x32-10 counter-based generator (Salmon et al. construction).
/// Stateless: output is a pure function of (key, counter), so independent
/// streams can be drawn in parallel and reproduced exactly.
struct Philox4x32 {
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 2> key,
                                            std::array<std::uint32_t, 4> ctr) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t(kMul0) * ctr[0];
      const std::uint64_t p1 = std::uint64_t(kMul1) * ctr[2];
      ctr = {std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0], std::uint32_t(p1),
             std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1], std::uint32_t(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

/// Purpose tags keep independent uses of the same seed decorrelated.
enum class RngPurpose : std::uint64_t {
  kSimPhases = 1,
  kWeightInit = 2,
  kMasking = 3,
  kNfpPair = 4,
  kShuffle = 5,
  kDropout = 6,
  kEval = 7,
  kChart = 8,
  kFineTune = 9,
};

/// Packs a purpose and up to three sub-stream indices into a 64-bit stream
/// id. Valid ranges: a < 2^20, b < 2^20, c < 2^16.
inline std::uint64_t make_stream(RngPurpose purpose, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  return (static_cast<std::uint64_t>(purpose) << 56) | ((a & 0xFFFFFu) << 36) |
         ((b & 0xFFFFFu) << 16) | (c & 0xFFFFu);
}

/// A buffered draw sequence on one (seed, stream) pair. Each instance walks
/// its own 64-bit counter, so two instances with the same key replay the
/// same values in the same order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)},
        stream_(stream) {}

  CounterRng(std::uint64_t seed, RngPurpose purpose, std::uint64_t a = 0,
             std::uint64_t b = 0, std::uint64_t c = 0)
      : CounterRng(seed, make_stream(purpose, a, b, c)) {}

  std::uint32_t next_u32() {
    if (have_ == 0) {
      buf_ = Philox4x32::block(key_, {std::uint32_t(stream_), std::uint32_t(stream_ >> 32),
                                      std::uint32_t(n_), std::uint32_t(n_ >> 32)});
      ++n_;
      have_ = 4;
    }
    return buf_[4 - have_--];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); multiply-shift reduction (n >= 1).
  std::uint64_t below(std::uint64_t n) {
    return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (second value cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Normal with given stddev, redrawn until within +-clip stddevs.
  double truncated_normal(double stddev, double clip = 2.0) {
    if (stddev == 0.0) return 0.0;
    double z = normal();
    while (std::abs(z) > clip) z = normal();
    return z * stddev;
  }

  /// Fisher-Yates shuffle; order depends only on (seed, stream).
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = std::size_t(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t n_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int have_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rcm

#endif  // RCM_RNG_HPP
