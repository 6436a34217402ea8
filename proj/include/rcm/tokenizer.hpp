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

#ifndef RCM_TOKENIZER_HPP
#define RCM_TOKENIZER_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rcm/chansim.hpp"

namespace rcm {

/// Rounds each component to two significant decimal digits, half to even,
/// operating on the shortest decimal representation of the double (exact
/// string rounding, no binary re-rounding artifacts). Zero stays zero.
double quantize_component(double x);
cplx quantize(cplx value);

/// Reserved token ids.
enum SpecialToken : std::uint32_t {
  kPadToken = 0,
  kUnkToken = 1,
  kClsToken = 2,
  kSepToken = 3,
  kMaskToken = 4,
  kNumSpecialTokens = 5,
};

struct VocabEntry {
  std::uint32_t id = 0;
  cplx centroid;
  std::uint64_t count = 0;
};

/// Frequency-ranked vocabulary over quantized complex channel values.
/// Ids 0-4 are the specials; channel entries follow, ordered by descending
/// count with lexicographic (re, im) tie-break.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<VocabEntry> channel_entries);

  std::uint32_t size() const {
    return kNumSpecialTokens + std::uint32_t(entries_.size());
  }
  std::uint32_t num_channel_entries() const { return std::uint32_t(entries_.size()); }
  const std::vector<VocabEntry>& channel_entries() const { return entries_; }

  static bool is_special(std::uint32_t id) { return id < kNumSpecialTokens; }

  /// Exact lookup of an already-quantized value; returns false on miss.
  bool find(cplx quantized, std::uint32_t& id) const;

  /// Entry for a channel id; throws on specials / out-of-range ids.
  const VocabEntry& entry(std::uint32_t id) const;

 private:
  std::vector<VocabEntry> entries_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Counts quantized values over the grids and keeps the max_size-5 most
/// frequent. A corpus with fewer distinct values yields a smaller
/// vocabulary; that is reported by size(), not an error.
Vocabulary build_vocabulary(const std::vector<const ChannelGrid*>& grids,
                            std::uint32_t max_size);
Vocabulary build_vocabulary(const ChannelGrid& grid, std::uint32_t max_size);

/// Quantize + exact lookup, falling back to the nearest channel centroid in
/// the complex plane (ties to the lower id). Never returns a special id.
std::uint32_t encode(cplx value, const Vocabulary& vocab);

/// Centroid of a channel token. Specials are rejected with
/// special_token_error, unknown ids with std::out_of_range.
cplx decode(std::uint32_t id, const Vocabulary& vocab);

// Vocabulary file: header "RCMV 1 V=<size>", then one channel entry per
// line: id, re, im, count, tab-separated with shortest-decimal components.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

/// Token ids plus the parallel per-position domain feature ids that drive
/// the embedding sum. Specials carry 0 in all three domains.
struct SequenceExample {
  std::vector<std::uint32_t> token_ids;
  std::vector<std::uint32_t> freq_ids;     // 1..Ns, 0 for specials
  std::vector<std::uint32_t> time_ids;     // 1 = first frame of pair, 2 = second
  std::vector<std::uint32_t> antenna_ids;  // 1..Na, 0 for specials
  std::vector<std::uint8_t> is_special;

  std::size_t size() const { return token_ids.size(); }
};

/// Builds the pretraining layout for a pair of frames: [CLS], then per
/// frame and per antenna a run of Ns channel tokens closed by [SEP]
/// (time-major: the whole second half belongs to the second frame).
SequenceExample assemble_sequence(const ChannelGrid& grid,
                                  std::pair<std::uint32_t, std::uint32_t> frame_pair,
                                  const Vocabulary& vocab);

/// Physical meaning of every nonzero domain feature id; shipped alongside
/// transferred checkpoints so the receiver can validate the layout.
struct FeatureMap {
  std::vector<std::string> freq;     // index 1..Ns: subcarrier offset in Hz
  std::vector<std::string> time;     // index 1..2: frame time offset in s
  std::vector<std::string> antenna;  // index 1..Na: antenna label

  bool operator==(const FeatureMap&) const = default;
};

FeatureMap build_feature_map(const ChannelGrid& grid);
void save_feature_map(const FeatureMap& map, const std::string& path);
FeatureMap load_feature_map(const std::string& path);

}  // namespace rcm

#endif  // RCM_TOKENIZER_HPP
