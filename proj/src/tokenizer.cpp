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

#include "rcm/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rcm/binio.hpp"
#include "rcm/errors.hpp"

namespace rcm {
namespace {

std::string canonical_key(cplx quantized) {
  return format_double(quantized.real()) + ',' + format_double(quantized.imag());
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

double quantize_component(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("cannot quantize a non-finite value");
  if (x == 0.0) return 0.0;

  // Work on the shortest decimal form of the double so the rounding is a
  // pure decimal-string operation; rounding through binary arithmetic can
  // land on the wrong side of a decimal tie.
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  const std::string_view s(buf, std::size_t(res.ptr - buf));

  std::size_t i = 0;
  const bool neg = s[0] == '-';
  if (neg) i = 1;
  std::string digits;
  int exp10 = 0;
  int frac_digits = 0;
  bool in_frac = false;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '.') {
      in_frac = true;
    } else if (c == 'e' || c == 'E') {
      std::size_t e = i + 1;
      if (e < s.size() && s[e] == '+') ++e;
      int ev = 0;
      std::from_chars(s.data() + e, s.data() + s.size(), ev);
      exp10 = ev;
      break;
    } else {
      digits.push_back(c);
      if (in_frac) ++frac_digits;
    }
  }
  const std::size_t lead = digits.find_first_not_of('0');
  const int dropped = int(digits.size() - lead);
  digits.erase(0, lead);
  // value = digits * 10^(exp10 - frac_digits); adjusted exponent of the
  // leading digit:
  int adj = dropped - 1 + exp10 - frac_digits;

  if (digits.size() <= 2) return x;  // already at most two significant digits

  bool up;
  if (digits[2] > '5') {
    up = true;
  } else if (digits[2] < '5') {
    up = false;
  } else {
    up = digits.find_first_not_of('0', 3) != std::string::npos;
    if (!up) up = ((digits[1] - '0') % 2) == 1;  // exact tie: to even
  }
  int two = (digits[0] - '0') * 10 + (digits[1] - '0');
  if (up) ++two;
  if (two == 100) {
    two = 10;
    ++adj;
  }

  char out[32];
  char* p = out;
  if (neg) *p++ = '-';
  *p++ = char('0' + two / 10);
  *p++ = '.';
  *p++ = char('0' + two % 10);
  *p++ = 'e';
  const auto conv = std::to_chars(p, out + sizeof(out), adj);
  double value = 0.0;
  std::from_chars(out, conv.ptr, value);
  return value;
}

cplx quantize(cplx value) {
  return cplx(quantize_component(value.real()), quantize_component(value.imag()));
}

Vocabulary::Vocabulary(std::vector<VocabEntry> channel_entries)
    : entries_(std::move(channel_entries)) {
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    if (entries_[k].id != kNumSpecialTokens + k)
      throw std::invalid_argument("vocabulary ids must be contiguous after the specials");
    if (!std::isfinite(entries_[k].centroid.real()) || !std::isfinite(entries_[k].centroid.imag()))
      throw std::invalid_argument("vocabulary centroids must be finite");
    const auto [it, inserted] = index_.emplace(canonical_key(entries_[k].centroid), entries_[k].id);
    if (!inserted) throw std::invalid_argument("duplicate vocabulary centroid");
  }
}

bool Vocabulary::find(cplx quantized, std::uint32_t& id) const {
  const auto it = index_.find(canonical_key(quantized));
  if (it == index_.end()) return false;
  id = it->second;
  return true;
}

const VocabEntry& Vocabulary::entry(std::uint32_t id) const {
  if (is_special(id)) throw special_token_error("special tokens carry no channel value");
  if (id - kNumSpecialTokens >= entries_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " is outside the vocabulary");
  return entries_[id - kNumSpecialTokens];
}

Vocabulary build_vocabulary(const std::vector<const ChannelGrid*>& grids,
                            std::uint32_t max_size) {
  if (max_size <= kNumSpecialTokens)
    throw std::invalid_argument("vocabulary size must exceed the 5 special tokens");
  if (grids.empty()) throw std::invalid_argument("vocabulary needs at least one grid");

  struct Bucket {
    cplx centroid;
    std::uint64_t count = 0;
  };
  std::unordered_map<std::string, Bucket> counts;
  for (const ChannelGrid* grid : grids) {
    for (const cplx& v : grid->values) {
      const cplx q = quantize(v);
      Bucket& b = counts[canonical_key(q)];
      b.centroid = q;
      ++b.count;
    }
  }

  std::vector<Bucket> ranked;
  ranked.reserve(counts.size());
  for (auto& [key, bucket] : counts) ranked.push_back(bucket);
  std::sort(ranked.begin(), ranked.end(), [](const Bucket& a, const Bucket& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.centroid.real() != b.centroid.real()) return a.centroid.real() < b.centroid.real();
    return a.centroid.imag() < b.centroid.imag();
  });
  const std::size_t keep = std::min<std::size_t>(ranked.size(), max_size - kNumSpecialTokens);

  std::vector<VocabEntry> entries(keep);
  for (std::size_t k = 0; k < keep; ++k)
    entries[k] = {std::uint32_t(kNumSpecialTokens + k), ranked[k].centroid, ranked[k].count};
  return Vocabulary(std::move(entries));
}

Vocabulary build_vocabulary(const ChannelGrid& grid, std::uint32_t max_size) {
  return build_vocabulary(std::vector<const ChannelGrid*>{&grid}, max_size);
}

std::uint32_t encode(cplx value, const Vocabulary& vocab) {
  if (vocab.num_channel_entries() == 0)
    throw std::invalid_argument("cannot encode against an empty channel vocabulary");
  const cplx q = quantize(value);
  std::uint32_t id = 0;
  if (vocab.find(q, id)) return id;
  const auto& entries = vocab.channel_entries();
  std::uint32_t best = entries[0].id;
  double best_dist = std::norm(q - entries[0].centroid);
  for (std::size_t k = 1; k < entries.size(); ++k) {
    const double dist = std::norm(q - entries[k].centroid);
    if (dist < best_dist) {
      best_dist = dist;
      best = entries[k].id;
    }
  }
  return best;
}

cplx decode(std::uint32_t id, const Vocabulary& vocab) { return vocab.entry(id).centroid; }

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_format_error("cannot open '" + path + "' for writing");
  out << "RCMV 1 V=" << vocab.size() << '\n';
  for (const VocabEntry& e : vocab.channel_entries())
    out << e.id << '\t' << format_double(e.centroid.real()) << '\t'
        << format_double(e.centroid.imag()) << '\t' << e.count << '\n';
  if (!out) throw data_format_error("short write while saving '" + path + "'");
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_format_error("cannot open '" + path + "' for reading");
  std::string header;
  if (!std::getline(in, header) || header.rfind("RCMV 1 V=", 0) != 0)
    throw data_format_error("'" + path + "' is not a vocabulary file");
  const long long size = parse_int(header.substr(9), "vocabulary header");
  if (size < kNumSpecialTokens)
    throw data_format_error("vocabulary header reports an impossible size");

  std::vector<VocabEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4)
      throw data_format_error("vocabulary line needs 4 tab-separated fields: '" + line + "'");
    VocabEntry e;
    e.id = std::uint32_t(parse_int(fields[0], "vocabulary id"));
    e.centroid = cplx(parse_double(fields[1], "vocabulary centroid"),
                      parse_double(fields[2], "vocabulary centroid"));
    const long long count = parse_int(fields[3], "vocabulary count");
    if (count < 0) throw data_format_error("vocabulary count must be non-negative");
    e.count = std::uint64_t(count);
    entries.push_back(e);
  }
  if (entries.size() != std::size_t(size) - kNumSpecialTokens)
    throw data_format_error("vocabulary entry count disagrees with its header");
  try {
    return Vocabulary(std::move(entries));
  } catch (const std::invalid_argument& err) {
    throw data_format_error(std::string("invalid vocabulary file: ") + err.what());
  }
}

SequenceExample assemble_sequence(const ChannelGrid& grid,
                                  std::pair<std::uint32_t, std::uint32_t> frame_pair,
                                  const Vocabulary& vocab) {
  if (frame_pair.first >= grid.frames() || frame_pair.second >= grid.frames())
    throw std::invalid_argument("frame index out of range");
  const std::uint32_t ns = grid.subcarriers();
  const std::uint32_t na = grid.antennas();
  const std::size_t total = std::size_t(2) * ns * na + 2 * na + 1;

  SequenceExample seq;
  seq.token_ids.reserve(total);
  seq.freq_ids.reserve(total);
  seq.time_ids.reserve(total);
  seq.antenna_ids.reserve(total);
  seq.is_special.reserve(total);

  auto push = [&](std::uint32_t token, std::uint32_t f, std::uint32_t t, std::uint32_t a,
                  bool special) {
    seq.token_ids.push_back(token);
    seq.freq_ids.push_back(f);
    seq.time_ids.push_back(t);
    seq.antenna_ids.push_back(a);
    seq.is_special.push_back(special ? 1 : 0);
  };

  push(kClsToken, 0, 0, 0, true);
  const std::uint32_t frames[2] = {frame_pair.first, frame_pair.second};
  for (std::uint32_t slot = 0; slot < 2; ++slot) {
    for (std::uint32_t a = 0; a < na; ++a) {
      for (std::uint32_t s = 0; s < ns; ++s)
        push(encode(grid.at(s, frames[slot], a), vocab), s + 1, slot + 1, a + 1, false);
      push(kSepToken, 0, 0, 0, true);
    }
  }
  return seq;
}

FeatureMap build_feature_map(const ChannelGrid& grid) {
  FeatureMap map;
  map.freq.resize(grid.subcarriers() + 1);
  map.time.resize(3);
  map.antenna.resize(grid.antennas() + 1);
  for (std::uint32_t s = 1; s <= grid.subcarriers(); ++s)
    map.freq[s] = format_double((s - 1) * grid.meta.subcarrier_spacing_hz);
  map.time[1] = format_double(0.0);
  map.time[2] = format_double(grid.meta.frame_interval_s);
  for (std::uint32_t a = 1; a <= grid.antennas(); ++a)
    map.antenna[a] = "A" + std::to_string(a - 1);
  return map;
}

void save_feature_map(const FeatureMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_format_error("cannot open '" + path + "' for writing");
  for (std::size_t i = 1; i < map.freq.size(); ++i)
    out << "freq\t" << i << '\t' << map.freq[i] << '\n';
  for (std::size_t i = 1; i < map.time.size(); ++i)
    out << "time\t" << i << '\t' << map.time[i] << '\n';
  for (std::size_t i = 1; i < map.antenna.size(); ++i)
    out << "antenna\t" << i << '\t' << map.antenna[i] << '\n';
  if (!out) throw data_format_error("short write while saving '" + path + "'");
}

FeatureMap load_feature_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_format_error("cannot open '" + path + "' for reading");
  FeatureMap map;
  map.freq.resize(1);
  map.time.resize(1);
  map.antenna.resize(1);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw data_format_error("feature map line needs 3 tab-separated fields: '" + line + "'");
    std::vector<std::string>* table = nullptr;
    if (fields[0] == "freq") table = &map.freq;
    else if (fields[0] == "time") table = &map.time;
    else if (fields[0] == "antenna") table = &map.antenna;
    else throw data_format_error("unknown feature domain '" + fields[0] + "'");
    const long long id = parse_int(fields[1], "feature id");
    if (id != (long long)table->size())
      throw data_format_error("feature ids must be contiguous from 1 per domain");
    table->push_back(fields[2]);
  }
  if (map.freq.size() < 2 || map.time.size() != 3 || map.antenna.size() < 2)
    throw data_format_error("feature map is missing required domains");
  return map;
}

}  // namespace rcm
