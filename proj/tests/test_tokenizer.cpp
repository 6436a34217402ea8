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

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "rcm/chansim.hpp"
#include "rcm/errors.hpp"
#include "rcm/rng.hpp"
#include "rcm/tokenizer.hpp"

using namespace rcm;

namespace {

ChannelGrid grid_from_values(std::vector<cplx> values) {
  ChannelGrid grid;
  grid.meta.num_subcarriers = std::uint32_t(values.size());
  grid.meta.num_frames = 1;
  grid.meta.num_antennas = 1;
  grid.values = std::move(values);
  return grid;
}

ChannelGrid fading_grid(std::uint32_t ns, std::uint32_t frames, std::uint32_t antennas,
                        std::uint64_t seed) {
  SimConfig cfg;
  cfg.num_subcarriers = ns;
  cfg.num_frames = frames;
  cfg.num_antennas = antennas;
  cfg.user_speed_mps = 15.0;
  cfg.taps = make_exponential_pdp(8, 0.1e-6, 0.2e-6);
  cfg.seed = seed;
  return generate_channel(cfg);
}

}  // namespace

TEST_CASE("two-significant-digit rounding matches the decimal reference") {
  // All expected values frozen from an independent decimal-string rounding
  // routine (round half to even on the shortest decimal form).
  const std::pair<double, double> cases[] = {
      {0.12345, 0.12},   {0.6789, 0.68},   {-0.004567, -0.0046}, {1.234, 1.2},
      {0.125, 0.12},     {0.135, 0.14},    {-0.125, -0.12},      {99.5, 100.0},
      {105.0, 100.0},    {0.0001234, 0.00012}, {123456.0, 120000.0}, {0.995, 1.0},
      {0.985, 0.98},     {1.0, 1.0},       {-1.0, -1.0},         {0.045, 0.045},
      {0.055, 0.055},    {3.14159, 3.1},   {2.71828, 2.7},       {-0.5, -0.5},
      {5e-21, 5e-21},    {7.0, 7.0},       {0.99999, 1.0},       {1.23456e25, 1.2e25},
  };
  for (const auto& [input, expect] : cases) {
    CAPTURE(input);
    CHECK(quantize_component(input) == expect);
  }
  CHECK(quantize_component(0.0) == 0.0);
  CHECK(!std::signbit(quantize_component(-0.0)));
  CHECK(quantize(cplx(0.12345, -0.004567)) == cplx(0.12, -0.0046));
}

TEST_CASE("rounding is idempotent and never worse than five percent") {
  CounterRng rng(17, RngPurpose::kEval);
  for (int i = 0; i < 3000; ++i) {
    const double mag = std::pow(10.0, rng.uniform(-6.0, 6.0));
    const double x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * mag;
    const double q = quantize_component(x);
    CAPTURE(x);
    CHECK(quantize_component(q) == q);
    CHECK(std::abs(q - x) <= 0.05 * std::abs(x) * (1 + 1e-12));
  }
}

TEST_CASE("non-finite values are rejected by quantize") {
  CHECK_THROWS_AS(quantize_component(std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
  CHECK_THROWS_AS(quantize_component(std::numeric_limits<double>::quiet_NaN()),
                  std::invalid_argument);
  CHECK_THROWS_AS(quantize(cplx(0.0, std::numeric_limits<double>::quiet_NaN())),
                  std::invalid_argument);
}

TEST_CASE("vocabulary keeps the most frequent values in order") {
  // 16-element toy corpus with hand-counted frequencies a:10, b:5, c:1.
  const cplx a(0.5, 0.0), b(-0.25, 0.75), c(0.12, -0.12);
  std::vector<cplx> values;
  for (int i = 0; i < 10; ++i) values.push_back(a);
  for (int i = 0; i < 5; ++i) values.push_back(b);
  values.push_back(c);
  const ChannelGrid grid = grid_from_values(values);

  const Vocabulary vocab = build_vocabulary(grid, 7);
  REQUIRE(vocab.size() == 7);
  REQUIRE(vocab.num_channel_entries() == 2);
  CHECK(vocab.channel_entries()[0].id == 5);
  CHECK(vocab.channel_entries()[0].centroid == a);
  CHECK(vocab.channel_entries()[0].count == 10);
  CHECK(vocab.channel_entries()[1].id == 6);
  CHECK(vocab.channel_entries()[1].centroid == b);
  CHECK(vocab.channel_entries()[1].count == 5);
}

TEST_CASE("count ties break lexicographically on re then im") {
  std::vector<cplx> values;
  for (int i = 0; i < 3; ++i) values.push_back(cplx(0.1, 0.0));
  for (int i = 0; i < 3; ++i) values.push_back(cplx(-0.2, 0.0));
  for (int i = 0; i < 3; ++i) values.push_back(cplx(0.1, -0.5));
  const Vocabulary vocab = build_vocabulary(grid_from_values(values), 16);
  REQUIRE(vocab.num_channel_entries() == 3);
  CHECK(vocab.channel_entries()[0].centroid == cplx(-0.2, 0.0));
  CHECK(vocab.channel_entries()[1].centroid == cplx(0.1, -0.5));
  CHECK(vocab.channel_entries()[2].centroid == cplx(0.1, 0.0));
}

TEST_CASE("degenerate corpora and sizes") {
  const ChannelGrid zeros = grid_from_values(std::vector<cplx>(8, cplx(0, 0)));
  const Vocabulary vocab = build_vocabulary(zeros, 6);
  REQUIRE(vocab.size() == 6);
  CHECK(vocab.channel_entries()[0].centroid == cplx(0, 0));

  // Fewer distinct values than requested: smaller vocabulary, not an error.
  const Vocabulary small = build_vocabulary(zeros, 512);
  CHECK(small.size() == 6);

  CHECK_THROWS_AS(build_vocabulary(zeros, 5), std::invalid_argument);
  CHECK_THROWS_AS(build_vocabulary(std::vector<const ChannelGrid*>{}, 16),
                  std::invalid_argument);
}

TEST_CASE("encode handles exact hits, misses, and ties") {
  std::vector<cplx> values;
  for (int i = 0; i < 4; ++i) values.push_back(cplx(0.0, 0.0));
  for (int i = 0; i < 2; ++i) values.push_back(cplx(0.2, 0.0));
  values.push_back(cplx(-1.5, 2.0));
  const Vocabulary vocab = build_vocabulary(grid_from_values(values), 16);
  REQUIRE(vocab.num_channel_entries() == 3);

  SUBCASE("in-vocabulary values hit their own entry") {
    CHECK(encode(cplx(0.2, 0.0), vocab) == 6);
    CHECK(encode(cplx(0.204, 0.0), vocab) == 6);  // quantizes onto the entry
    CHECK(decode(encode(cplx(-1.5, 2.0), vocab), vocab) == cplx(-1.5, 2.0));
  }

  SUBCASE("misses go to the geometrically nearest centroid") {
    CHECK(encode(cplx(0.17, 0.0), vocab) == 6);
    CHECK(encode(cplx(-1.0, 1.5), vocab) == 7);
    CHECK(encode(cplx(0.04, 0.0), vocab) == 5);
  }

  SUBCASE("equidistant values take the lower id") {
    // 0.1 sits exactly between the 0.0 and 0.2 centroids.
    CHECK(encode(cplx(0.1, 0.0), vocab) == 5);
  }

  SUBCASE("encode never yields specials and rejects empty vocabularies") {
    CounterRng rng(3, RngPurpose::kEval);
    for (int i = 0; i < 500; ++i) {
      const cplx v(rng.normal() * 10, rng.normal() * 10);
      CHECK(encode(v, vocab) >= kNumSpecialTokens);
    }
    const Vocabulary empty;
    CHECK_THROWS_AS(encode(cplx(1, 1), empty), std::invalid_argument);
  }

  SUBCASE("nearest lookup agrees with an exhaustive scan") {
    CounterRng rng(4, RngPurpose::kEval);
    for (int i = 0; i < 500; ++i) {
      const cplx v(rng.uniform(-3, 3), rng.uniform(-3, 3));
      const cplx q = quantize(v);
      std::uint32_t best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (const VocabEntry& e : vocab.channel_entries()) {
        const double d = std::norm(q - e.centroid);
        if (d < best_dist) {
          best_dist = d;
          best = e.id;
        }
      }
      CHECK(encode(v, vocab) == best);
    }
  }
}

TEST_CASE("decode rejects specials with a distinct error") {
  const Vocabulary vocab = build_vocabulary(grid_from_values({cplx(1, 1)}), 6);
  CHECK_THROWS_AS(decode(kMaskToken, vocab), special_token_error);
  CHECK_THROWS_AS(decode(kPadToken, vocab), special_token_error);
  CHECK_THROWS_AS(decode(99, vocab), std::out_of_range);
  CHECK(decode(5, vocab) == cplx(1, 1));
}

TEST_CASE("encode-decode relative error stays within five percent in vocabulary") {
  // Sweep a log grid of magnitudes; every swept value is placed in the
  // vocabulary first, so the only error is the two-digit rounding.
  std::vector<cplx> values;
  for (int e = -3; e <= 3; ++e)
    for (double m = 1.0; m < 10.0; m += 0.37)
      values.push_back(cplx(m * std::pow(10.0, e), -m * std::pow(10.0, e)));
  const Vocabulary vocab = build_vocabulary(grid_from_values(values), 4096);
  for (const cplx& v : values) {
    const cplx back = decode(encode(v, vocab), vocab);
    CHECK(std::abs(back.real() - v.real()) <= 0.05 * std::abs(v.real()));
    CHECK(std::abs(back.imag() - v.imag()) <= 0.05 * std::abs(v.imag()));
  }
}

TEST_CASE("vocabulary files round-trip bit-exactly") {
  const ChannelGrid grid = fading_grid(16, 40, 2, 77);
  const Vocabulary vocab = build_vocabulary(grid, 128);
  REQUIRE(vocab.num_channel_entries() > 10);

  const std::string path = "test_vocab.rcmv";
  save_vocabulary(vocab, path);
  const Vocabulary loaded = load_vocabulary(path);
  REQUIRE(loaded.size() == vocab.size());
  for (std::size_t k = 0; k < vocab.channel_entries().size(); ++k) {
    const VocabEntry& a = vocab.channel_entries()[k];
    const VocabEntry& b = loaded.channel_entries()[k];
    CHECK(a.id == b.id);
    CHECK(a.centroid == b.centroid);  // exact, shortest-decimal round trip
    CHECK(a.count == b.count);
  }

  const std::string path2 = "test_vocab2.rcmv";
  save_vocabulary(loaded, path2);
  std::ifstream f1(path), f2(path2);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("vocabulary loader rejects malformed files") {
  const std::string path = "test_vocab_bad.rcmv";
  auto write = [&](const std::string& text) {
    std::ofstream out(path);
    out << text;
  };
  write("WRONG 1 V=6\n5\t0\t0\t1\n");
  CHECK_THROWS_AS(load_vocabulary(path), data_format_error);
  write("RCMV 1 V=7\n5\t0\t0\t1\n");  // header promises 2 entries, file has 1
  CHECK_THROWS_AS(load_vocabulary(path), data_format_error);
  write("RCMV 1 V=6\n5\t0\t0\n");  // missing count field
  CHECK_THROWS_AS(load_vocabulary(path), data_format_error);
  write("RCMV 1 V=6\n6\t0\t0\t1\n");  // ids must start at 5
  CHECK_THROWS_AS(load_vocabulary(path), data_format_error);
  write("RCMV 1 V=6\n5\t0\tx\t1\n");  // non-numeric centroid
  CHECK_THROWS_AS(load_vocabulary(path), data_format_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_vocabulary("missing.rcmv"), data_format_error);
}

TEST_CASE("sequence assembly produces the documented layout") {
  const ChannelGrid grid = fading_grid(2, 3, 2, 5);
  const Vocabulary vocab = build_vocabulary(grid, 64);
  const SequenceExample seq = assemble_sequence(grid, {0, 1}, vocab);

  // 2 subcarriers x 2 frames x 2 antennas + 5 specials.
  REQUIRE(seq.size() == 13);
  CHECK(seq.token_ids[0] == kClsToken);
  const std::size_t sep_positions[] = {3, 6, 9, 12};
  for (std::size_t p : sep_positions) CHECK(seq.token_ids[p] == kSepToken);

  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.is_special[i]) {
      CHECK(seq.freq_ids[i] == 0);
      CHECK(seq.time_ids[i] == 0);
      CHECK(seq.antenna_ids[i] == 0);
    } else {
      CHECK(seq.freq_ids[i] >= 1);
      CHECK(seq.time_ids[i] >= 1);
      CHECK(seq.antenna_ids[i] >= 1);
      CHECK(seq.token_ids[i] >= kNumSpecialTokens);
    }
  }

  // Time-major grouping: first half slot 1, second half slot 2.
  CHECK(seq.time_ids[1] == 1);
  CHECK(seq.time_ids[5] == 1);
  CHECK(seq.time_ids[7] == 2);
  CHECK(seq.time_ids[11] == 2);
  CHECK(seq.antenna_ids[1] == 1);
  CHECK(seq.antenna_ids[4] == 2);
  CHECK(seq.freq_ids[1] == 1);
  CHECK(seq.freq_ids[2] == 2);

  // Channel tokens match a direct encode of the grid slice.
  CHECK(seq.token_ids[1] == encode(grid.at(0, 0, 0), vocab));
  CHECK(seq.token_ids[2] == encode(grid.at(1, 0, 0), vocab));
  CHECK(seq.token_ids[4] == encode(grid.at(0, 0, 1), vocab));
  CHECK(seq.token_ids[7] == encode(grid.at(0, 1, 0), vocab));
  CHECK(seq.token_ids[10] == encode(grid.at(0, 1, 1), vocab));
}

TEST_CASE("sequence assembly degrades gracefully to one antenna") {
  const ChannelGrid grid = fading_grid(4, 2, 1, 6);
  const Vocabulary vocab = build_vocabulary(grid, 64);
  const SequenceExample seq = assemble_sequence(grid, {0, 1}, vocab);
  CHECK(seq.size() == 2 * 4 + 3);
  CHECK(seq.token_ids[0] == kClsToken);
  CHECK(seq.token_ids[5] == kSepToken);
  CHECK(seq.token_ids[10] == kSepToken);
}

TEST_CASE("assembly is deterministic and injective across frame pairs") {
  const ChannelGrid grid = fading_grid(6, 8, 2, 7);
  const Vocabulary vocab = build_vocabulary(grid, 256);

  const SequenceExample a = assemble_sequence(grid, {2, 3}, vocab);
  const SequenceExample b = assemble_sequence(grid, {2, 3}, vocab);
  CHECK(a.token_ids == b.token_ids);
  CHECK(a.freq_ids == b.freq_ids);
  CHECK(a.time_ids == b.time_ids);
  CHECK(a.antenna_ids == b.antenna_ids);

  std::vector<std::vector<std::uint32_t>> seen;
  for (std::uint32_t t = 0; t + 1 < 8; ++t) {
    const SequenceExample s = assemble_sequence(grid, {t, t + 1}, vocab);
    for (const auto& prior : seen) CHECK(prior != s.token_ids);
    seen.push_back(s.token_ids);
  }

  CHECK_THROWS_AS(assemble_sequence(grid, {7, 8}, vocab), std::invalid_argument);
  CHECK_THROWS_AS(assemble_sequence(grid, {8, 0}, vocab), std::invalid_argument);
}

TEST_CASE("feature maps describe the layout and round-trip") {
  const ChannelGrid grid = fading_grid(4, 2, 2, 8);
  const FeatureMap map = build_feature_map(grid);
  REQUIRE(map.freq.size() == 5);
  REQUIRE(map.time.size() == 3);
  REQUIRE(map.antenna.size() == 3);
  CHECK(map.freq[1] == "0");
  CHECK(map.freq[2] == "90000");
  CHECK(map.time[1] == "0");
  CHECK(map.time[2] == "0.001");
  CHECK(map.antenna[1] == "A0");
  CHECK(map.antenna[2] == "A1");

  const std::string path = "test_featmap.tsv";
  save_feature_map(map, path);
  const FeatureMap loaded = load_feature_map(path);
  CHECK(loaded == map);
  std::remove(path.c_str());

  const ChannelGrid other = fading_grid(6, 2, 2, 8);
  CHECK(build_feature_map(other) != map);
  CHECK_THROWS_AS(load_feature_map("missing_featmap.tsv"), data_format_error);
}
