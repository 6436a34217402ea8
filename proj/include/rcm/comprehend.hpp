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

#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "rcm/chansim.hpp"
#include "rcm/model.hpp"
#include "rcm/pretrain.hpp"
#include "rcm/tokenizer.hpp"

namespace rcm {

// Per-token scores from the mask-one-at-a-time bidirectional likelihood.
struct ScoredChannel {
  std::vector<std::size_t> positions;  // scored channel positions, in order
  std::vector<double> log_probs;       // log probability of each true token
  double log_likelihood = 0.0;         // sum of log_probs
  double perplexity = 1.0;             // exp(-mean log prob), >= 1
};

// exp(-(1/N) * sum log p). Infinite when any probability is zero.
double perplexity_from_log_probs(const std::vector<double>& log_probs);

// Scores every channel position by masking it alone and reading the model's
// probability of the original token given the full surrounding context.
ScoredChannel pseudo_log_likelihood(const ModelParameters& params, const SequenceExample& seq,
                                    std::uint32_t threads = 1);

// Divides every coefficient by the normalizer (applied to raw values, before
// any quantization or encoding).
ChannelGrid scale_channel(const ChannelGrid& grid, double normalizer);

struct ScaleSearchConfig {
  double s_min = 0.0625;  // 2^-4
  double s_max = 16.0;    // 2^4
  std::uint32_t num_points = 33;
  bool log_spacing = true;
  bool refine = false;  // golden-section refinement around the grid minimum
  std::uint32_t eval_sequences = 16;
  std::uint32_t threads = 1;

  void validate() const;
};

struct ScalePoint {
  double scale;
  double perplexity;
};

struct ScaleSearchResult {
  double best_scale = 1.0;
  double best_perplexity = 0.0;
  std::vector<ScalePoint> trace;  // one entry per grid point, in grid order
};

// Sweeps normalizers over the configured grid, scoring the scaled channel
// against the source vocabulary, and returns the perplexity minimizer with
// the full (S, PP) trace. Throws numeric_error when every grid point is
// infinitely perplexing.
ScaleSearchResult find_scale(const ModelParameters& params, const Vocabulary& vocab,
                             const ChannelGrid& grid, const ScaleSearchConfig& config);

// Continues pretraining on already-scaled target grids. The target layout
// must match the source feature map; mismatches are rejected.
ModelParameters transfer_adapt(const ModelParameters& params, const Vocabulary& vocab,
                               const std::vector<const ChannelGrid*>& target,
                               const FeatureMap& source_map, const PretrainConfig& config,
                               std::ostream* metrics = nullptr);

struct Reconstruction {
  std::size_t position;
  std::uint32_t token_id;
  std::complex<double> value;
  double probability;  // softmax value of the predicted token
};

// Masks all given channel positions at once, runs one forward pass, and
// returns the most likely channel token per position with its decoded value.
// Ties break toward the lowest token id; specials are never predicted.
std::vector<Reconstruction> masked_reconstruct(const ModelParameters& params,
                                               const Vocabulary& vocab,
                                               const SequenceExample& seq,
                                               const std::vector<std::size_t>& positions);

// Re-generates every channel position left to right: mask, predict,
// substitute, continue. Returns the predicted complex values in sequence
// order of the channel positions.
std::vector<std::complex<double>> paraphrase_channel(const ModelParameters& params,
                                                     const Vocabulary& vocab,
                                                     const SequenceExample& seq);

}  // namespace rcm
