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

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rcm/chansim.hpp"
#include "rcm/model.hpp"
#include "rcm/rng.hpp"
#include "rcm/tokenizer.hpp"

namespace rcm {

// Knobs for the self-supervised pretraining loop.
struct PretrainConfig {
  std::uint32_t batch_size = 12;
  double mask_rate = 0.15;
  double mask_split_mask = 0.8;    // selected positions replaced by [MASK]
  double mask_split_random = 0.1;  // selected positions replaced by a random channel token
  double mask_split_keep = 0.1;    // selected positions left intact
  double nfp_negative_rate = 0.5;
  std::uint32_t negative_min_gap = 10;  // frames
  double learning_rate_peak = 5e-5;
  std::uint32_t warmup_steps = 0;
  std::uint32_t total_steps = 0;  // 0: derived from epochs and dataset size
  std::uint32_t epochs = 3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 0.0;  // global L2 cap; 0 disables clipping
  std::uint32_t checkpoint_every = 0;  // steps between checkpoint writes; 0 disables
  std::string checkpoint_path;         // target for periodic checkpoints
  std::uint32_t eval_examples = 64;    // examples scored for per-epoch accuracy
  std::uint32_t threads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MlmLabel {
  std::size_t position;
  std::uint32_t token;  // the original token id at that position
};

// One training sequence after masking, with its recovery targets and the
// next-frame label.
struct TrainingExample {
  SequenceExample input;
  std::vector<MlmLabel> mlm_labels;
  bool nfp_consecutive = true;
};

// Applies masked-channel selection to a sequence: each channel position is
// chosen with probability mask_rate, then replaced by [MASK], by a random
// channel token, or kept, per the configured split. Labels record originals.
TrainingExample make_mlm_example(const SequenceExample& seq, std::uint32_t vocab_size,
                                 const PretrainConfig& config, CounterRng& rng);

// Builds a two-frame sequence from the grid: frames (t0, t0+1) labeled
// consecutive, or (t0, j) with |j - t0| >= negative_min_gap labeled not.
// Throws std::invalid_argument when the grid cannot supply a negative.
TrainingExample make_nfp_pair(const ChannelGrid& grid, std::uint32_t t0,
                              const Vocabulary& vocab, const PretrainConfig& config,
                              CounterRng& rng);

struct BatchStats {
  double mlm_loss = 0.0;  // mean cross entropy over all masked positions
  double nfp_loss = 0.0;  // mean cross entropy over examples
  double total = 0.0;
  std::size_t masked_positions = 0;
};

// Loss over a batch; when grads is non-null the parameter gradients of the
// total loss are accumulated into it. dropout_rngs, when provided, must hold
// one stream per example and enables training-mode dropout.
BatchStats batch_loss(const ModelParameters& params, const std::vector<TrainingExample>& batch,
                      ModelParameters* grads, std::vector<CounterRng>* dropout_rngs = nullptr,
                      std::uint32_t threads = 1);

struct EvalStats {
  double mlm_top1 = 0.0;
  double nfp_accuracy = 0.0;
  std::size_t masked_positions = 0;
  std::size_t examples = 0;
};

// Greedy accuracy of both objectives on already-constructed examples.
EvalStats evaluate(const ModelParameters& params, const std::vector<TrainingExample>& batch,
                   std::uint32_t threads = 1);

// Piecewise-linear rate: 0 to peak over warmup_steps, then peak to 0 at
// total_steps.
double lr_schedule(std::uint64_t step, double peak, std::uint64_t warmup_steps,
                   std::uint64_t total_steps);
double lr_schedule(std::uint64_t step, const PretrainConfig& config);

struct AdamState {
  std::uint64_t step = 0;
  ModelParameters m;
  ModelParameters v;
};

// One Adam update with bias correction; state must be zero-initialized with
// the same shapes as params.
void adam_update(ModelParameters& params, const ModelParameters& grads, AdamState& state,
                 double lr, const PretrainConfig& config);

struct PretrainResult {
  ModelParameters params;
  std::uint64_t steps = 0;
  double final_mlm_loss = 0.0;
  double final_nfp_loss = 0.0;
  double eval_mlm_top1 = 0.0;     // from the last epoch's evaluation pass
  double eval_nfp_accuracy = 0.0;
  AdamState adam;  // optimizer state after the last update, for resuming
};

// Runs the full loop: example construction, deterministic shuffling, Adam
// with the warmup/decay schedule, per-step metrics ("step<TAB>lr<TAB>
// mlm_loss<TAB>nfp_loss<TAB>total"), per-epoch eval comment lines, and
// optional periodic checkpoints. Training starts from init when given,
// otherwise from fresh initialization. Passing `resume` (optimizer state
// saved from an earlier run) skips the steps already taken and continues
// the step counter, reproducing the uninterrupted run bit for bit.
PretrainResult pretrain(const std::vector<const ChannelGrid*>& dataset, const Vocabulary& vocab,
                        const ModelConfig& model_config, const PretrainConfig& config,
                        std::ostream* metrics = nullptr, const ModelParameters* init = nullptr,
                        const AdamState* resume = nullptr);

}  // namespace rcm
