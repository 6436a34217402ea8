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

#ifndef RCM_DOWNSTREAM_HPP
#define RCM_DOWNSTREAM_HPP

#include <complex>
#include <cstdint>
#include <ostream>
#include <vector>

#include "rcm/model.hpp"
#include "rcm/pretrain.hpp"
#include "rcm/tokenizer.hpp"

namespace rcm {

// ---------------------------------------------------------------- detection

struct ContaminationReport {
  bool anomalous = false;
  // logit(not consecutive) - logit(consecutive); larger = more surely
  // anomalous. The hard decision is its sign: anomalous iff margin > 0.
  double logit_margin = 0.0;
};

/// Runs the next-frame head on a two-frame sequence and reports whether the
/// second frame looks out of place.
ContaminationReport detect_contamination(const ModelParameters& params,
                                         const SequenceExample& seq);

/// Masks every channel token of the second time frame and reconstructs it.
/// Returned values follow the sequence order of the second frame: all
/// subcarriers of the first antenna, then the next antenna, and so on.
std::vector<std::complex<double>> mitigate_contamination(const ModelParameters& params,
                                                         const Vocabulary& vocab,
                                                         const SequenceExample& seq);

// -------------------------------------------------------------- compression

/// Mean of the pooled [CLS] vectors over the batch, 1 x H. Every sequence
/// must start with [CLS]. Read-only over the model; parallel across
/// sequences.
Mat compress(const ModelParameters& params, const std::vector<SequenceExample>& batch,
             std::uint32_t threads = 1);

struct CompressionDims {
  std::uint64_t ns = 0;  // subcarriers
  std::uint64_t nt = 0;  // time frames
  std::uint64_t nr = 0;  // antennas
  std::uint64_t nc = 2;  // real components per value (2 for complex)
  std::uint64_t nb = 1;  // sequences combined per representation
  std::uint64_t h = 0;   // representation length
  void validate() const;
};

/// Exact reduced fraction.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  double value() const { return double(num) / double(den); }
  bool operator==(const Ratio&) const = default;
};

/// ns*nt*nr*nc*nb / h as an exact reduced ratio.
Ratio compression_ratio(const CompressionDims& dims);

// ------------------------------------------------------------ fingerprints

struct Fingerprint {
  Mat vector;                      // 1 x H mean of the pooled window
  std::size_t window_start = 0;    // index of the first sequence in the window
  std::uint32_t window_count = 8;  // sequences averaged
};

/// Element-wise mean of the pooled [CLS] vectors of `count` temporally
/// consecutive sequences. Throws if the window size differs from `count`.
Fingerprint fingerprint(const ModelParameters& params,
                        const std::vector<SequenceExample>& window,
                        std::size_t window_start, std::uint32_t count = 8);

struct ChartPoint {
  double x = 0.0;
  double y = 0.0;
  std::uint32_t label = 0;
  std::uint32_t size_rank = 0;  // temporal position within its label group
};

struct TsneConfig {
  double perplexity = 10.0;
  std::uint32_t iterations = 500;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double early_exaggeration = 4.0;
  std::uint32_t exaggeration_steps = 100;
  std::uint32_t momentum_switch_step = 250;  // momentum 0.5 before, 0.8 after
  void validate() const;
};

struct TsneResult {
  std::vector<ChartPoint> points;
  double initial_kl = 0.0;
  double final_kl = 0.0;
  std::vector<double> entropy_bits;  // achieved conditional entropy per point
};

/// Exact t-SNE to 2 dimensions. Per-point Gaussian bandwidths are found by
/// binary search until the conditional-distribution entropy matches
/// log2(perplexity) within 1e-3 bits; affinities are symmetrized and the
/// layout descends the KL divergence with early exaggeration and momentum.
/// Deterministic given the seed. Single-threaded by design.
TsneResult tsne_chart(const std::vector<Fingerprint>& fingerprints,
                      const std::vector<std::uint32_t>& labels, const TsneConfig& config);

// -------------------------------------------------------- attention profile

struct AttentionBucketShares {
  double freq_local = 0.0;     // same frame + antenna, within +-K subcarriers
  double cross_time = 0.0;     // other frame, same antenna
  double cross_antenna = 0.0;  // same frame, other antenna
  double special = 0.0;        // special tokens and everything else
};

struct HeadProfile {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  AttentionBucketShares shares;
};

/// Attention mass of each head, averaged over the channel-token query rows
/// and split into the four buckets above. Fractions per head sum to 1.
std::vector<HeadProfile> attention_domain_profile(const ModelParameters& params,
                                                  const SequenceExample& seq,
                                                  std::uint32_t subcarrier_radius = 5);

/// Bucket sizes of the layout itself, as fractions of all key positions.
/// Uniform attention produces exactly these shares for every head.
AttentionBucketShares attention_bucket_sizes(const SequenceExample& seq,
                                             std::uint32_t subcarrier_radius = 5);

// -------------------------------------------------------------- fine-tuning

struct LabeledExample {
  SequenceExample input;
  std::uint32_t label = 0;
};

struct FineTuneConfig {
  std::uint32_t batch_size = 12;
  double learning_rate_peak = 5e-5;
  std::uint32_t warmup_steps = 0;
  std::uint32_t total_steps = 0;  // 0: no updates, evaluate the fresh head
  std::uint32_t epochs = 3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 0.0;     // 0 disables clipping
  double holdout_fraction = 0.25;  // examples reserved for evaluation
  std::uint32_t threads = 1;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Backbone plus a task head on the pooled [CLS].
struct Classifier {
  ModelParameters params;
  Mat head_w;  // H x C
  Mat head_b;  // 1 x C
  std::uint32_t num_classes = 0;
};

/// Class logits, 1 x C. The sequence must start with [CLS].
Mat classify_logits(const Classifier& classifier, const SequenceExample& seq);

struct FineTuneResult {
  Classifier classifier;
  double holdout_accuracy = 0.0;
  std::size_t holdout_size = 0;
  std::uint64_t steps = 0;
};

/// Attaches a fresh head and jointly trains head and backbone with
/// cross-entropy on the labels. A deterministic fraction of the examples is
/// held out and scored with the greedy decision after training. Requires at
/// least two distinct labels.
FineTuneResult fine_tune_classifier(const ModelParameters& params,
                                    const std::vector<LabeledExample>& examples,
                                    std::uint32_t num_classes, const FineTuneConfig& config,
                                    std::ostream* metrics = nullptr);

}  // namespace rcm

#endif  // RCM_DOWNSTREAM_HPP
