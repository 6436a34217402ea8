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

#ifndef RCM_MODEL_HPP
#define RCM_MODEL_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rcm/rng.hpp"
#include "rcm/tokenizer.hpp"

namespace rcm {

/// Row-major everywhere: rows are sequence positions, columns features,
/// matching the serialized layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  std::uint32_t num_layers = 12;
  std::uint32_t hidden_size = 768;
  std::uint32_t num_heads = 12;
  std::uint32_t ffn_size = 3072;
  std::uint32_t vocab_size = 0;
  std::uint32_t max_freq_features = 0;     // highest subcarrier feature id
  std::uint32_t max_time_features = 2;     // frame slots per sequence
  std::uint32_t max_antenna_features = 0;  // highest antenna feature id
  std::uint32_t max_seq_len = 0;
  double dropout_rate = 0.1;

  std::uint32_t head_size() const { return hidden_size / num_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Mat wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections, biases 1xH
  Mat ln1_gamma, ln1_beta;             // post-attention layer norm
  Mat w1, b1, w2, b2;                  // FFN
  Mat ln2_gamma, ln2_beta;             // post-FFN layer norm
};

/// All trainable tensors. Also reused as the gradient and Adam moment
/// holder since those mirror the parameter shapes exactly.
struct ModelParameters {
  ModelConfig config;
  Mat token_embedding;    // V x H
  Mat freq_embedding;     // (max_freq+1) x H, row 0 = "none"
  Mat time_embedding;     // (max_time+1) x H
  Mat antenna_embedding;  // (max_antenna+1) x H
  Mat emb_ln_gamma, emb_ln_beta;
  std::vector<LayerParams> layers;
  Mat pooler_w, pooler_b;
  Mat mlm_w, mlm_b;  // H x V, 1 x V (untied from token_embedding)
  Mat nfp_w, nfp_b;  // H x 2, 1 x 2; column 1 = "consecutive"

  /// Named tensors in the fixed serialization order.
  std::vector<std::pair<std::string, Mat*>> tensor_list();
  std::vector<std::pair<std::string, const Mat*>> tensor_list() const;

  /// Throws numeric_error naming the first non-finite tensor.
  void check_finite() const;
};

/// Allocates parameters for the config: weights from a truncated normal
/// (2 sigma clip), biases zero, layer-norm scale 1 offset 0. Every tensor
/// draws from its own counter stream, so the result is independent of
/// initialization order.
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed,
                                double init_std = 0.02);

struct LnCache {
  Mat xhat;                 // normalized input
  Eigen::VectorXd inv_std;  // per-row 1/sigma
};

struct LayerTrace {
  Mat input;                       // N x H states entering the layer
  Mat q, k, v;                     // projected, before head split
  std::vector<Mat> attn;           // per head N x N softmax rows (pre-dropout)
  std::vector<Mat> attn_prob_mask; // per-head dropout masks (empty if off)
  Mat attn_concat;            // N x H concatenated head outputs
  Mat attn_out;               // after output projection
  Mat attn_mask;              // dropout mask on attn_out (empty if off)
  Mat post_attn;              // residual sum, pre layer norm
  LnCache ln1;
  Mat post_attn_ln;
  Mat ffn_pre;                // N x F before activation
  Mat ffn_act;                // N x F after GELU
  Mat ffn_out;                // N x H
  Mat ffn_mask;               // dropout mask on ffn_out (empty if off)
  Mat post_ffn;               // residual sum, pre layer norm
  LnCache ln2;
  Mat out;                    // layer output
};

struct ForwardTrace {
  SequenceExample seq;
  Mat embed_sum;  // N x H before the embedding layer norm
  LnCache emb_ln;
  Mat embed_states;  // N x H entering layer 0 (after norm and dropout)
  Mat embed_mask;    // embedding dropout mask (empty if off)
  std::vector<LayerTrace> layers;
  Mat final_states;  // N x H
  bool has_pooled = false;
  Mat pooled_pre;  // 1 x H before tanh
  Mat pooled;      // 1 x H tanh-activated [CLS] summary
};

/// Exact GELU (erf form) and its derivative.
double gelu(double x);
double gelu_derivative(double x);

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per row.
Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LnCache* cache);

/// Embedding sum + norm for a sequence (ids validated against the tables).
Mat embed(const ModelParameters& params, const SequenceExample& seq);

/// Full forward pass. With training=true and a positive dropout rate the
/// dropout masks are drawn from `dropout_rng` (required) and recorded in
/// the trace so backward can replay them.
ForwardTrace forward(const ModelParameters& params, const SequenceExample& seq,
                     bool training = false, CounterRng* dropout_rng = nullptr);

/// Encoder applied to caller-provided states (used by tests that need to
/// bypass the embedding). The returned trace has an empty seq.
ForwardTrace encode_states(const ModelParameters& params, const Mat& states,
                           bool training = false, CounterRng* dropout_rng = nullptr);

/// Vocabulary logits of the selected positions, |positions| x V.
Mat mlm_logits(const ModelParameters& params, const ForwardTrace& trace,
               const std::vector<std::size_t>& positions);

/// Two logits from the pooled [CLS]; index 1 = "temporally consecutive".
/// Throws if the sequence does not start with [CLS].
std::array<double, 2> nfp_logits(const ModelParameters& params, const ForwardTrace& trace);

/// Reverse-mode gradients of a scalar loss whose derivative w.r.t. the MLM
/// logits (rows matching `mlm_positions`) and the NFP logits is given.
/// Either part may be empty. Gradients are accumulated (+=) into `grads`,
/// which must have the same shapes as `params`.
void backward(const ModelParameters& params, const ForwardTrace& trace,
              const std::vector<std::size_t>& mlm_positions, const Mat& d_mlm_logits,
              const Mat& d_nfp_logits, ModelParameters& grads);

/// Same, plus a loss derivative w.r.t. the pooled [CLS] vector itself
/// (1 x H, may be empty). External heads attached to the pooled output
/// route their gradient through here; it adds to the NFP contribution.
void backward(const ModelParameters& params, const ForwardTrace& trace,
              const std::vector<std::size_t>& mlm_positions, const Mat& d_mlm_logits,
              const Mat& d_nfp_logits, const Mat& d_pooled, ModelParameters& grads);

/// Zero-filled gradient holder matching the parameter shapes.
ModelParameters zeros_like(const ModelParameters& params);

/// Elementwise y += x over every tensor (shapes must match).
void accumulate(ModelParameters& into, const ModelParameters& from);

// Checkpoint file: magic "RCMP", version u32=1, the ModelConfig fields,
// then every tensor of tensor_list() in order as: u32 name length, name
// bytes, u32 rank=2, u32 rows, u32 cols, f64 row-major payload. Extra
// tensors (e.g. optimizer state) follow the same wire format after the
// model tensors.
void save_checkpoint(const ModelParameters& params, const std::string& path,
                     const std::vector<std::pair<std::string, Mat>>& extra = {});

struct Checkpoint {
  ModelParameters params;
  std::vector<std::pair<std::string, Mat>> extra;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rcm

#endif  // RCM_MODEL_HPP
