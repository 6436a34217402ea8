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

#include "rcm/model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "rcm/binio.hpp"
#include "rcm/errors.hpp"

namespace rcm {
namespace {

constexpr double kLnEps = 1e-12;

void softmax_rows(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, CounterRng& rng) {
  Mat mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      mask(r, c) = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

// dy through a layer norm given its forward cache; accumulates the scale
// and offset gradients.
Mat layer_norm_backward(const Mat& dy, const LnCache& cache, const Mat& gamma, Mat& dgamma,
                        Mat& dbeta) {
  dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gamma.row(0).array();
  const Eigen::VectorXd m1 = dxhat.rowwise().mean();
  const Eigen::VectorXd m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Mat dx = dxhat;
  dx.colwise() -= m1;
  dx.array() -= cache.xhat.array().colwise() * m2.array();
  dx.array().colwise() *= cache.inv_std.array();
  return dx;
}

Mat softmax_backward(const Mat& probs, const Mat& dprobs) {
  const Eigen::VectorXd dot = (dprobs.array() * probs.array()).rowwise().sum();
  Mat ds = dprobs;
  ds.colwise() -= dot;
  ds.array() *= probs.array();
  return ds;
}

void write_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  write_pod(out, std::uint32_t(name.size()));
  out.write(name.data(), std::streamsize(name.size()));
  write_pod(out, std::uint32_t(2));
  write_pod(out, std::uint32_t(m.rows()));
  write_pod(out, std::uint32_t(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            std::streamsize(sizeof(double) * std::size_t(m.size())));
}

// Reads one tensor record; returns false on a clean end of file before the
// name length field.
bool read_tensor(std::istream& in, std::string& name, Mat& m) {
  std::uint32_t name_len = 0;
  in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
  if (in.gcount() == 0 && in.eof()) return false;
  if (!in) throw data_format_error("truncated tensor header in checkpoint");
  if (name_len == 0 || name_len > 4096)
    throw data_format_error("implausible tensor name length in checkpoint");
  name.resize(name_len);
  in.read(name.data(), name_len);
  if (!in) throw data_format_error("truncated tensor name in checkpoint");
  const auto rank = read_pod<std::uint32_t>(in, "tensor rank");
  if (rank != 2) throw data_format_error("checkpoint tensors must have rank 2");
  const auto rows = read_pod<std::uint32_t>(in, "tensor rows");
  const auto cols = read_pod<std::uint32_t>(in, "tensor cols");
  if (rows == 0 || cols == 0 || std::uint64_t(rows) * cols > (std::uint64_t(1) << 32))
    throw data_format_error("implausible tensor shape in checkpoint");
  m.resize(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          std::streamsize(sizeof(double) * std::size_t(m.size())));
  if (!in) throw data_format_error("truncated tensor payload in checkpoint");
  return true;
}

ModelParameters allocate_parameters(const ModelConfig& config) {
  config.validate();
  const auto H = Eigen::Index(config.hidden_size);
  const auto F = Eigen::Index(config.ffn_size);
  ModelParameters p;
  p.config = config;
  p.token_embedding.setZero(config.vocab_size, H);
  p.freq_embedding.setZero(config.max_freq_features + 1, H);
  p.time_embedding.setZero(config.max_time_features + 1, H);
  p.antenna_embedding.setZero(config.max_antenna_features + 1, H);
  p.emb_ln_gamma.setZero(1, H);
  p.emb_ln_beta.setZero(1, H);
  p.layers.resize(config.num_layers);
  for (LayerParams& l : p.layers) {
    l.wq.setZero(H, H);
    l.bq.setZero(1, H);
    l.wk.setZero(H, H);
    l.bk.setZero(1, H);
    l.wv.setZero(H, H);
    l.bv.setZero(1, H);
    l.wo.setZero(H, H);
    l.bo.setZero(1, H);
    l.ln1_gamma.setZero(1, H);
    l.ln1_beta.setZero(1, H);
    l.w1.setZero(H, F);
    l.b1.setZero(1, F);
    l.w2.setZero(F, H);
    l.b2.setZero(1, H);
    l.ln2_gamma.setZero(1, H);
    l.ln2_beta.setZero(1, H);
  }
  p.pooler_w.setZero(H, H);
  p.pooler_b.setZero(1, H);
  p.mlm_w.setZero(H, config.vocab_size);
  p.mlm_b.setZero(1, config.vocab_size);
  p.nfp_w.setZero(H, 2);
  p.nfp_b.setZero(1, 2);
  return p;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers == 0 || hidden_size == 0 || num_heads == 0 || ffn_size == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (vocab_size <= kNumSpecialTokens)
    throw std::invalid_argument("vocab_size must exceed the special tokens");
  if (hidden_size % num_heads != 0)
    throw std::invalid_argument("hidden_size must be divisible by num_heads");
  if (max_freq_features == 0 || max_time_features == 0 || max_antenna_features == 0)
    throw std::invalid_argument("domain feature counts must be positive");
  if (max_seq_len == 0) throw std::invalid_argument("max_seq_len must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("dropout_rate must be in [0, 1)");
}

std::vector<std::pair<std::string, Mat*>> ModelParameters::tensor_list() {
  std::vector<std::pair<std::string, Mat*>> list;
  list.emplace_back("token_embedding", &token_embedding);
  list.emplace_back("freq_embedding", &freq_embedding);
  list.emplace_back("time_embedding", &time_embedding);
  list.emplace_back("antenna_embedding", &antenna_embedding);
  list.emplace_back("embedding_ln.gamma", &emb_ln_gamma);
  list.emplace_back("embedding_ln.beta", &emb_ln_beta);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    LayerParams& l = layers[i];
    list.emplace_back(prefix + "attention.wq", &l.wq);
    list.emplace_back(prefix + "attention.bq", &l.bq);
    list.emplace_back(prefix + "attention.wk", &l.wk);
    list.emplace_back(prefix + "attention.bk", &l.bk);
    list.emplace_back(prefix + "attention.wv", &l.wv);
    list.emplace_back(prefix + "attention.bv", &l.bv);
    list.emplace_back(prefix + "attention.wo", &l.wo);
    list.emplace_back(prefix + "attention.bo", &l.bo);
    list.emplace_back(prefix + "attention.ln.gamma", &l.ln1_gamma);
    list.emplace_back(prefix + "attention.ln.beta", &l.ln1_beta);
    list.emplace_back(prefix + "ffn.w1", &l.w1);
    list.emplace_back(prefix + "ffn.b1", &l.b1);
    list.emplace_back(prefix + "ffn.w2", &l.w2);
    list.emplace_back(prefix + "ffn.b2", &l.b2);
    list.emplace_back(prefix + "ffn.ln.gamma", &l.ln2_gamma);
    list.emplace_back(prefix + "ffn.ln.beta", &l.ln2_beta);
  }
  list.emplace_back("pooler.w", &pooler_w);
  list.emplace_back("pooler.b", &pooler_b);
  list.emplace_back("mlm.w", &mlm_w);
  list.emplace_back("mlm.b", &mlm_b);
  list.emplace_back("nfp.w", &nfp_w);
  list.emplace_back("nfp.b", &nfp_b);
  return list;
}

std::vector<std::pair<std::string, const Mat*>> ModelParameters::tensor_list() const {
  auto mutable_list = const_cast<ModelParameters*>(this)->tensor_list();
  std::vector<std::pair<std::string, const Mat*>> list;
  list.reserve(mutable_list.size());
  for (auto& [name, mat] : mutable_list) list.emplace_back(name, mat);
  return list;
}

void ModelParameters::check_finite() const {
  for (const auto& [name, mat] : tensor_list())
    if (!mat->allFinite()) throw numeric_error("non-finite values in parameter " + name);
}

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed,
                                double init_std) {
  if (init_std < 0.0 || !std::isfinite(init_std))
    throw std::invalid_argument("init_std must be finite and non-negative");
  ModelParameters params = allocate_parameters(config);
  auto tensors = params.tensor_list();
  for (std::size_t idx = 0; idx < tensors.size(); ++idx) {
    auto& [name, mat] = tensors[idx];
    const std::string leaf = name.substr(name.rfind('.') + 1);
    if (leaf == "gamma") {
      mat->setOnes();
    } else if (leaf == "beta" || leaf[0] == 'b') {
      mat->setZero();
    } else {
      CounterRng rng(seed, RngPurpose::kWeightInit, idx);
      for (Eigen::Index r = 0; r < mat->rows(); ++r)
        for (Eigen::Index c = 0; c < mat->cols(); ++c)
          (*mat)(r, c) = rng.truncated_normal(init_std);
    }
  }
  return params;
}

double gelu(double x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
}

double gelu_derivative(double x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LnCache* cache) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  Mat centered = x;
  centered.colwise() -= mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + kLnEps).rsqrt();
  Mat xhat = centered;
  xhat.array().colwise() *= inv_std.array();
  Mat y = xhat.array().rowwise() * gamma.row(0).array();
  y.array().rowwise() += beta.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

namespace {

Mat embed_sum(const ModelParameters& params, const SequenceExample& seq) {
  const ModelConfig& cfg = params.config;
  const std::size_t n = seq.size();
  if (n == 0) throw std::invalid_argument("cannot embed an empty sequence");
  if (n > cfg.max_seq_len)
    throw std::invalid_argument("sequence length " + std::to_string(n) +
                                " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  Mat states(Eigen::Index(n), Eigen::Index(cfg.hidden_size));
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t tok = seq.token_ids[i];
    const std::uint32_t f = seq.freq_ids[i];
    const std::uint32_t t = seq.time_ids[i];
    const std::uint32_t a = seq.antenna_ids[i];
    if (tok >= cfg.vocab_size)
      throw std::out_of_range("token id " + std::to_string(tok) + " out of vocabulary range");
    if (f > cfg.max_freq_features || t > cfg.max_time_features || a > cfg.max_antenna_features)
      throw std::out_of_range("domain feature id out of range at position " + std::to_string(i));
    states.row(Eigen::Index(i)) = params.token_embedding.row(tok) +
                                  params.freq_embedding.row(f) + params.time_embedding.row(t) +
                                  params.antenna_embedding.row(a);
  }
  return states;
}

void run_encoder(const ModelParameters& params, ForwardTrace& trace, bool training,
                 CounterRng* dropout_rng) {
  const ModelConfig& cfg = params.config;
  const bool drop = training && cfg.dropout_rate > 0.0;
  if (drop && dropout_rng == nullptr)
    throw std::invalid_argument("training with dropout requires a dropout rng");
  const Eigen::Index n = trace.embed_states.rows();
  const Eigen::Index H = Eigen::Index(cfg.hidden_size);
  const Eigen::Index dh = Eigen::Index(cfg.head_size());
  const double scale = 1.0 / std::sqrt(double(dh));

  Mat states = trace.embed_states;
  trace.layers.resize(cfg.num_layers);
  for (std::uint32_t li = 0; li < cfg.num_layers; ++li) {
    const LayerParams& lp = params.layers[li];
    LayerTrace& lt = trace.layers[li];
    lt.input = states;

    lt.q = (states * lp.wq).rowwise() + lp.bq.row(0);
    lt.k = (states * lp.wk).rowwise() + lp.bk.row(0);
    lt.v = (states * lp.wv).rowwise() + lp.bv.row(0);

    lt.attn.resize(cfg.num_heads);
    if (drop) lt.attn_prob_mask.resize(cfg.num_heads);
    lt.attn_concat.resize(n, H);
    for (std::uint32_t h = 0; h < cfg.num_heads; ++h) {
      const auto qh = lt.q.middleCols(h * dh, dh);
      const auto kh = lt.k.middleCols(h * dh, dh);
      const auto vh = lt.v.middleCols(h * dh, dh);
      Mat probs = qh * kh.transpose() * scale;
      softmax_rows(probs);
      if (!probs.allFinite())
        throw numeric_error("non-finite attention in layer " + std::to_string(li) + " head " +
                            std::to_string(h));
      lt.attn[h] = probs;
      if (drop) {
        lt.attn_prob_mask[h] = dropout_mask(n, n, cfg.dropout_rate, *dropout_rng);
        probs.array() *= lt.attn_prob_mask[h].array();
      }
      lt.attn_concat.middleCols(h * dh, dh) = probs * vh;
    }
    lt.attn_out = (lt.attn_concat * lp.wo).rowwise() + lp.bo.row(0);
    if (drop) {
      lt.attn_mask = dropout_mask(n, H, cfg.dropout_rate, *dropout_rng);
      lt.post_attn = lt.input + (lt.attn_out.array() * lt.attn_mask.array()).matrix();
    } else {
      lt.post_attn = lt.input + lt.attn_out;
    }
    lt.post_attn_ln = layer_norm(lt.post_attn, lp.ln1_gamma, lp.ln1_beta, &lt.ln1);

    lt.ffn_pre = (lt.post_attn_ln * lp.w1).rowwise() + lp.b1.row(0);
    lt.ffn_act = lt.ffn_pre.unaryExpr([](double x) { return gelu(x); });
    lt.ffn_out = (lt.ffn_act * lp.w2).rowwise() + lp.b2.row(0);
    if (drop) {
      lt.ffn_mask = dropout_mask(n, H, cfg.dropout_rate, *dropout_rng);
      lt.post_ffn = lt.post_attn_ln + (lt.ffn_out.array() * lt.ffn_mask.array()).matrix();
    } else {
      lt.post_ffn = lt.post_attn_ln + lt.ffn_out;
    }
    lt.out = layer_norm(lt.post_ffn, lp.ln2_gamma, lp.ln2_beta, &lt.ln2);
    if (!lt.out.allFinite())
      throw numeric_error("non-finite states after layer " + std::to_string(li));
    states = lt.out;
  }
  trace.final_states = states;
}

void run_pooler(const ModelParameters& params, ForwardTrace& trace) {
  trace.has_pooled =
      !trace.seq.token_ids.empty() && trace.seq.token_ids[0] == kClsToken;
  if (!trace.has_pooled) return;
  trace.pooled_pre = (trace.final_states.row(0) * params.pooler_w) + params.pooler_b;
  trace.pooled = trace.pooled_pre.unaryExpr([](double x) { return std::tanh(x); });
}

}  // namespace

Mat embed(const ModelParameters& params, const SequenceExample& seq) {
  return layer_norm(embed_sum(params, seq), params.emb_ln_gamma, params.emb_ln_beta, nullptr);
}

ForwardTrace forward(const ModelParameters& params, const SequenceExample& seq, bool training,
                     CounterRng* dropout_rng) {
  ForwardTrace trace;
  trace.seq = seq;
  trace.embed_sum = embed_sum(params, seq);
  trace.embed_states =
      layer_norm(trace.embed_sum, params.emb_ln_gamma, params.emb_ln_beta, &trace.emb_ln);
  if (training && params.config.dropout_rate > 0.0) {
    if (dropout_rng == nullptr)
      throw std::invalid_argument("training with dropout requires a dropout rng");
    trace.embed_mask = dropout_mask(trace.embed_states.rows(), trace.embed_states.cols(),
                                    params.config.dropout_rate, *dropout_rng);
    trace.embed_states.array() *= trace.embed_mask.array();
  }
  run_encoder(params, trace, training, dropout_rng);
  run_pooler(params, trace);
  return trace;
}

ForwardTrace encode_states(const ModelParameters& params, const Mat& states, bool training,
                           CounterRng* dropout_rng) {
  if (states.cols() != Eigen::Index(params.config.hidden_size))
    throw std::invalid_argument("state width does not match hidden_size");
  ForwardTrace trace;
  trace.embed_states = states;
  run_encoder(params, trace, training, dropout_rng);
  trace.has_pooled = false;
  return trace;
}

Mat mlm_logits(const ModelParameters& params, const ForwardTrace& trace,
               const std::vector<std::size_t>& positions) {
  Mat picked(Eigen::Index(positions.size()), trace.final_states.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= std::size_t(trace.final_states.rows()))
      throw std::out_of_range("mlm position out of range");
    picked.row(Eigen::Index(i)) = trace.final_states.row(Eigen::Index(positions[i]));
  }
  return (picked * params.mlm_w).rowwise() + params.mlm_b.row(0);
}

std::array<double, 2> nfp_logits(const ModelParameters& params, const ForwardTrace& trace) {
  if (!trace.has_pooled)
    throw std::invalid_argument("next-frame logits need a sequence starting with [CLS]");
  const Mat logits = (trace.pooled * params.nfp_w) + params.nfp_b;
  return {logits(0, 0), logits(0, 1)};
}

void backward(const ModelParameters& params, const ForwardTrace& trace,
              const std::vector<std::size_t>& mlm_positions, const Mat& d_mlm_logits,
              const Mat& d_nfp_logits, ModelParameters& grads) {
  backward(params, trace, mlm_positions, d_mlm_logits, d_nfp_logits, Mat(), grads);
}

void backward(const ModelParameters& params, const ForwardTrace& trace,
              const std::vector<std::size_t>& mlm_positions, const Mat& d_mlm_logits,
              const Mat& d_nfp_logits, const Mat& d_pooled_extra, ModelParameters& grads) {
  const ModelConfig& cfg = params.config;
  const Eigen::Index n = trace.final_states.rows();
  const Eigen::Index H = Eigen::Index(cfg.hidden_size);
  const Eigen::Index dh = Eigen::Index(cfg.head_size());
  const double scale = 1.0 / std::sqrt(double(dh));

  Mat d_final = Mat::Zero(n, H);

  if (!mlm_positions.empty()) {
    if (d_mlm_logits.rows() != Eigen::Index(mlm_positions.size()) ||
        d_mlm_logits.cols() != Eigen::Index(cfg.vocab_size))
      throw std::invalid_argument("mlm logit gradient shape mismatch");
    Mat picked(Eigen::Index(mlm_positions.size()), H);
    for (std::size_t i = 0; i < mlm_positions.size(); ++i)
      picked.row(Eigen::Index(i)) = trace.final_states.row(Eigen::Index(mlm_positions[i]));
    grads.mlm_w += picked.transpose() * d_mlm_logits;
    grads.mlm_b += d_mlm_logits.colwise().sum();
    const Mat d_picked = d_mlm_logits * params.mlm_w.transpose();
    for (std::size_t i = 0; i < mlm_positions.size(); ++i)
      d_final.row(Eigen::Index(mlm_positions[i])) += d_picked.row(Eigen::Index(i));
  }

  Mat d_pooled;
  if (d_nfp_logits.size() > 0) {
    if (!trace.has_pooled)
      throw std::invalid_argument("nfp gradient without a pooled [CLS] in the trace");
    if (d_nfp_logits.rows() != 1 || d_nfp_logits.cols() != 2)
      throw std::invalid_argument("nfp logit gradient must be 1x2");
    grads.nfp_w += trace.pooled.transpose() * d_nfp_logits;
    grads.nfp_b += d_nfp_logits;
    d_pooled = d_nfp_logits * params.nfp_w.transpose();
  }
  if (d_pooled_extra.size() > 0) {
    if (!trace.has_pooled)
      throw std::invalid_argument("pooled gradient without a pooled [CLS] in the trace");
    if (d_pooled_extra.rows() != 1 || d_pooled_extra.cols() != H)
      throw std::invalid_argument("pooled gradient must be 1xH");
    if (d_pooled.size() > 0)
      d_pooled += d_pooled_extra;
    else
      d_pooled = d_pooled_extra;
  }
  if (d_pooled.size() > 0) {
    const Mat d_pre =
        (d_pooled.array() * (1.0 - trace.pooled.array().square())).matrix();
    grads.pooler_w += trace.final_states.row(0).transpose() * d_pre;
    grads.pooler_b += d_pre;
    d_final.row(0) += d_pre * params.pooler_w.transpose();
  }

  Mat d_states = d_final;
  for (std::uint32_t li = cfg.num_layers; li-- > 0;) {
    const LayerParams& lp = params.layers[li];
    const LayerTrace& lt = trace.layers[li];
    LayerParams& lg = grads.layers[li];

    // post-FFN layer norm
    const Mat d_post_ffn =
        layer_norm_backward(d_states, lt.ln2, lp.ln2_gamma, lg.ln2_gamma, lg.ln2_beta);

    // FFN branch
    Mat d_ffn_out = d_post_ffn;
    if (lt.ffn_mask.size() > 0) d_ffn_out.array() *= lt.ffn_mask.array();
    lg.w2 += lt.ffn_act.transpose() * d_ffn_out;
    lg.b2 += d_ffn_out.colwise().sum();
    Mat d_act = d_ffn_out * lp.w2.transpose();
    const Mat d_pre =
        (d_act.array() * lt.ffn_pre.unaryExpr([](double x) { return gelu_derivative(x); }).array())
            .matrix();
    lg.w1 += lt.post_attn_ln.transpose() * d_pre;
    lg.b1 += d_pre.colwise().sum();
    Mat d_post_attn_ln = d_pre * lp.w1.transpose();
    d_post_attn_ln += d_post_ffn;  // residual path

    // post-attention layer norm
    const Mat d_post_attn =
        layer_norm_backward(d_post_attn_ln, lt.ln1, lp.ln1_gamma, lg.ln1_gamma, lg.ln1_beta);

    // attention branch
    Mat d_attn_out = d_post_attn;
    if (lt.attn_mask.size() > 0) d_attn_out.array() *= lt.attn_mask.array();
    lg.wo += lt.attn_concat.transpose() * d_attn_out;
    lg.bo += d_attn_out.colwise().sum();
    const Mat d_concat = d_attn_out * lp.wo.transpose();

    Mat dq = Mat::Zero(n, H), dk = Mat::Zero(n, H), dv = Mat::Zero(n, H);
    for (std::uint32_t h = 0; h < cfg.num_heads; ++h) {
      const auto d_oh = d_concat.middleCols(h * dh, dh);
      const auto qh = lt.q.middleCols(h * dh, dh);
      const auto kh = lt.k.middleCols(h * dh, dh);
      const auto vh = lt.v.middleCols(h * dh, dh);
      const bool dropped = !lt.attn_prob_mask.empty();
      Mat probs_used = lt.attn[h];
      if (dropped) probs_used.array() *= lt.attn_prob_mask[h].array();
      Mat d_probs = d_oh * vh.transpose();
      dv.middleCols(h * dh, dh) = probs_used.transpose() * d_oh;
      if (dropped) d_probs.array() *= lt.attn_prob_mask[h].array();
      const Mat d_scores = softmax_backward(lt.attn[h], d_probs);
      dq.middleCols(h * dh, dh) = d_scores * kh * scale;
      dk.middleCols(h * dh, dh) = d_scores.transpose() * qh * scale;
    }
    lg.wq += lt.input.transpose() * dq;
    lg.bq += dq.colwise().sum();
    lg.wk += lt.input.transpose() * dk;
    lg.bk += dk.colwise().sum();
    lg.wv += lt.input.transpose() * dv;
    lg.bv += dv.colwise().sum();

    d_states = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
    d_states += d_post_attn;  // residual path
  }

  // embedding stack; only meaningful when the trace came from a sequence
  if (trace.seq.size() == 0) return;
  if (trace.embed_mask.size() > 0) d_states.array() *= trace.embed_mask.array();
  const Mat d_embed_sum = layer_norm_backward(d_states, trace.emb_ln, params.emb_ln_gamma,
                                              grads.emb_ln_gamma, grads.emb_ln_beta);
  for (std::size_t i = 0; i < trace.seq.size(); ++i) {
    const Eigen::Index row = Eigen::Index(i);
    grads.token_embedding.row(trace.seq.token_ids[i]) += d_embed_sum.row(row);
    grads.freq_embedding.row(trace.seq.freq_ids[i]) += d_embed_sum.row(row);
    grads.time_embedding.row(trace.seq.time_ids[i]) += d_embed_sum.row(row);
    grads.antenna_embedding.row(trace.seq.antenna_ids[i]) += d_embed_sum.row(row);
  }
}

ModelParameters zeros_like(const ModelParameters& params) {
  return allocate_parameters(params.config);
}

void accumulate(ModelParameters& into, const ModelParameters& from) {
  auto dst = into.tensor_list();
  const auto src = from.tensor_list();
  if (dst.size() != src.size()) throw std::invalid_argument("parameter structure mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].second->rows() != src[i].second->rows() ||
        dst[i].second->cols() != src[i].second->cols())
      throw std::invalid_argument("parameter shape mismatch for " + dst[i].first);
    *dst[i].second += *src[i].second;
  }
}

void save_checkpoint(const ModelParameters& params, const std::string& path,
                     const std::vector<std::pair<std::string, Mat>>& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_format_error("cannot open '" + path + "' for writing");
  out.write("RCMP", 4);
  write_pod(out, std::uint32_t(1));
  const ModelConfig& c = params.config;
  write_pod(out, c.num_layers);
  write_pod(out, c.hidden_size);
  write_pod(out, c.num_heads);
  write_pod(out, c.ffn_size);
  write_pod(out, c.vocab_size);
  write_pod(out, c.max_freq_features);
  write_pod(out, c.max_time_features);
  write_pod(out, c.max_antenna_features);
  write_pod(out, c.max_seq_len);
  write_pod(out, c.dropout_rate);
  for (const auto& [name, mat] : params.tensor_list()) write_tensor(out, name, *mat);
  for (const auto& [name, mat] : extra) write_tensor(out, name, mat);
  if (!out) throw data_format_error("short write while saving '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_format_error("cannot open '" + path + "' for reading");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "RCMP")
    throw data_format_error("'" + path + "' is not a model checkpoint");
  const auto version = read_pod<std::uint32_t>(in, "checkpoint version");
  if (version != 1)
    throw data_format_error("unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  c.num_layers = read_pod<std::uint32_t>(in, "num_layers");
  c.hidden_size = read_pod<std::uint32_t>(in, "hidden_size");
  c.num_heads = read_pod<std::uint32_t>(in, "num_heads");
  c.ffn_size = read_pod<std::uint32_t>(in, "ffn_size");
  c.vocab_size = read_pod<std::uint32_t>(in, "vocab_size");
  c.max_freq_features = read_pod<std::uint32_t>(in, "max_freq_features");
  c.max_time_features = read_pod<std::uint32_t>(in, "max_time_features");
  c.max_antenna_features = read_pod<std::uint32_t>(in, "max_antenna_features");
  c.max_seq_len = read_pod<std::uint32_t>(in, "max_seq_len");
  c.dropout_rate = read_pod<double>(in, "dropout_rate");
  try {
    c.validate();
  } catch (const std::invalid_argument& err) {
    throw data_format_error(std::string("invalid checkpoint config: ") + err.what());
  }

  Checkpoint ckpt;
  ckpt.params = allocate_parameters(c);
  for (auto& [expect_name, mat] : ckpt.params.tensor_list()) {
    std::string name;
    Mat loaded;
    if (!read_tensor(in, name, loaded))
      throw data_format_error("checkpoint ends before tensor " + expect_name);
    if (name != expect_name)
      throw data_format_error("checkpoint tensor order mismatch: expected " + expect_name +
                              ", found " + name);
    if (loaded.rows() != mat->rows() || loaded.cols() != mat->cols())
      throw data_format_error("checkpoint tensor " + name + " has the wrong shape");
    if (!loaded.allFinite())
      throw data_format_error("checkpoint tensor " + name + " contains non-finite values");
    *mat = std::move(loaded);
  }
  std::string name;
  Mat extra;
  while (read_tensor(in, name, extra)) ckpt.extra.emplace_back(name, std::move(extra));
  return ckpt;
}

}  // namespace rcm
