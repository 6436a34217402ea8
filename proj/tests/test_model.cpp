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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"
#include "rcm/errors.hpp"

namespace {

rcm::ModelConfig tiny_config() {
  rcm::ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_size = 16;
  cfg.num_heads = 2;
  cfg.ffn_size = 32;
  cfg.vocab_size = 32;
  cfg.max_freq_features = 4;
  cfg.max_time_features = 2;
  cfg.max_antenna_features = 2;
  cfg.max_seq_len = 32;
  cfg.dropout_rate = 0.0;
  return cfg;
}

// A thirteen-position sequence shaped like two frames of two subcarriers
// over two antennas, with [CLS] and per-block [SEP] markers.
rcm::SequenceExample tiny_sequence() {
  rcm::SequenceExample seq;
  seq.token_ids = {2, 7, 9, 3, 11, 13, 3, 6, 21, 3, 30, 8, 3};
  seq.freq_ids = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  seq.time_ids = {0, 1, 1, 0, 1, 1, 0, 2, 2, 0, 2, 2, 0};
  seq.antenna_ids = {0, 1, 1, 0, 2, 2, 0, 1, 1, 0, 2, 2, 0};
  seq.is_special = {1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1};
  return seq;
}

struct LossSpec {
  std::vector<std::size_t> positions;
  std::vector<std::uint32_t> targets;
  int nfp_label = 1;
};

// Masked-token cross entropy averaged over positions plus the next-frame
// cross entropy. Optionally returns the logit-level gradients and the trace.
double model_loss(const rcm::ModelParameters& params, const rcm::SequenceExample& seq,
                  const LossSpec& spec, rcm::Mat* d_mlm = nullptr, rcm::Mat* d_nfp = nullptr,
                  rcm::ForwardTrace* trace_out = nullptr) {
  const rcm::ForwardTrace trace = rcm::forward(params, seq);
  const rcm::Mat logits = rcm::mlm_logits(params, trace, spec.positions);
  double loss = 0.0;
  if (d_mlm) d_mlm->setZero(logits.rows(), logits.cols());
  const double w = 1.0 / double(spec.positions.size());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += w * (lse - row(spec.targets[std::size_t(r)]));
    if (d_mlm) {
      d_mlm->row(r) = (w * (row.array() - lse).exp()).matrix();
      (*d_mlm)(r, spec.targets[std::size_t(r)]) -= w;
    }
  }
  const auto nfp = rcm::nfp_logits(params, trace);
  const double mx = std::max(nfp[0], nfp[1]);
  const double lse = mx + std::log(std::exp(nfp[0] - mx) + std::exp(nfp[1] - mx));
  loss += lse - nfp[std::size_t(spec.nfp_label)];
  if (d_nfp) {
    d_nfp->resize(1, 2);
    (*d_nfp)(0, 0) = std::exp(nfp[0] - lse);
    (*d_nfp)(0, 1) = std::exp(nfp[1] - lse);
    (*d_nfp)(0, std::size_t(spec.nfp_label)) -= 1.0;
  }
  if (trace_out) *trace_out = trace;
  return loss;
}

rcm::ModelParameters analytic_grads(const rcm::ModelParameters& params,
                                    const rcm::SequenceExample& seq, const LossSpec& spec) {
  rcm::Mat d_mlm, d_nfp;
  rcm::ForwardTrace trace;
  model_loss(params, seq, spec, &d_mlm, &d_nfp, &trace);
  rcm::ModelParameters grads = rcm::zeros_like(params);
  rcm::backward(params, trace, spec.positions, d_mlm, d_nfp, grads);
  return grads;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gelu matches reference values") {
  CHECK(rcm::gelu(0.0) == 0.0);
  CHECK(rcm::gelu(1.0) == doctest::Approx(0.84134474606854295).epsilon(1e-14));
  CHECK(rcm::gelu(-1.0) == doctest::Approx(-0.15865525393145705).epsilon(1e-14));
  CHECK(rcm::gelu(0.5) == doctest::Approx(0.34573123063700655).epsilon(1e-14));
  CHECK(rcm::gelu(2.5) == doctest::Approx(2.4844758366855597).epsilon(1e-14));
  CHECK(rcm::gelu(-3.0) == doctest::Approx(-0.0040496940948902836).epsilon(1e-13));
  CHECK(rcm::gelu_derivative(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(rcm::gelu_derivative(1.0) == doctest::Approx(1.0833154705876863).epsilon(1e-14));
  CHECK(rcm::gelu_derivative(-1.0) == doctest::Approx(-0.083315470587686298).epsilon(1e-13));

  // derivative agrees with a central difference of gelu itself
  for (double x : {-2.7, -1.1, -0.3, 0.0, 0.4, 1.9, 3.2}) {
    const double h = 1e-6;
    const double fd = (rcm::gelu(x + h) - rcm::gelu(x - h)) / (2.0 * h);
    CHECK(rel_err(fd, rcm::gelu_derivative(x)) < 1e-8);
  }
}

TEST_CASE("layer norm matches a hand-computed example") {
  rcm::Mat x(1, 4);
  x << 1.0, 2.0, 3.0, 4.0;
  rcm::Mat gamma = rcm::Mat::Constant(1, 4, 2.0);
  rcm::Mat beta = rcm::Mat::Constant(1, 4, 1.0);
  rcm::LnCache cache;
  const rcm::Mat y = rcm::layer_norm(x, gamma, beta, &cache);
  CHECK(y(0, 0) == doctest::Approx(-1.6832815729986743).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(0.10557280900044189).epsilon(1e-12));
  CHECK(y(0, 2) == doctest::Approx(1.8944271909995581).epsilon(1e-12));
  CHECK(y(0, 3) == doctest::Approx(3.6832815729986743).epsilon(1e-12));
  CHECK(cache.xhat(0, 0) == doctest::Approx(-1.3416407864993372).epsilon(1e-12));
  CHECK(cache.xhat(0, 3) == doctest::Approx(1.3416407864993372).epsilon(1e-12));

  // rows are standardized: mean 0, variance 1
  rcm::Mat wide(3, 8);
  rcm::CounterRng rng(11, rcm::RngPurpose::kEval, 0);
  for (Eigen::Index r = 0; r < wide.rows(); ++r)
    for (Eigen::Index c = 0; c < wide.cols(); ++c) wide(r, c) = rng.uniform(-3.0, 5.0);
  rcm::Mat ones = rcm::Mat::Ones(1, 8);
  rcm::Mat zeros = rcm::Mat::Zero(1, 8);
  const rcm::Mat norm = rcm::layer_norm(wide, ones, zeros, nullptr);
  for (Eigen::Index r = 0; r < norm.rows(); ++r) {
    CHECK(std::abs(norm.row(r).mean()) < 1e-12);
    CHECK(norm.row(r).array().square().mean() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("model config validation rejects bad shapes") {
  rcm::ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  rcm::ModelConfig bad = cfg;
  bad.hidden_size = 18;  // not divisible by num_heads = 2? it is; use heads 4
  bad.num_heads = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.vocab_size = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.num_layers = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.dropout_rate = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.max_seq_len = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter initialization follows the naming rules") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 5);

  for (const auto& [name, mat] : params.tensor_list()) {
    const std::string leaf = name.substr(name.rfind('.') + 1);
    if (leaf == "gamma") {
      CHECK((mat->array() == 1.0).all());
    } else if (leaf == "beta" || leaf[0] == 'b') {
      CHECK((mat->array() == 0.0).all());
    } else {
      CHECK((mat->array().abs() <= 0.04 + 1e-15).all());
      CHECK((mat->array() != 0.0).any());
    }
  }

  // deterministic in the seed, distinct across seeds
  const rcm::ModelParameters again = rcm::init_parameters(cfg, 5);
  const rcm::ModelParameters other = rcm::init_parameters(cfg, 6);
  CHECK(params.token_embedding == again.token_embedding);
  CHECK(params.layers[1].w1 == again.layers[1].w1);
  CHECK(params.token_embedding != other.token_embedding);

  // distinct tensors draw from distinct streams
  CHECK(params.layers[0].wq != params.layers[0].wk);
  CHECK(params.layers[0].wq != params.layers[1].wq);
}

TEST_CASE("tensor list covers every parameter exactly once") {
  const rcm::ModelConfig cfg = tiny_config();
  rcm::ModelParameters params = rcm::init_parameters(cfg, 1);
  auto list = params.tensor_list();
  CHECK(list.size() == 6 + 16 * cfg.num_layers + 6);
  CHECK(list.front().first == "token_embedding");
  CHECK(list[6].first == "layer0.attention.wq");
  CHECK(list.back().first == "nfp.b");

  std::set<std::string> names;
  std::set<const rcm::Mat*> ptrs;
  for (const auto& [name, mat] : list) {
    CHECK(names.insert(name).second);
    CHECK(ptrs.insert(mat).second);
  }
}

TEST_CASE("embedding sums the four tables and normalizes") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 3);
  const rcm::SequenceExample seq = tiny_sequence();
  const rcm::Mat out = rcm::embed(params, seq);
  REQUIRE(out.rows() == 13);
  REQUIRE(out.cols() == 16);

  // reference computation with an independent layer norm
  for (std::size_t i = 0; i < seq.size(); ++i) {
    Eigen::RowVectorXd sum = params.token_embedding.row(seq.token_ids[i]) +
                             params.freq_embedding.row(seq.freq_ids[i]) +
                             params.time_embedding.row(seq.time_ids[i]) +
                             params.antenna_embedding.row(seq.antenna_ids[i]);
    const double mean = sum.mean();
    double var = 0.0;
    for (Eigen::Index c = 0; c < sum.size(); ++c) var += (sum(c) - mean) * (sum(c) - mean);
    var /= double(sum.size());
    for (Eigen::Index c = 0; c < sum.size(); ++c) {
      const double xhat = (sum(c) - mean) / std::sqrt(var + 1e-12);
      const double want = xhat * params.emb_ln_gamma(0, c) + params.emb_ln_beta(0, c);
      CHECK(out(Eigen::Index(i), c) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("embedding rejects out-of-range ids and bad lengths") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 3);

  rcm::SequenceExample seq = tiny_sequence();
  seq.token_ids[4] = cfg.vocab_size;
  CHECK_THROWS_AS(rcm::embed(params, seq), std::out_of_range);

  seq = tiny_sequence();
  seq.freq_ids[2] = cfg.max_freq_features + 1;
  CHECK_THROWS_AS(rcm::embed(params, seq), std::out_of_range);

  seq = tiny_sequence();
  seq.antenna_ids[1] = cfg.max_antenna_features + 1;
  CHECK_THROWS_AS(rcm::embed(params, seq), std::out_of_range);

  rcm::SequenceExample empty;
  CHECK_THROWS_AS(rcm::embed(params, empty), std::invalid_argument);

  rcm::SequenceExample longer;
  for (std::uint32_t i = 0; i < cfg.max_seq_len + 1; ++i) {
    longer.token_ids.push_back(5);
    longer.freq_ids.push_back(1);
    longer.time_ids.push_back(1);
    longer.antenna_ids.push_back(1);
    longer.is_special.push_back(0);
  }
  CHECK_THROWS_AS(rcm::forward(params, longer), std::invalid_argument);
}

TEST_CASE("attention rows are probability vectors") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 9);
  const rcm::ForwardTrace trace = rcm::forward(params, tiny_sequence());
  REQUIRE(trace.layers.size() == cfg.num_layers);
  for (const rcm::LayerTrace& lt : trace.layers) {
    REQUIRE(lt.attn.size() == cfg.num_heads);
    for (const rcm::Mat& probs : lt.attn) {
      REQUIRE(probs.rows() == 13);
      REQUIRE(probs.cols() == 13);
      CHECK((probs.array() >= 0.0).all());
      for (Eigen::Index r = 0; r < probs.rows(); ++r)
        CHECK(std::abs(probs.row(r).sum() - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("single-position attention is exactly one") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 2);
  rcm::SequenceExample seq;
  seq.token_ids = {rcm::kClsToken};
  seq.freq_ids = {0};
  seq.time_ids = {0};
  seq.antenna_ids = {0};
  seq.is_special = {1};
  const rcm::ForwardTrace trace = rcm::forward(params, seq);
  for (const rcm::LayerTrace& lt : trace.layers)
    for (const rcm::Mat& probs : lt.attn) {
      REQUIRE(probs.size() == 1);
      CHECK(probs(0, 0) == 1.0);
    }
  CHECK(trace.has_pooled);
}

TEST_CASE("encoder with zeroed output projections is an identity on normalized states") {
  rcm::ModelConfig cfg = tiny_config();
  cfg.dropout_rate = 0.0;
  rcm::ModelParameters params = rcm::init_parameters(cfg, 21);
  for (rcm::LayerParams& l : params.layers) {
    l.wo.setZero();
    l.bo.setZero();
    l.w2.setZero();
    l.b2.setZero();
  }

  rcm::Mat states(7, 16);
  rcm::CounterRng rng(4, rcm::RngPurpose::kEval, 1);
  for (Eigen::Index r = 0; r < states.rows(); ++r)
    for (Eigen::Index c = 0; c < states.cols(); ++c) states(r, c) = rng.normal();
  // standardize each row so the layer norms become near-identities
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    const double mean = states.row(r).mean();
    states.row(r).array() -= mean;
    states.row(r) /= std::sqrt(states.row(r).array().square().mean());
  }

  const rcm::ForwardTrace trace = rcm::encode_states(params, states);
  CHECK(!trace.has_pooled);
  CHECK((trace.final_states - states).array().abs().maxCoeff() < 1e-9);
}

TEST_CASE("forward is equivariant under position permutations") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 14);
  const rcm::SequenceExample seq = tiny_sequence();
  const rcm::ForwardTrace base = rcm::forward(params, seq);

  std::vector<std::size_t> perm(seq.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rcm::CounterRng rng(8, rcm::RngPurpose::kShuffle, 0);
  rng.shuffle(perm);

  rcm::SequenceExample shuffled;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.token_ids.push_back(seq.token_ids[perm[i]]);
    shuffled.freq_ids.push_back(seq.freq_ids[perm[i]]);
    shuffled.time_ids.push_back(seq.time_ids[perm[i]]);
    shuffled.antenna_ids.push_back(seq.antenna_ids[perm[i]]);
    shuffled.is_special.push_back(seq.is_special[perm[i]]);
  }
  const rcm::ForwardTrace moved = rcm::forward(params, shuffled);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto want = base.final_states.row(Eigen::Index(perm[i]));
    const auto got = moved.final_states.row(Eigen::Index(i));
    CHECK((want - got).array().abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("forward is deterministic and dropout is seeded") {
  rcm::ModelConfig cfg = tiny_config();
  const rcm::SequenceExample seq = tiny_sequence();

  const rcm::ModelParameters params = rcm::init_parameters(cfg, 31);
  const rcm::ForwardTrace a = rcm::forward(params, seq);
  const rcm::ForwardTrace b = rcm::forward(params, seq);
  CHECK(a.final_states == b.final_states);
  CHECK(a.pooled == b.pooled);

  cfg.dropout_rate = 0.5;
  const rcm::ModelParameters dp = rcm::init_parameters(cfg, 31);
  rcm::CounterRng r1(7, rcm::RngPurpose::kDropout, 0);
  rcm::CounterRng r2(7, rcm::RngPurpose::kDropout, 0);
  rcm::CounterRng r3(7, rcm::RngPurpose::kDropout, 1);
  const rcm::ForwardTrace t1 = rcm::forward(dp, seq, true, &r1);
  const rcm::ForwardTrace t2 = rcm::forward(dp, seq, true, &r2);
  const rcm::ForwardTrace t3 = rcm::forward(dp, seq, true, &r3);
  CHECK(t1.final_states == t2.final_states);
  CHECK(t1.final_states != t3.final_states);

  // training mode records masks with inverted-dropout scaling
  REQUIRE(t1.embed_mask.size() > 0);
  CHECK(((t1.embed_mask.array() == 0.0) || (t1.embed_mask.array() == 2.0)).all());
  CHECK((t1.embed_mask.array() == 0.0).any());

  // the stored attention rows stay clean probability vectors under dropout
  for (const rcm::LayerTrace& lt : t1.layers) {
    REQUIRE(lt.attn_prob_mask.size() == cfg.num_heads);
    for (const rcm::Mat& probs : lt.attn)
      for (Eigen::Index r = 0; r < probs.rows(); ++r)
        CHECK(std::abs(probs.row(r).sum() - 1.0) < 1e-6);
  }

  // evaluation mode needs no rng and applies no masks
  const rcm::ForwardTrace ev = rcm::forward(dp, seq);
  CHECK(ev.embed_mask.size() == 0);
  CHECK_THROWS_AS(rcm::forward(dp, seq, true, nullptr), std::invalid_argument);
}

TEST_CASE("mlm and nfp heads reduce to their biases on a zeroed model") {
  const rcm::ModelConfig cfg = tiny_config();
  // zero stddev zeroes every weight while the layer norm scales stay at one
  rcm::ModelParameters params = rcm::init_parameters(cfg, 0, 0.0);
  for (Eigen::Index v = 0; v < params.mlm_b.cols(); ++v) params.mlm_b(0, v) = double(v) * 0.25;
  params.nfp_b(0, 0) = 0.3;
  params.nfp_b(0, 1) = -0.2;

  const rcm::SequenceExample seq = tiny_sequence();
  const rcm::ForwardTrace trace = rcm::forward(params, seq);
  const rcm::Mat logits = rcm::mlm_logits(params, trace, {0, 5, 12});
  REQUIRE(logits.rows() == 3);
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    for (Eigen::Index v = 0; v < logits.cols(); ++v)
      CHECK(logits(r, v) == double(v) * 0.25);

  const auto nfp = rcm::nfp_logits(params, trace);
  CHECK(nfp[0] == 0.3);
  CHECK(nfp[1] == -0.2);

  // a sequence that does not begin with [CLS] has no pooled output
  rcm::SequenceExample headless = seq;
  headless.token_ids[0] = 7;
  headless.is_special[0] = 0;
  const rcm::ForwardTrace hl = rcm::forward(params, headless);
  CHECK(!hl.has_pooled);
  CHECK_THROWS_AS(rcm::nfp_logits(params, hl), std::invalid_argument);

  CHECK_THROWS_AS(rcm::mlm_logits(params, trace, {13}), std::out_of_range);
}

TEST_CASE("non-finite parameters are reported during the forward pass") {
  const rcm::ModelConfig cfg = tiny_config();
  rcm::ModelParameters params = rcm::init_parameters(cfg, 1);
  params.layers[0].wq(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rcm::forward(params, tiny_sequence()), rcm::numeric_error);
  CHECK_THROWS_AS(params.check_finite(), rcm::numeric_error);
}

TEST_CASE("finite differences confirm every parameter gradient") {
  const rcm::ModelConfig cfg = tiny_config();
  rcm::ModelParameters params = rcm::init_parameters(cfg, 17);
  const rcm::SequenceExample seq = tiny_sequence();
  LossSpec spec;
  spec.positions = {0, 1, 5, 10};
  spec.targets = {5, 17, 23, 31};
  spec.nfp_label = 1;

  const rcm::ModelParameters grads = analytic_grads(params, seq, spec);

  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_at;
  auto tensors = params.tensor_list();
  auto grad_tensors = grads.tensor_list();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    rcm::Mat* mat = tensors[t].second;
    const rcm::Mat* gmat = grad_tensors[t].second;
    const Eigen::Index total = mat->size();
    const Eigen::Index step = std::max<Eigen::Index>(1, total / 48);
    for (Eigen::Index j = 0; j < total; j += step) {
      const double saved = mat->data()[j];
      mat->data()[j] = saved + h;
      const double up = model_loss(params, seq, spec);
      mat->data()[j] = saved - h;
      const double down = model_loss(params, seq, spec);
      mat->data()[j] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = rel_err(fd, gmat->data()[j]);
      if (err > worst) {
        worst = err;
        worst_at = tensors[t].first + "[" + std::to_string(j) + "]";
      }
    }
  }
  CAPTURE(worst_at);
  CHECK(worst <= 1e-4);
}

TEST_CASE("backward leaves untouched embeddings with zero gradient") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 23);
  const rcm::SequenceExample seq = tiny_sequence();
  LossSpec spec;
  spec.positions = {1, 4};
  spec.targets = {6, 7};
  const rcm::ModelParameters grads = analytic_grads(params, seq, spec);

  // token ids absent from the sequence and from the targets
  for (std::uint32_t tok : {0u, 1u, 4u, 10u, 29u})
    CHECK((grads.token_embedding.row(tok).array() == 0.0).all());
  // every used token row received some gradient
  for (std::uint32_t tok : {2u, 3u, 7u, 9u, 11u})
    CHECK((grads.token_embedding.row(tok).array() != 0.0).any());
  // unused freq id 3..4 rows stay zero
  CHECK((grads.freq_embedding.row(3).array() == 0.0).all());
  CHECK((grads.freq_embedding.row(4).array() == 0.0).all());
}

TEST_CASE("zero upstream gradients produce zero parameter gradients") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 29);
  const rcm::ForwardTrace trace = rcm::forward(params, tiny_sequence());
  rcm::ModelParameters grads = rcm::zeros_like(params);
  rcm::backward(params, trace, {}, rcm::Mat(), rcm::Mat(), grads);
  for (const auto& [name, mat] : grads.tensor_list()) {
    CAPTURE(name);
    CHECK((mat->array() == 0.0).all());
  }
}

TEST_CASE("gradient accumulation adds tensors elementwise") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::SequenceExample seq = tiny_sequence();
  LossSpec spec;
  spec.positions = {2};
  spec.targets = {9};
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 37);
  const rcm::ModelParameters once = analytic_grads(params, seq, spec);
  rcm::ModelParameters sum = rcm::zeros_like(params);
  rcm::accumulate(sum, once);
  rcm::accumulate(sum, once);
  CHECK((sum.mlm_w - 2.0 * once.mlm_w).array().abs().maxCoeff() == 0.0);
  CHECK((sum.layers[0].wq - 2.0 * once.layers[0].wq).array().abs().maxCoeff() == 0.0);

  rcm::ModelConfig other = cfg;
  other.hidden_size = 32;
  other.num_heads = 4;
  rcm::ModelParameters incompatible = rcm::init_parameters(other, 1);
  CHECK_THROWS_AS(rcm::accumulate(sum, incompatible), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip parameters and optimizer tensors") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 41);
  const std::string path = temp_path("rcm_test_model.ckpt");

  rcm::Mat step(1, 1);
  step(0, 0) = 1234.0;
  rcm::Mat moment = rcm::Mat::Constant(2, 3, 0.125);
  rcm::save_checkpoint(params, path, {{"opt.step", step}, {"opt.m.sample", moment}});

  const rcm::Checkpoint loaded = rcm::load_checkpoint(path);
  CHECK(loaded.params.config == cfg);
  const auto want = params.tensor_list();
  const auto got = loaded.params.tensor_list();
  REQUIRE(want.size() == got.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CAPTURE(want[i].first);
    CHECK(*want[i].second == *got[i].second);
  }
  REQUIRE(loaded.extra.size() == 2);
  CHECK(loaded.extra[0].first == "opt.step");
  CHECK(loaded.extra[0].second == step);
  CHECK(loaded.extra[1].first == "opt.m.sample");
  CHECK(loaded.extra[1].second == moment);

  // saving the loaded model again reproduces the file byte for byte
  const std::string path2 = temp_path("rcm_test_model2.ckpt");
  rcm::save_checkpoint(loaded.params, path2, loaded.extra);
  CHECK(slurp(path) == slurp(path2));

  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("malformed checkpoints are rejected") {
  const rcm::ModelConfig cfg = tiny_config();
  const rcm::ModelParameters params = rcm::init_parameters(cfg, 43);
  const std::string path = temp_path("rcm_test_model_bad.ckpt");
  rcm::save_checkpoint(params, path);
  const std::string bytes = slurp(path);

  auto write_bytes = [&](const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), std::streamsize(data.size()));
  };

  CHECK_THROWS_AS(rcm::load_checkpoint(temp_path("rcm_no_such_file.ckpt")),
                  rcm::data_format_error);

  std::string bad = bytes;
  bad[0] = 'X';
  write_bytes(bad);
  CHECK_THROWS_AS(rcm::load_checkpoint(path), rcm::data_format_error);

  bad = bytes;
  bad[4] = 9;  // unsupported version
  write_bytes(bad);
  CHECK_THROWS_AS(rcm::load_checkpoint(path), rcm::data_format_error);

  write_bytes(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(rcm::load_checkpoint(path), rcm::data_format_error);

  write_bytes(bytes.substr(0, 40));
  CHECK_THROWS_AS(rcm::load_checkpoint(path), rcm::data_format_error);

  std::remove(path.c_str());
}

TEST_CASE("external pooled gradients flow through the encoder") {
  const rcm::ModelConfig cfg = tiny_config();
  rcm::ModelParameters params = rcm::init_parameters(cfg, 29);
  const rcm::SequenceExample seq = tiny_sequence();

  // loss = sum(pooled .* c) for a fixed probe vector
  rcm::Mat c(1, 16);
  rcm::CounterRng rng(4, rcm::RngPurpose::kEval, 99);
  for (Eigen::Index j = 0; j < c.size(); ++j) c(0, j) = rng.normal();
  auto loss_of = [&](const rcm::ModelParameters& p) {
    return (rcm::forward(p, seq).pooled.array() * c.array()).sum();
  };

  rcm::ModelParameters grads = rcm::zeros_like(params);
  const rcm::ForwardTrace trace = rcm::forward(params, seq);
  rcm::backward(params, trace, {}, rcm::Mat(), rcm::Mat(), c, grads);

  // the pooled path never touches the output heads
  CHECK(grads.mlm_w.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.nfp_w.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.pooler_w.cwiseAbs().maxCoeff() > 0.0);

  const double h = 1e-5;
  double worst = 0.0;
  auto tensors = params.tensor_list();
  auto grad_tensors = grads.tensor_list();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    rcm::Mat* mat = tensors[t].second;
    const Eigen::Index total = mat->size();
    const Eigen::Index step = std::max<Eigen::Index>(1, total / 16);
    for (Eigen::Index j = 0; j < total; j += step) {
      const double saved = mat->data()[j];
      mat->data()[j] = saved + h;
      const double up = loss_of(params);
      mat->data()[j] = saved - h;
      const double down = loss_of(params);
      mat->data()[j] = saved;
      worst = std::max(worst, rel_err((up - down) / (2.0 * h),
                                      grad_tensors[t].second->data()[j]));
    }
  }
  CHECK(worst <= 1e-4);

  // adding the probe via d_pooled equals folding it through the NFP head
  rcm::Mat d_nfp(1, 2);
  d_nfp(0, 0) = 0.7;
  d_nfp(0, 1) = -0.4;
  rcm::ModelParameters via_nfp = rcm::zeros_like(params);
  rcm::backward(params, trace, {}, rcm::Mat(), d_nfp, via_nfp);
  rcm::ModelParameters via_pooled = rcm::zeros_like(params);
  const rcm::Mat folded = d_nfp * params.nfp_w.transpose();
  rcm::backward(params, trace, {}, rcm::Mat(), rcm::Mat(), folded, via_pooled);
  CHECK(via_pooled.nfp_w.cwiseAbs().maxCoeff() == 0.0);
  CHECK((via_pooled.pooler_w - via_nfp.pooler_w).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((via_pooled.token_embedding - via_nfp.token_embedding).cwiseAbs().maxCoeff() <=
        1e-15);

  // shape and trace guards
  rcm::Mat wide(1, 17);
  wide.setZero();
  CHECK_THROWS_AS(rcm::backward(params, trace, {}, rcm::Mat(), rcm::Mat(), wide, grads),
                  std::invalid_argument);
  rcm::SequenceExample headless = seq;
  headless.token_ids[0] = 9;
  const rcm::ForwardTrace no_cls = rcm::forward(params, headless);
  CHECK_THROWS_AS(rcm::backward(params, no_cls, {}, rcm::Mat(), rcm::Mat(), c, grads),
                  std::invalid_argument);
}
