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

#include "rcm/comprehend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rcm/errors.hpp"
#include "rcm/parallel.hpp"

namespace rcm {
namespace {

// Log softmax probability of one vocabulary entry in a logit row.
double log_prob_of(const Eigen::Ref<const Eigen::RowVectorXd>& logits, std::uint32_t token) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits(token) - lse;
}

// Highest-probability channel token (ids past the specials); the first
// maximum wins, so ties resolve toward the lowest id.
std::pair<std::uint32_t, double> best_channel_token(
    const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  const double mx = logits.maxCoeff();
  const Eigen::ArrayXd probs = (logits.array() - mx).exp();
  const double denom = probs.sum();
  Eigen::Index best = kNumSpecialTokens;
  for (Eigen::Index v = kNumSpecialTokens + 1; v < logits.size(); ++v)
    if (probs(v) > probs(best)) best = v;
  return {std::uint32_t(best), probs(best) / denom};
}

std::vector<std::size_t> channel_positions(const SequenceExample& seq) {
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (!seq.is_special[i]) positions.push_back(i);
  return positions;
}

}  // namespace

double perplexity_from_log_probs(const std::vector<double>& log_probs) {
  if (log_probs.empty())
    throw std::invalid_argument("perplexity needs at least one scored position");
  double sum = 0.0;
  for (double lp : log_probs) {
    if (std::isnan(lp)) throw numeric_error("log probability is not a number");
    sum += lp;
  }
  return std::exp(-sum / double(log_probs.size()));
}

ScoredChannel pseudo_log_likelihood(const ModelParameters& params, const SequenceExample& seq,
                                    std::uint32_t threads) {
  ScoredChannel scored;
  scored.positions = channel_positions(seq);
  if (scored.positions.empty())
    throw std::invalid_argument("sequence holds no channel tokens to score");
  scored.log_probs.resize(scored.positions.size());

  parallel_shards(scored.positions.size(), threads, [&](std::size_t lo, std::size_t hi) {
    SequenceExample masked = seq;
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t pos = scored.positions[i];
      const std::uint32_t original = masked.token_ids[pos];
      masked.token_ids[pos] = kMaskToken;
      const ForwardTrace trace = forward(params, masked);
      const Mat logits = mlm_logits(params, trace, {pos});
      scored.log_probs[i] = log_prob_of(logits.row(0), original);
      masked.token_ids[pos] = original;
    }
  });

  for (double lp : scored.log_probs) {
    if (std::isnan(lp)) throw numeric_error("log probability is not a number");
    scored.log_likelihood += lp;
  }
  scored.perplexity = perplexity_from_log_probs(scored.log_probs);
  return scored;
}

ChannelGrid scale_channel(const ChannelGrid& grid, double normalizer) {
  if (!(normalizer > 0.0) || !std::isfinite(normalizer))
    throw std::invalid_argument("normalizer must be positive and finite");
  ChannelGrid scaled = grid;
  scale_grid(scaled, 1.0 / normalizer);
  return scaled;
}

void ScaleSearchConfig::validate() const {
  if (!(s_min > 0.0) || !(s_max > 0.0) || !(s_min < s_max))
    throw std::invalid_argument("scale search needs 0 < s_min < s_max");
  if (num_points < 3) throw std::invalid_argument("scale search needs at least 3 grid points");
  if (eval_sequences == 0)
    throw std::invalid_argument("scale search needs at least one sequence");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
}

namespace {

// Mean perplexity of the first eval_sequences consecutive frame pairs of the
// scaled grid, encoded with the source vocabulary.
double mean_perplexity_at(const ModelParameters& params, const Vocabulary& vocab,
                          const ChannelGrid& grid, double normalizer,
                          const ScaleSearchConfig& config) {
  const ChannelGrid scaled = scale_channel(grid, normalizer);
  const std::uint32_t pairs =
      std::min<std::uint32_t>(config.eval_sequences, grid.meta.num_frames - 1);
  double total = 0.0;
  for (std::uint32_t t = 0; t < pairs; ++t) {
    const SequenceExample seq = assemble_sequence(scaled, {t, t + 1}, vocab);
    total += pseudo_log_likelihood(params, seq, config.threads).perplexity;
  }
  return total / double(pairs);
}

}  // namespace

ScaleSearchResult find_scale(const ModelParameters& params, const Vocabulary& vocab,
                             const ChannelGrid& grid, const ScaleSearchConfig& config) {
  config.validate();
  if (grid.meta.num_frames < 2)
    throw std::invalid_argument("scale search needs at least one frame pair");

  ScaleSearchResult result;
  result.trace.reserve(config.num_points);
  for (std::uint32_t i = 0; i < config.num_points; ++i) {
    const double frac = double(i) / double(config.num_points - 1);
    const double s = config.log_spacing
                         ? std::exp(std::log(config.s_min) +
                                    frac * (std::log(config.s_max) - std::log(config.s_min)))
                         : config.s_min + frac * (config.s_max - config.s_min);
    result.trace.push_back({s, mean_perplexity_at(params, vocab, grid, s, config)});
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.trace.size(); ++i)
    if (result.trace[i].perplexity < result.trace[best].perplexity) best = i;
  if (std::isinf(result.trace[best].perplexity))
    throw numeric_error(
        "perplexity is infinite at every scale; the data is outside the model's reach");
  result.best_scale = result.trace[best].scale;
  result.best_perplexity = result.trace[best].perplexity;

  if (config.refine) {
    // golden-section search between the grid neighbors of the minimum
    const double inv_phi = 0.6180339887498949;
    double lo = result.trace[best == 0 ? 0 : best - 1].scale;
    double hi = result.trace[std::min(best + 1, result.trace.size() - 1)].scale;
    if (lo < hi) {
      double x1 = hi - inv_phi * (hi - lo);
      double x2 = lo + inv_phi * (hi - lo);
      double f1 = mean_perplexity_at(params, vocab, grid, x1, config);
      double f2 = mean_perplexity_at(params, vocab, grid, x2, config);
      for (int iter = 0; iter < 20 && (hi - lo) > 1e-6 * hi; ++iter) {
        if (f1 <= f2) {
          hi = x2;
          x2 = x1;
          f2 = f1;
          x1 = hi - inv_phi * (hi - lo);
          f1 = mean_perplexity_at(params, vocab, grid, x1, config);
        } else {
          lo = x1;
          x1 = x2;
          f1 = f2;
          x2 = lo + inv_phi * (hi - lo);
          f2 = mean_perplexity_at(params, vocab, grid, x2, config);
        }
      }
      const double mid = f1 <= f2 ? x1 : x2;
      const double mid_pp = std::min(f1, f2);
      if (mid_pp < result.best_perplexity) {
        result.best_scale = mid;
        result.best_perplexity = mid_pp;
      }
    }
  }
  return result;
}

ModelParameters transfer_adapt(const ModelParameters& params, const Vocabulary& vocab,
                               const std::vector<const ChannelGrid*>& target,
                               const FeatureMap& source_map, const PretrainConfig& config,
                               std::ostream* metrics) {
  if (target.empty()) throw std::invalid_argument("target dataset must not be empty");
  for (const ChannelGrid* grid : target) {
    if (!grid) throw std::invalid_argument("target dataset contains a null grid");
    if (!(build_feature_map(*grid) == source_map))
      throw std::invalid_argument(
          "target layout does not match the source feature map; transfer refused");
  }
  return pretrain(target, vocab, params.config, config, metrics, &params).params;
}

std::vector<Reconstruction> masked_reconstruct(const ModelParameters& params,
                                               const Vocabulary& vocab,
                                               const SequenceExample& seq,
                                               const std::vector<std::size_t>& positions) {
  if (positions.empty()) return {};
  if (vocab.size() != params.config.vocab_size)
    throw std::invalid_argument("vocabulary size does not match the model config");

  SequenceExample masked = seq;
  std::vector<bool> seen(seq.size(), false);
  for (std::size_t pos : positions) {
    if (pos >= seq.size())
      throw std::out_of_range("masked position " + std::to_string(pos) + " out of range");
    if (seq.is_special[pos])
      throw std::invalid_argument("special tokens cannot be masked for reconstruction");
    if (seen[pos])
      throw std::invalid_argument("masked position " + std::to_string(pos) + " repeats");
    seen[pos] = true;
    masked.token_ids[pos] = kMaskToken;
  }

  const ForwardTrace trace = forward(params, masked);
  const Mat logits = mlm_logits(params, trace, positions);
  std::vector<Reconstruction> out;
  out.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto [token, prob] = best_channel_token(logits.row(Eigen::Index(i)));
    out.push_back({positions[i], token, vocab.entry(token).centroid, prob});
  }
  return out;
}

std::vector<std::complex<double>> paraphrase_channel(const ModelParameters& params,
                                                     const Vocabulary& vocab,
                                                     const SequenceExample& seq) {
  if (vocab.size() != params.config.vocab_size)
    throw std::invalid_argument("vocabulary size does not match the model config");
  SequenceExample work = seq;
  std::vector<std::complex<double>> out;
  for (std::size_t pos = 0; pos < work.size(); ++pos) {
    if (work.is_special[pos]) continue;
    work.token_ids[pos] = kMaskToken;
    const ForwardTrace trace = forward(params, work);
    const Mat logits = mlm_logits(params, trace, {pos});
    const std::uint32_t token = best_channel_token(logits.row(0)).first;
    work.token_ids[pos] = token;
    out.push_back(vocab.entry(token).centroid);
  }
  return out;
}

}  // namespace rcm
