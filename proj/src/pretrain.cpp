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

#include "rcm/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "rcm/binio.hpp"
#include "rcm/errors.hpp"
#include "rcm/parallel.hpp"

namespace rcm {
namespace {

void zero_params(ModelParameters& p) {
  for (auto& [name, mat] : p.tensor_list()) mat->setZero();
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  return mx + std::log((row.array() - mx).exp().sum());
}

struct ExampleResult {
  double mlm_ce = 0.0;  // summed over this example's masked positions
  double nfp_ce = 0.0;
  std::size_t mlm_hits = 0;
  bool nfp_hit = false;
};

// Forward one example, score both objectives, and optionally backpropagate
// into grads. mlm_weight and nfp_weight scale the logit-level gradients.
ExampleResult run_example(const ModelParameters& params, const TrainingExample& ex,
                          ModelParameters* grads, CounterRng* dropout_rng, double mlm_weight,
                          double nfp_weight) {
  ExampleResult res;
  const bool training = grads != nullptr && dropout_rng != nullptr;
  const ForwardTrace trace = forward(params, ex.input, training, dropout_rng);

  std::vector<std::size_t> positions(ex.mlm_labels.size());
  for (std::size_t i = 0; i < ex.mlm_labels.size(); ++i)
    positions[i] = ex.mlm_labels[i].position;
  const Mat logits = mlm_logits(params, trace, positions);
  Mat d_mlm;
  if (grads) d_mlm.setZero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const std::uint32_t target = ex.mlm_labels[std::size_t(r)].token;
    const double lse = log_sum_exp(logits.row(r));
    res.mlm_ce += lse - logits(r, target);
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    if (std::uint32_t(best) == target) ++res.mlm_hits;
    if (grads) {
      d_mlm.row(r) = (mlm_weight * (logits.row(r).array() - lse).exp()).matrix();
      d_mlm(r, target) -= mlm_weight;
    }
  }

  const auto nfp = nfp_logits(params, trace);
  const std::size_t label = ex.nfp_consecutive ? 1 : 0;
  const double lse = std::max(nfp[0], nfp[1]) +
                     std::log(std::exp(nfp[0] - std::max(nfp[0], nfp[1])) +
                              std::exp(nfp[1] - std::max(nfp[0], nfp[1])));
  res.nfp_ce = lse - nfp[label];
  res.nfp_hit = (nfp[1] >= nfp[0]) == ex.nfp_consecutive;

  if (grads) {
    Mat d_nfp(1, 2);
    d_nfp(0, 0) = nfp_weight * std::exp(nfp[0] - lse);
    d_nfp(0, 1) = nfp_weight * std::exp(nfp[1] - lse);
    d_nfp(0, Eigen::Index(label)) -= nfp_weight;
    backward(params, trace, positions, d_mlm, d_nfp, *grads);
  }
  return res;
}

double global_grad_norm(const ModelParameters& grads) {
  double sq = 0.0;
  for (const auto& [name, mat] : grads.tensor_list()) sq += mat->squaredNorm();
  return std::sqrt(sq);
}

void scale_params(ModelParameters& p, double factor) {
  for (auto& [name, mat] : p.tensor_list()) *mat *= factor;
}

}  // namespace

void PretrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(mask_rate > 0.0) || mask_rate > 1.0)
    throw std::invalid_argument("mask_rate must be in (0, 1]");
  if (mask_split_mask < 0.0 || mask_split_random < 0.0 || mask_split_keep < 0.0 ||
      std::abs(mask_split_mask + mask_split_random + mask_split_keep - 1.0) > 1e-9)
    throw std::invalid_argument("mask_split components must be non-negative and sum to 1");
  if (nfp_negative_rate < 0.0 || nfp_negative_rate > 1.0)
    throw std::invalid_argument("nfp_negative_rate must be in [0, 1]");
  if (negative_min_gap == 0) throw std::invalid_argument("negative_min_gap must be positive");
  if (!(learning_rate_peak > 0.0) || !std::isfinite(learning_rate_peak))
    throw std::invalid_argument("learning_rate_peak must be positive and finite");
  if (warmup_steps > total_steps)
    throw std::invalid_argument("warmup_steps must not exceed total_steps");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (grad_clip_norm < 0.0) throw std::invalid_argument("grad_clip_norm must be non-negative");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
}

TrainingExample make_mlm_example(const SequenceExample& seq, std::uint32_t vocab_size,
                                 const PretrainConfig& config, CounterRng& rng) {
  if (vocab_size <= kNumSpecialTokens)
    throw std::invalid_argument("vocabulary holds no channel tokens to mask");
  TrainingExample ex;
  ex.input = seq;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.is_special[i]) continue;
    if (rng.uniform() >= config.mask_rate) continue;
    ex.mlm_labels.push_back({i, seq.token_ids[i]});
    const double split = rng.uniform();
    if (split < config.mask_split_mask) {
      ex.input.token_ids[i] = kMaskToken;
    } else if (split < config.mask_split_mask + config.mask_split_random) {
      ex.input.token_ids[i] =
          kNumSpecialTokens + std::uint32_t(rng.below(vocab_size - kNumSpecialTokens));
    }
  }
  return ex;
}

TrainingExample make_nfp_pair(const ChannelGrid& grid, std::uint32_t t0,
                              const Vocabulary& vocab, const PretrainConfig& config,
                              CounterRng& rng) {
  const std::uint32_t frames = grid.meta.num_frames;
  if (t0 + 1 >= frames)
    throw std::invalid_argument("frame " + std::to_string(t0) + " has no successor");
  TrainingExample ex;
  if (rng.uniform() >= config.nfp_negative_rate) {
    ex.input = assemble_sequence(grid, {t0, t0 + 1}, vocab);
    ex.nfp_consecutive = true;
    return ex;
  }
  const std::uint32_t gap = config.negative_min_gap;
  const std::uint64_t left = t0 >= gap ? std::uint64_t(t0 - gap) + 1 : 0;
  const std::uint64_t right = frames > t0 + gap ? std::uint64_t(frames - t0 - gap) : 0;
  if (left + right == 0)
    throw std::invalid_argument("grid too short for a negative pair at frame " +
                                std::to_string(t0));
  const std::uint64_t pick = rng.below(left + right);
  const std::uint32_t j =
      pick < left ? std::uint32_t(pick) : t0 + gap + std::uint32_t(pick - left);
  ex.input = assemble_sequence(grid, {t0, j}, vocab);
  ex.nfp_consecutive = false;
  return ex;
}

BatchStats batch_loss(const ModelParameters& params, const std::vector<TrainingExample>& batch,
                      ModelParameters* grads, std::vector<CounterRng>* dropout_rngs,
                      std::uint32_t threads) {
  if (batch.empty()) throw std::invalid_argument("batch must not be empty");
  if (dropout_rngs && dropout_rngs->size() != batch.size())
    throw std::invalid_argument("one dropout stream per example is required");

  BatchStats stats;
  for (const TrainingExample& ex : batch) stats.masked_positions += ex.mlm_labels.size();
  const double mlm_weight =
      stats.masked_positions == 0 ? 0.0 : 1.0 / double(stats.masked_positions);
  const double nfp_weight = 1.0 / double(batch.size());

  std::vector<ExampleResult> results(batch.size());
  std::vector<ModelParameters> slot_grads;
  if (grads) {
    slot_grads.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) slot_grads.push_back(zeros_like(params));
  }
  parallel_shards(batch.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      results[i] = run_example(params, batch[i], grads ? &slot_grads[i] : nullptr,
                               dropout_rngs ? &(*dropout_rngs)[i] : nullptr, mlm_weight,
                               nfp_weight);
  });
  // reduce in example order so results never depend on the thread count
  if (grads)
    for (const ModelParameters& g : slot_grads) accumulate(*grads, g);

  double mlm_sum = 0.0, nfp_sum = 0.0;
  for (const ExampleResult& r : results) {
    mlm_sum += r.mlm_ce;
    nfp_sum += r.nfp_ce;
  }
  stats.mlm_loss = mlm_weight * mlm_sum;
  stats.nfp_loss = nfp_weight * nfp_sum;
  stats.total = stats.mlm_loss + stats.nfp_loss;
  return stats;
}

EvalStats evaluate(const ModelParameters& params, const std::vector<TrainingExample>& batch,
                   std::uint32_t threads) {
  if (batch.empty()) throw std::invalid_argument("evaluation batch must not be empty");
  std::vector<ExampleResult> results(batch.size());
  parallel_shards(batch.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      results[i] = run_example(params, batch[i], nullptr, nullptr, 0.0, 0.0);
  });
  EvalStats stats;
  stats.examples = batch.size();
  std::size_t mlm_hits = 0, nfp_hits = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    stats.masked_positions += batch[i].mlm_labels.size();
    mlm_hits += results[i].mlm_hits;
    if (results[i].nfp_hit) ++nfp_hits;
  }
  stats.mlm_top1 =
      stats.masked_positions == 0 ? 0.0 : double(mlm_hits) / double(stats.masked_positions);
  stats.nfp_accuracy = double(nfp_hits) / double(batch.size());
  return stats;
}

double lr_schedule(std::uint64_t step, double peak, std::uint64_t warmup_steps,
                   std::uint64_t total_steps) {
  if (step > total_steps)
    throw std::invalid_argument("schedule step beyond total_steps");
  if (total_steps == 0) return 0.0;
  if (step < warmup_steps) return peak * double(step) / double(warmup_steps);
  if (total_steps == warmup_steps) return step == warmup_steps ? peak : 0.0;
  return peak * double(total_steps - step) / double(total_steps - warmup_steps);
}

double lr_schedule(std::uint64_t step, const PretrainConfig& config) {
  return lr_schedule(step, config.learning_rate_peak, config.warmup_steps,
                     config.total_steps);
}

void adam_update(ModelParameters& params, const ModelParameters& grads, AdamState& state,
                 double lr, const PretrainConfig& config) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.adam_beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(config.adam_beta2, double(state.step));
  auto p = params.tensor_list();
  const auto g = grads.tensor_list();
  auto m = state.m.tensor_list();
  auto v = state.v.tensor_list();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw std::invalid_argument("optimizer state does not match the parameters");
  for (std::size_t i = 0; i < p.size(); ++i) {
    Mat& mm = *m[i].second;
    Mat& vv = *v[i].second;
    const Mat& gg = *g[i].second;
    mm = config.adam_beta1 * mm + (1.0 - config.adam_beta1) * gg;
    vv = config.adam_beta2 * vv + (1.0 - config.adam_beta2) * gg.array().square().matrix();
    p[i].second->array() -=
        lr * (mm.array() / bc1) / ((vv.array() / bc2).sqrt() + config.adam_eps);
  }
}

PretrainResult pretrain(const std::vector<const ChannelGrid*>& dataset, const Vocabulary& vocab,
                        const ModelConfig& model_config, const PretrainConfig& config,
                        std::ostream* metrics, const ModelParameters* init,
                        const AdamState* resume) {
  model_config.validate();
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("dataset must not be empty");

  for (const ChannelGrid* grid : dataset) {
    if (!grid) throw std::invalid_argument("dataset contains a null grid");
    const SimConfig& m = grid->meta;
    if (m.num_subcarriers > model_config.max_freq_features ||
        m.num_antennas > model_config.max_antenna_features)
      throw std::invalid_argument("grid dimensions exceed the model's feature tables");
    const std::size_t seq_len =
        std::size_t(m.num_subcarriers) * 2 * m.num_antennas + 2 * m.num_antennas + 1;
    if (seq_len > model_config.max_seq_len)
      throw std::invalid_argument("assembled sequences exceed max_seq_len");
  }
  if (vocab.size() != model_config.vocab_size)
    throw std::invalid_argument("vocabulary size does not match the model config");

  // enumerate (grid, first frame) pairs that can yield both labels
  struct ExampleRef {
    std::size_t grid;
    std::uint32_t t0;
  };
  std::vector<ExampleRef> refs;
  for (std::size_t g = 0; g < dataset.size(); ++g) {
    const std::uint32_t frames = dataset[g]->meta.num_frames;
    for (std::uint32_t t0 = 0; t0 + 1 < frames; ++t0) {
      const bool has_negative =
          t0 >= config.negative_min_gap || frames > t0 + config.negative_min_gap;
      if (has_negative) refs.push_back({g, t0});
    }
  }
  if (refs.empty())
    throw std::invalid_argument(
        "no frame pair in the dataset supports both objectives; add frames or reduce "
        "negative_min_gap");

  PretrainResult result;
  result.params = init ? *init : init_parameters(model_config, config.seed);
  if (init && !(init->config == model_config))
    throw std::invalid_argument("initial parameters do not match the model config");

  if (config.total_steps == 0) return result;

  AdamState adam;
  if (resume && resume->step > 0) {
    if (!(resume->m.config == model_config) || !(resume->v.config == model_config))
      throw std::invalid_argument("resume state does not match the model config");
    adam = *resume;
  } else {
    adam.m = zeros_like(result.params);
    adam.v = zeros_like(result.params);
  }
  const std::uint64_t start_step = adam.step;
  ModelParameters grads = zeros_like(result.params);

  auto build_example = [&](std::size_t ref_index, RngPurpose pair_purpose,
                           RngPurpose mask_purpose, std::uint64_t salt) {
    const ExampleRef& ref = refs[ref_index];
    CounterRng pair_rng(config.seed, pair_purpose, salt, ref_index, 0);
    TrainingExample ex =
        make_nfp_pair(*dataset[ref.grid], ref.t0, vocab, config, pair_rng);
    CounterRng mask_rng(config.seed, mask_purpose, salt, ref_index, 1);
    TrainingExample masked =
        make_mlm_example(ex.input, model_config.vocab_size, config, mask_rng);
    masked.nfp_consecutive = ex.nfp_consecutive;
    return masked;
  };

  std::uint64_t step = start_step;
  std::uint64_t cursor = 0;  // global batch counter, for skipping resumed work
  bool done = step >= config.total_steps;
  for (std::uint32_t epoch = 0; epoch < config.epochs && !done; ++epoch) {
    std::vector<std::size_t> order(refs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng shuffle_rng(config.seed, RngPurpose::kShuffle, epoch);
    shuffle_rng.shuffle(order);
    bool epoch_ran = false;

    for (std::size_t start = 0; start < order.size() && !done; start += config.batch_size) {
      if (cursor++ < start_step) continue;  // consumed before the resume point
      epoch_ran = true;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<TrainingExample> batch;
      batch.reserve(end - start);
      std::vector<CounterRng> dropout_rngs;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(
            build_example(order[k], RngPurpose::kNfpPair, RngPurpose::kMasking, epoch));
        if (model_config.dropout_rate > 0.0)
          dropout_rngs.emplace_back(config.seed, RngPurpose::kDropout, epoch, order[k]);
      }

      zero_params(grads);
      const BatchStats stats =
          batch_loss(result.params, batch, &grads,
                     dropout_rngs.empty() ? nullptr : &dropout_rngs, config.threads);
      if (!std::isfinite(stats.total))
        throw numeric_error("loss diverged at step " + std::to_string(step));

      if (config.grad_clip_norm > 0.0) {
        const double norm = global_grad_norm(grads);
        if (norm > config.grad_clip_norm) scale_params(grads, config.grad_clip_norm / norm);
      }

      const double lr = lr_schedule(step, config);
      adam_update(result.params, grads, adam, lr, config);
      result.final_mlm_loss = stats.mlm_loss;
      result.final_nfp_loss = stats.nfp_loss;
      ++step;

      if (metrics)
        (*metrics) << step - 1 << '\t' << format_double(lr) << '\t'
                   << format_double(stats.mlm_loss) << '\t' << format_double(stats.nfp_loss)
                   << '\t' << format_double(stats.total) << '\n';

      if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() &&
          step % config.checkpoint_every == 0) {
        std::vector<std::pair<std::string, Mat>> extra;
        Mat step_mat(1, 1);
        step_mat(0, 0) = double(adam.step);
        extra.emplace_back("opt.step", step_mat);
        for (const auto& [name, mat] : adam.m.tensor_list())
          extra.emplace_back("opt.m." + name, *mat);
        for (const auto& [name, mat] : adam.v.tensor_list())
          extra.emplace_back("opt.v." + name, *mat);
        save_checkpoint(result.params, config.checkpoint_path, extra);
      }
      if (step >= config.total_steps) done = true;
    }

    const std::size_t eval_count = std::min<std::size_t>(config.eval_examples, refs.size());
    if (eval_count > 0 && epoch_ran) {
      std::vector<TrainingExample> eval_batch;
      eval_batch.reserve(eval_count);
      for (std::size_t i = 0; i < eval_count; ++i)
        eval_batch.push_back(
            build_example(i, RngPurpose::kEval, RngPurpose::kEval, 1000 + epoch));
      const EvalStats es = evaluate(result.params, eval_batch, config.threads);
      result.eval_mlm_top1 = es.mlm_top1;
      result.eval_nfp_accuracy = es.nfp_accuracy;
      if (metrics)
        (*metrics) << "# epoch\t" << epoch << "\tmlm_top1\t" << format_double(es.mlm_top1)
                   << "\tnfp_accuracy\t" << format_double(es.nfp_accuracy) << '\n';
    }
  }
  result.steps = step;
  result.adam = std::move(adam);
  return result;
}

}  // namespace rcm
