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

#include "rcm/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "rcm/binio.hpp"
#include "rcm/comprehend.hpp"
#include "rcm/errors.hpp"
#include "rcm/parallel.hpp"

namespace rcm {

namespace {

Mat pooled_of(const ModelParameters& params, const SequenceExample& seq) {
  const ForwardTrace trace = forward(params, seq);
  if (!trace.has_pooled)
    throw std::invalid_argument("sequence does not start with [CLS]; nothing to pool");
  return trace.pooled;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (b != 0 && a > std::numeric_limits<std::uint64_t>::max() / b)
    throw std::overflow_error("compression dimensions overflow");
  return a * b;
}

// Entropy in bits of the conditional distribution at precision beta, over
// the shifted squared distances d (self excluded by the caller via +inf).
double conditional_entropy_bits(const Eigen::VectorXd& d, double beta,
                                Eigen::VectorXd* probs) {
  const Eigen::ArrayXd w = (-beta * d.array()).exp();
  const double z = w.sum();
  if (!(z > 0.0) || !std::isfinite(z))
    throw numeric_error("degenerate neighborhood in the bandwidth search");
  // H = ln Z + beta * <d> in nats
  const double mean_d = (w * d.array()).sum() / z;
  const double nats = std::log(z) + beta * mean_d;
  if (probs) *probs = (w / z).matrix();
  return nats / std::numbers::ln2;
}

}  // namespace

// ---------------------------------------------------------------- detection

ContaminationReport detect_contamination(const ModelParameters& params,
                                         const SequenceExample& seq) {
  const ForwardTrace trace = forward(params, seq);
  const std::array<double, 2> logits = nfp_logits(params, trace);
  ContaminationReport report;
  report.logit_margin = logits[0] - logits[1];
  report.anomalous = report.logit_margin > 0.0;
  return report;
}

std::vector<std::complex<double>> mitigate_contamination(const ModelParameters& params,
                                                         const Vocabulary& vocab,
                                                         const SequenceExample& seq) {
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (!seq.is_special[i] && seq.time_ids[i] == 2) positions.push_back(i);
  if (positions.empty())
    throw std::invalid_argument("sequence has no second time frame to replace");

  const std::vector<Reconstruction> recon =
      masked_reconstruct(params, vocab, seq, positions);
  std::vector<std::complex<double>> values;
  values.reserve(recon.size());
  for (const Reconstruction& r : recon) values.push_back(r.value);
  return values;
}

// -------------------------------------------------------------- compression

Mat compress(const ModelParameters& params, const std::vector<SequenceExample>& batch,
             std::uint32_t threads) {
  if (batch.empty()) throw std::invalid_argument("cannot compress an empty batch");
  for (const SequenceExample& seq : batch)
    if (seq.size() == 0 || seq.token_ids[0] != kClsToken)
      throw std::invalid_argument("every sequence in the batch must start with [CLS]");

  Mat pooled(Eigen::Index(batch.size()), Eigen::Index(params.config.hidden_size));
  parallel_shards(batch.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      pooled.row(Eigen::Index(i)) = pooled_of(params, batch[i]);
  });
  return pooled.colwise().mean();
}

void CompressionDims::validate() const {
  if (ns == 0 || nt == 0 || nr == 0 || nc == 0 || nb == 0 || h == 0)
    throw std::invalid_argument("compression dimensions must all be at least 1");
}

Ratio compression_ratio(const CompressionDims& dims) {
  dims.validate();
  std::uint64_t num = checked_mul(checked_mul(dims.ns, dims.nt),
                                  checked_mul(dims.nr, checked_mul(dims.nc, dims.nb)));
  std::uint64_t den = dims.h;
  const std::uint64_t g = std::gcd(num, den);
  return Ratio{num / g, den / g};
}

// ------------------------------------------------------------ fingerprints

Fingerprint fingerprint(const ModelParameters& params,
                        const std::vector<SequenceExample>& window,
                        std::size_t window_start, std::uint32_t count) {
  if (count == 0) throw std::invalid_argument("fingerprint window count must be positive");
  if (window.size() != count)
    throw std::invalid_argument("fingerprint expects exactly " + std::to_string(count) +
                                " sequences, got " + std::to_string(window.size()));
  Mat sum = Mat::Zero(1, Eigen::Index(params.config.hidden_size));
  for (const SequenceExample& seq : window) sum += pooled_of(params, seq);
  Fingerprint fp;
  fp.vector = sum / double(count);
  fp.window_start = window_start;
  fp.window_count = count;
  return fp;
}

void TsneConfig::validate() const {
  if (!(perplexity > 0.0) || !std::isfinite(perplexity))
    throw std::invalid_argument("perplexity must be positive and finite");
  if (iterations == 0) throw std::invalid_argument("iterations must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(early_exaggeration >= 1.0))
    throw std::invalid_argument("early_exaggeration must be at least 1");
}

TsneResult tsne_chart(const std::vector<Fingerprint>& fingerprints,
                      const std::vector<std::uint32_t>& labels, const TsneConfig& config) {
  config.validate();
  const std::size_t n = fingerprints.size();
  if (n < 3) throw std::invalid_argument("charting needs at least 3 fingerprints");
  if (labels.size() != n)
    throw std::invalid_argument("one label per fingerprint required");
  if (!(config.perplexity < double(n)))
    throw std::invalid_argument("perplexity must be below the number of points");

  const Eigen::Index dim = fingerprints[0].vector.cols();
  Mat x(Eigen::Index(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (fingerprints[i].vector.rows() != 1 || fingerprints[i].vector.cols() != dim)
      throw std::invalid_argument("fingerprints must share one dimension");
    if (!fingerprints[i].vector.allFinite())
      throw numeric_error("fingerprint " + std::to_string(i) + " is not finite");
    x.row(Eigen::Index(i)) = fingerprints[i].vector;
  }

  // squared pairwise distances
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Mat d2 = (-2.0 * x * x.transpose());
  d2.colwise() += sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(0.0);

  // per-point bandwidth by binary search on the precision beta
  const double target_bits = std::log2(config.perplexity);
  Mat cond = Mat::Zero(Eigen::Index(n), Eigen::Index(n));
  TsneResult result;
  result.entropy_bits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd d(Eigen::Index(n - 1));
    std::vector<Eigen::Index> others;
    others.reserve(n - 1);
    for (Eigen::Index j = 0; j < Eigen::Index(n); ++j) {
      if (j == Eigen::Index(i)) continue;
      d(Eigen::Index(others.size())) = d2(Eigen::Index(i), j);
      others.push_back(j);
    }
    d.array() -= d.minCoeff();

    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd probs;
    double bits = conditional_entropy_bits(d, beta, &probs);
    for (int iter = 0; iter < 1000 && std::abs(bits - target_bits) > 1e-3; ++iter) {
      if (bits > target_bits) {
        lo = beta;
        beta = std::isfinite(hi) ? 0.5 * (lo + hi) : beta * 2.0;
      } else {
        hi = beta;
        beta = lo > 0.0 ? 0.5 * (lo + hi) : beta * 0.5;
      }
      bits = conditional_entropy_bits(d, beta, &probs);
    }
    if (std::abs(bits - target_bits) > 1e-3)
      throw numeric_error("bandwidth search cannot reach the requested perplexity at point " +
                          std::to_string(i));
    result.entropy_bits[i] = bits;
    for (std::size_t k = 0; k < others.size(); ++k)
      cond(Eigen::Index(i), others[k]) = probs(Eigen::Index(k));
  }

  // symmetrized affinities, a proper joint distribution
  Mat p = (cond + cond.transpose()) / (2.0 * double(n));
  p = p.cwiseMax(1e-12);
  for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) p(i, i) = 1e-12;

  auto q_of = [&](const Mat& y, Mat* num_out) -> Mat {
    Mat num = Mat::Zero(Eigen::Index(n), Eigen::Index(n));
    for (Eigen::Index a = 0; a < Eigen::Index(n); ++a) {
      for (Eigen::Index b = a + 1; b < Eigen::Index(n); ++b) {
        const double dx = y(a, 0) - y(b, 0);
        const double dy = y(a, 1) - y(b, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(a, b) = v;
        num(b, a) = v;
      }
    }
    const double z = num.sum();
    if (num_out) *num_out = num;
    return (num / z).cwiseMax(1e-12);
  };
  auto kl_of = [&](const Mat& q) {
    double kl = 0.0;
    for (Eigen::Index a = 0; a < Eigen::Index(n); ++a)
      for (Eigen::Index b = 0; b < Eigen::Index(n); ++b) {
        if (a == b) continue;
        kl += p(a, b) * std::log(p(a, b) / q(a, b));
      }
    return kl;
  };

  // layout: small random start, momentum descent with adaptive gains
  CounterRng rng(config.seed, RngPurpose::kChart, 0);
  Mat y(Eigen::Index(n), 2);
  for (Eigen::Index a = 0; a < Eigen::Index(n); ++a)
    for (Eigen::Index b = 0; b < 2; ++b) y(a, b) = 1e-4 * rng.normal();

  result.initial_kl = kl_of(q_of(y, nullptr));

  Mat velocity = Mat::Zero(Eigen::Index(n), 2);
  Mat gains = Mat::Ones(Eigen::Index(n), 2);
  for (std::uint32_t step = 0; step < config.iterations; ++step) {
    const double exaggeration =
        step < config.exaggeration_steps ? config.early_exaggeration : 1.0;
    const double momentum = step < config.momentum_switch_step ? 0.5 : 0.8;

    Mat num;
    const Mat q = q_of(y, &num);
    Mat grad = Mat::Zero(Eigen::Index(n), 2);
    for (Eigen::Index a = 0; a < Eigen::Index(n); ++a)
      for (Eigen::Index b = 0; b < Eigen::Index(n); ++b) {
        if (a == b) continue;
        const double coeff = 4.0 * (exaggeration * p(a, b) - q(a, b)) * num(a, b);
        grad(a, 0) += coeff * (y(a, 0) - y(b, 0));
        grad(a, 1) += coeff * (y(a, 1) - y(b, 1));
      }

    for (Eigen::Index a = 0; a < Eigen::Index(n); ++a)
      for (Eigen::Index b = 0; b < 2; ++b) {
        const bool same_sign = (grad(a, b) > 0.0) == (velocity(a, b) > 0.0);
        gains(a, b) = same_sign ? std::max(0.01, gains(a, b) * 0.8) : gains(a, b) + 0.2;
        velocity(a, b) =
            momentum * velocity(a, b) - config.learning_rate * gains(a, b) * grad(a, b);
      }
    y += velocity;
    y.rowwise() -= y.colwise().mean();
    if (!y.allFinite()) throw numeric_error("chart layout diverged at step " +
                                            std::to_string(step));
  }

  result.final_kl = kl_of(q_of(y, nullptr));

  std::vector<std::uint32_t> per_label_count;
  result.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= per_label_count.size()) per_label_count.resize(labels[i] + 1, 0);
    ChartPoint& pt = result.points[i];
    pt.x = y(Eigen::Index(i), 0);
    pt.y = y(Eigen::Index(i), 1);
    pt.label = labels[i];
    pt.size_rank = per_label_count[labels[i]]++;
  }
  return result;
}

// -------------------------------------------------------- attention profile

namespace {

enum class Bucket { kFreqLocal, kCrossTime, kCrossAntenna, kSpecial };

Bucket bucket_of(const SequenceExample& seq, std::size_t i, std::size_t j,
                 std::uint32_t radius) {
  if (seq.is_special[j]) return Bucket::kSpecial;
  const bool same_time = seq.time_ids[i] == seq.time_ids[j];
  const bool same_antenna = seq.antenna_ids[i] == seq.antenna_ids[j];
  if (same_time && same_antenna) {
    const std::int64_t df =
        std::int64_t(seq.freq_ids[i]) - std::int64_t(seq.freq_ids[j]);
    return std::llabs(df) <= std::int64_t(radius) ? Bucket::kFreqLocal : Bucket::kSpecial;
  }
  if (same_antenna) return Bucket::kCrossTime;
  if (same_time) return Bucket::kCrossAntenna;
  return Bucket::kSpecial;
}

std::vector<std::size_t> channel_rows(const SequenceExample& seq) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (!seq.is_special[i]) rows.push_back(i);
  if (rows.empty())
    throw std::invalid_argument("sequence has no channel tokens to profile");
  return rows;
}

void add_share(AttentionBucketShares& shares, Bucket bucket, double mass) {
  switch (bucket) {
    case Bucket::kFreqLocal: shares.freq_local += mass; break;
    case Bucket::kCrossTime: shares.cross_time += mass; break;
    case Bucket::kCrossAntenna: shares.cross_antenna += mass; break;
    case Bucket::kSpecial: shares.special += mass; break;
  }
}

}  // namespace

std::vector<HeadProfile> attention_domain_profile(const ModelParameters& params,
                                                  const SequenceExample& seq,
                                                  std::uint32_t subcarrier_radius) {
  const ForwardTrace trace = forward(params, seq);
  const std::vector<std::size_t> rows = channel_rows(seq);
  const double norm = 1.0 / double(rows.size());

  std::vector<HeadProfile> profiles;
  profiles.reserve(std::size_t(params.config.num_layers) * params.config.num_heads);
  for (std::uint32_t layer = 0; layer < params.config.num_layers; ++layer) {
    for (std::uint32_t head = 0; head < params.config.num_heads; ++head) {
      const Mat& attn = trace.layers[layer].attn[head];
      HeadProfile profile;
      profile.layer = layer;
      profile.head = head;
      for (std::size_t i : rows)
        for (std::size_t j = 0; j < seq.size(); ++j)
          add_share(profile.shares, bucket_of(seq, i, j, subcarrier_radius),
                    attn(Eigen::Index(i), Eigen::Index(j)) * norm);
      profiles.push_back(profile);
    }
  }
  return profiles;
}

AttentionBucketShares attention_bucket_sizes(const SequenceExample& seq,
                                             std::uint32_t subcarrier_radius) {
  const std::vector<std::size_t> rows = channel_rows(seq);
  const double mass = 1.0 / (double(rows.size()) * double(seq.size()));
  AttentionBucketShares shares;
  for (std::size_t i : rows)
    for (std::size_t j = 0; j < seq.size(); ++j)
      add_share(shares, bucket_of(seq, i, j, subcarrier_radius), mass);
  return shares;
}

// -------------------------------------------------------------- fine-tuning

void FineTuneConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate_peak > 0.0))
    throw std::invalid_argument("learning_rate_peak must be positive");
  if (total_steps > 0 && warmup_steps > total_steps)
    throw std::invalid_argument("warmup_steps cannot exceed total_steps");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (grad_clip_norm < 0.0)
    throw std::invalid_argument("grad_clip_norm must be non-negative");
  if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0))
    throw std::invalid_argument("holdout_fraction must lie in (0, 1)");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
}

Mat classify_logits(const Classifier& classifier, const SequenceExample& seq) {
  if (classifier.head_w.rows() != Eigen::Index(classifier.params.config.hidden_size) ||
      classifier.head_w.cols() != Eigen::Index(classifier.num_classes))
    throw std::invalid_argument("classifier head shape does not match the backbone");
  return pooled_of(classifier.params, seq) * classifier.head_w + classifier.head_b;
}

namespace {

std::uint32_t greedy_class(const Mat& logits) {
  std::uint32_t best = 0;
  for (Eigen::Index c = 1; c < logits.cols(); ++c)
    if (logits(0, c) > logits(0, best)) best = std::uint32_t(c);
  return best;
}

double squared_norm_of(const ModelParameters& grads, const Mat& hw, const Mat& hb) {
  double total = hw.squaredNorm() + hb.squaredNorm();
  for (const auto& [name, tensor] : grads.tensor_list()) total += tensor->squaredNorm();
  return total;
}

void adam_step_tensor(Mat& param, const Mat& grad, Mat& m, Mat& v, double lr, double bc1,
                      double bc2, const FineTuneConfig& cfg) {
  m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
  v = (cfg.adam_beta2 * v.array() + (1.0 - cfg.adam_beta2) * grad.array().square()).matrix();
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.adam_eps);
}

}  // namespace

FineTuneResult fine_tune_classifier(const ModelParameters& params,
                                    const std::vector<LabeledExample>& examples,
                                    std::uint32_t num_classes, const FineTuneConfig& config,
                                    std::ostream* metrics) {
  config.validate();
  if (num_classes < 2) throw std::invalid_argument("need at least two classes");
  if (examples.size() < 2)
    throw std::invalid_argument("need at least two labeled examples");
  std::vector<bool> present(num_classes, false);
  for (const LabeledExample& ex : examples) {
    if (ex.label >= num_classes)
      throw std::out_of_range("label " + std::to_string(ex.label) + " outside " +
                              std::to_string(num_classes) + " classes");
    if (ex.input.size() == 0 || ex.input.token_ids[0] != kClsToken)
      throw std::invalid_argument("every example must start with [CLS]");
    present[ex.label] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2)
    throw std::invalid_argument("labels cover a single class; nothing to separate");

  const Eigen::Index h = Eigen::Index(params.config.hidden_size);
  const Eigen::Index c = Eigen::Index(num_classes);

  // deterministic split: shuffle, hold out the front
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng split_rng(config.seed, RngPurpose::kFineTune, 0);
  split_rng.shuffle(order);
  std::size_t holdout_n =
      std::max<std::size_t>(1, std::size_t(std::llround(config.holdout_fraction *
                                                        double(examples.size()))));
  holdout_n = std::min(holdout_n, examples.size() - 1);
  const std::vector<std::size_t> holdout(order.begin(),
                                         order.begin() + std::ptrdiff_t(holdout_n));
  std::vector<std::size_t> train(order.begin() + std::ptrdiff_t(holdout_n), order.end());

  FineTuneResult result;
  result.classifier.params = params;
  result.classifier.num_classes = num_classes;
  CounterRng head_rng(config.seed, RngPurpose::kFineTune, 1);
  result.classifier.head_w = Mat(h, c);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      result.classifier.head_w(i, j) = head_rng.truncated_normal(0.02);
  result.classifier.head_b = Mat::Zero(1, c);
  result.holdout_size = holdout_n;

  if (config.total_steps > 0) {
    ModelParameters& model = result.classifier.params;
    Mat& head_w = result.classifier.head_w;
    Mat& head_b = result.classifier.head_b;

    AdamState adam;
    adam.m = zeros_like(model);
    adam.v = zeros_like(model);
    Mat head_m_w = Mat::Zero(h, c), head_v_w = Mat::Zero(h, c);
    Mat head_m_b = Mat::Zero(1, c), head_v_b = Mat::Zero(1, c);
    PretrainConfig adam_cfg;
    adam_cfg.adam_beta1 = config.adam_beta1;
    adam_cfg.adam_beta2 = config.adam_beta2;
    adam_cfg.adam_eps = config.adam_eps;

    ModelParameters grads = zeros_like(model);
    std::uint64_t step = 0;
    for (std::uint32_t epoch = 0; epoch < config.epochs && step < config.total_steps;
         ++epoch) {
      CounterRng shuffle_rng(config.seed, RngPurpose::kFineTune, 2 + epoch);
      shuffle_rng.shuffle(train);
      for (std::size_t start = 0;
           start < train.size() && step < config.total_steps;
           start += config.batch_size) {
        const std::size_t batch_n =
            std::min<std::size_t>(config.batch_size, train.size() - start);
        const double weight = 1.0 / double(batch_n);

        std::vector<ModelParameters> slot_grads(batch_n);
        std::vector<Mat> slot_hw(batch_n), slot_hb(batch_n);
        std::vector<double> slot_loss(batch_n, 0.0);
        parallel_shards(batch_n, config.threads, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t k = lo; k < hi; ++k) {
            const LabeledExample& ex = examples[train[start + k]];
            const bool training = model.config.dropout_rate > 0.0;
            CounterRng dropout_rng(config.seed, RngPurpose::kDropout, epoch,
                                   train[start + k]);
            const ForwardTrace trace =
                forward(model, ex.input, training, training ? &dropout_rng : nullptr);
            const Mat logits = trace.pooled * head_w + head_b;
            const double mx = logits.maxCoeff();
            Mat probs = (logits.array() - mx).exp().matrix();
            const double denom = probs.sum();
            probs /= denom;
            slot_loss[k] =
                weight * (std::log(denom) - (logits(0, Eigen::Index(ex.label)) - mx));
            Mat d_logits = probs * weight;
            d_logits(0, Eigen::Index(ex.label)) -= weight;

            slot_hw[k] = trace.pooled.transpose() * d_logits;
            slot_hb[k] = d_logits;
            slot_grads[k] = zeros_like(model);
            backward(model, trace, {}, Mat(), Mat(), d_logits * head_w.transpose(),
                     slot_grads[k]);
          }
        });

        auto zero_all = [](ModelParameters& g) {
          for (auto& [name, tensor] : g.tensor_list()) tensor->setZero();
        };
        zero_all(grads);
        Mat grad_hw = Mat::Zero(h, c);
        Mat grad_hb = Mat::Zero(1, c);
        double loss = 0.0;
        for (std::size_t k = 0; k < batch_n; ++k) {
          accumulate(grads, slot_grads[k]);
          grad_hw += slot_hw[k];
          grad_hb += slot_hb[k];
          loss += slot_loss[k];
        }
        if (!std::isfinite(loss))
          throw numeric_error("loss diverged at step " + std::to_string(step));

        if (config.grad_clip_norm > 0.0) {
          const double norm = std::sqrt(squared_norm_of(grads, grad_hw, grad_hb));
          if (norm > config.grad_clip_norm) {
            const double scale = config.grad_clip_norm / norm;
            for (auto& [name, tensor] : grads.tensor_list()) *tensor *= scale;
            grad_hw *= scale;
            grad_hb *= scale;
          }
        }

        const double lr = lr_schedule(step, config.learning_rate_peak,
                                      config.warmup_steps, config.total_steps);
        adam_update(model, grads, adam, lr, adam_cfg);
        const double bc1 = 1.0 - std::pow(config.adam_beta1, double(adam.step));
        const double bc2 = 1.0 - std::pow(config.adam_beta2, double(adam.step));
        adam_step_tensor(head_w, grad_hw, head_m_w, head_v_w, lr, bc1, bc2, config);
        adam_step_tensor(head_b, grad_hb, head_m_b, head_v_b, lr, bc1, bc2, config);

        if (metrics)
          (*metrics) << step << '\t' << format_double(lr) << '\t' << format_double(loss)
                     << '\n';
        ++step;
      }
    }
    result.steps = step;
  }

  std::vector<std::uint8_t> hits(holdout_n, 0);
  parallel_shards(holdout_n, config.threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      const LabeledExample& ex = examples[holdout[k]];
      const Mat logits = classify_logits(result.classifier, ex.input);
      hits[k] = greedy_class(logits) == ex.label ? 1 : 0;
    }
  });
  std::size_t correct = 0;
  for (std::uint8_t hit : hits) correct += hit;
  result.holdout_accuracy = double(correct) / double(holdout_n);
  if (metrics)
    (*metrics) << "# holdout\t" << holdout_n << '\t'
               << format_double(result.holdout_accuracy) << '\n';
  return result;
}

}  // namespace rcm
