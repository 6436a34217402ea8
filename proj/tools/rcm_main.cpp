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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rcm/binio.hpp"
#include "rcm/chansim.hpp"
#include "rcm/comprehend.hpp"
#include "rcm/downstream.hpp"
#include "rcm/errors.hpp"
#include "rcm/model.hpp"
#include "rcm/parallel.hpp"
#include "rcm/pretrain.hpp"
#include "rcm/tokenizer.hpp"

namespace {

// The environment sets the default output directory only; explicit paths
// are always taken verbatim.
std::string default_out(const std::string& name) {
  const char* dir = std::getenv("RCM_OUTDIR");
  if (!dir || !*dir) return name;
  return (std::filesystem::path(dir) / name).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw rcm::data_format_error("cannot write " + path);
  return out;
}

// Every run leaves its fully resolved configuration next to the primary
// output, so (snapshot, seed) reproduces the run.
void write_snapshot(const CLI::App& cmd, const std::string& primary_output) {
  std::ofstream out = open_out(primary_output + ".config");
  out << cmd.config_to_str(true, false);
}

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

// "key = value" lines layered under the command line: a key already given as
// a flag is skipped, everything else is appended as --key=value and parsed
// normally, so unknown keys fail like unknown flags would.
void layer_config_file(std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);

  const auto given = [&args](const std::string& key) {
    const std::string flag = "--" + key;
    for (const std::string& arg : args)
      if (arg == flag || arg.rfind(flag + "=", 0) == 0) return true;
    return false;
  };

  std::vector<std::string> layered;
  std::string line;
  while (std::getline(in, line)) {
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw rcm::data_format_error("config line without '=' in " + path + ": " + text);
    const std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (!value.empty() && value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (key.empty())
      throw rcm::data_format_error("config line without a key in " + path + ": " + text);
    if (given(key)) continue;  // flags win
    layered.push_back("--" + key + "=" + value);
  }
  args.insert(args.end(), layered.begin(), layered.end());
}

std::uint64_t parse_uint(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw rcm::data_format_error(std::string("malformed ") + what + ": '" + text + "'");
  }
}

// ------------------------------------------------------------ shared state

struct SimArgs {
  std::uint32_t subcarriers = 16;
  double spacing = 90e3;
  std::uint32_t frames = 64;
  double interval = 1e-3;
  std::uint32_t antennas = 2;
  double carrier = 1.9e9;
  double speed = 1.4;
  double rho = 0.5;
  int pdp_taps = 6;
  double pdp_spacing = 1e-7;
  double pdp_spread = 2e-7;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::vector<std::uint32_t> contaminate;
  double sir_db = 0.0;
  std::uint64_t interferer_seed = 0;
  bool interferer_seed_set = false;
  std::string out;
};

struct ModelArgs {
  std::string checkpoint;
  std::string vocab;
};

struct Loaded {
  rcm::Checkpoint ckpt;
  rcm::Vocabulary vocab;
};

Loaded load_model(const ModelArgs& args) {
  Loaded l{rcm::load_checkpoint(args.checkpoint), rcm::load_vocabulary(args.vocab)};
  if (l.vocab.size() != l.ckpt.params.config.vocab_size)
    throw rcm::data_format_error("vocabulary size " + std::to_string(l.vocab.size()) +
                                 " does not match the checkpoint's " +
                                 std::to_string(l.ckpt.params.config.vocab_size));
  return l;
}

// Consecutive-frame-pair sequences over the grid. Overlapping windows step
// one frame at a time; non-overlapping ones two.
std::vector<rcm::SequenceExample> pair_sequences(const rcm::ChannelGrid& grid,
                                                 const rcm::Vocabulary& vocab,
                                                 bool overlapping) {
  std::vector<rcm::SequenceExample> seqs;
  const std::uint32_t stride = overlapping ? 1 : 2;
  for (std::uint32_t t = 0; t + 1 < grid.frames(); t += stride)
    seqs.push_back(rcm::assemble_sequence(grid, {t, t + 1}, vocab));
  if (seqs.empty())
    throw std::invalid_argument("dataset has fewer than two frames; no sequence fits");
  return seqs;
}

// First frames that admit both a consecutive and a gapped negative pair,
// mirroring the pretraining example enumeration.
std::vector<std::pair<std::size_t, std::uint32_t>> eligible_refs(
    const std::vector<rcm::ChannelGrid>& grids, std::uint32_t gap) {
  std::vector<std::pair<std::size_t, std::uint32_t>> refs;
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const std::uint32_t frames = grids[g].frames();
    for (std::uint32_t t0 = 0; t0 + 1 < frames; ++t0)
      if (t0 >= gap || frames > t0 + gap) refs.push_back({g, t0});
  }
  return refs;
}

rcm::AdamState optimizer_from_extras(const rcm::Checkpoint& ck) {
  rcm::AdamState state;
  state.m = rcm::zeros_like(ck.params);
  state.v = rcm::zeros_like(ck.params);
  std::map<std::string, const rcm::Mat*> extras;
  for (const auto& [name, mat] : ck.extra) extras[name] = &mat;
  const auto step_it = extras.find("opt.step");
  if (step_it == extras.end()) return state;  // init-only checkpoint: fresh start
  state.step = std::uint64_t(std::llround((*step_it->second)(0, 0)));
  for (const char* part : {"m", "v"}) {
    rcm::ModelParameters& into = part[0] == 'm' ? state.m : state.v;
    for (auto& [name, mat] : into.tensor_list()) {
      const auto it = extras.find(std::string("opt.") + part + "." + name);
      if (it == extras.end())
        throw rcm::data_format_error("checkpoint optimizer state lacks opt." +
                                     std::string(part) + "." + name);
      if (it->second->rows() != mat->rows() || it->second->cols() != mat->cols())
        throw rcm::data_format_error("optimizer tensor opt." + std::string(part) + "." +
                                     name + " has the wrong shape");
      *mat = *it->second;
    }
  }
  return state;
}

void save_with_optimizer(const rcm::ModelParameters& params, const rcm::AdamState& state,
                         const std::string& path) {
  if (state.m.token_embedding.size() == 0) {  // no updates happened
    rcm::save_checkpoint(params, path);
    return;
  }
  std::vector<std::pair<std::string, rcm::Mat>> extra;
  rcm::Mat step(1, 1);
  step(0, 0) = double(state.step);
  extra.emplace_back("opt.step", step);
  for (const auto& [name, mat] : state.m.tensor_list())
    extra.emplace_back("opt.m." + name, *mat);
  for (const auto& [name, mat] : state.v.tensor_list())
    extra.emplace_back("opt.v." + name, *mat);
  rcm::save_checkpoint(params, path, extra);
}

// --------------------------------------------------------------- simulate

void run_simulate(const SimArgs& args, const CLI::App& cmd) {
  rcm::SimConfig cfg;
  cfg.num_subcarriers = args.subcarriers;
  cfg.subcarrier_spacing_hz = args.spacing;
  cfg.num_frames = args.frames;
  cfg.frame_interval_s = args.interval;
  cfg.num_antennas = args.antennas;
  cfg.carrier_freq_hz = args.carrier;
  cfg.user_speed_mps = args.speed;
  cfg.antenna_correlation = args.rho;
  cfg.seed = args.seed;
  if (args.pdp_taps > 0)
    cfg.taps = rcm::make_exponential_pdp(args.pdp_taps, args.pdp_spacing, args.pdp_spread);
  cfg.validate();

  rcm::ChannelGrid grid = rcm::generate_channel(cfg);
  if (args.scale != 1.0) rcm::scale_grid(grid, args.scale);
  if (!args.contaminate.empty()) {
    rcm::SimConfig icfg = cfg;
    icfg.seed = args.interferer_seed_set ? args.interferer_seed : args.seed + 1;
    const rcm::ChannelGrid interferer = rcm::generate_channel(icfg);
    for (std::uint32_t frame : args.contaminate)
      grid = rcm::inject_contamination(grid, frame, interferer, args.sir_db);
  }

  rcm::save_cfrd(grid, args.out);
  write_snapshot(cmd, args.out);
  std::cout << "wrote " << args.out << " (" << grid.subcarriers() << "x" << grid.frames()
            << "x" << grid.antennas() << ")\n";
}

// --------------------------------------------------------------- pretrain

struct TrainArgs {
  std::vector<std::string> data;
  std::string vocab;
  std::uint32_t vocab_size = 512;
  std::uint32_t layers = 2;
  std::uint32_t hidden = 64;
  std::uint32_t heads = 4;
  std::uint32_t ffn = 256;
  double dropout = 0.0;
  rcm::PretrainConfig train;
  bool steps_given = false;
  std::string resume;
  std::string out;
  std::string metrics;
  std::string feature_map;
};

std::vector<rcm::ChannelGrid> load_grids(const std::vector<std::string>& paths) {
  if (paths.empty()) throw std::invalid_argument("at least one --data file is required");
  std::vector<rcm::ChannelGrid> grids;
  grids.reserve(paths.size());
  for (const std::string& p : paths) grids.push_back(rcm::load_cfrd(p));
  return grids;
}

rcm::Vocabulary load_or_build_vocab(const std::string& path,
                                    const std::vector<rcm::ChannelGrid>& grids,
                                    std::uint32_t vocab_size) {
  if (std::filesystem::exists(path)) return rcm::load_vocabulary(path);
  std::vector<const rcm::ChannelGrid*> ptrs;
  for (const rcm::ChannelGrid& g : grids) ptrs.push_back(&g);
  const rcm::Vocabulary vocab = rcm::build_vocabulary(ptrs, vocab_size);
  rcm::save_vocabulary(vocab, path);
  return vocab;
}

rcm::ModelConfig derive_model_config(const TrainArgs& args,
                                     const std::vector<rcm::ChannelGrid>& grids,
                                     std::uint32_t vocab_size) {
  rcm::ModelConfig mc;
  mc.num_layers = args.layers;
  mc.hidden_size = args.hidden;
  mc.num_heads = args.heads;
  mc.ffn_size = args.ffn;
  mc.dropout_rate = args.dropout;
  mc.vocab_size = vocab_size;
  mc.max_time_features = 2;
  mc.max_freq_features = 0;
  mc.max_antenna_features = 0;
  mc.max_seq_len = 0;
  for (const rcm::ChannelGrid& g : grids) {
    mc.max_freq_features = std::max(mc.max_freq_features, g.subcarriers());
    mc.max_antenna_features = std::max(mc.max_antenna_features, g.antennas());
    const std::uint32_t seq = g.subcarriers() * 2 * g.antennas() + 2 * g.antennas() + 1;
    mc.max_seq_len = std::max(mc.max_seq_len, seq);
  }
  return mc;
}

std::uint32_t derive_total_steps(const rcm::PretrainConfig& cfg, std::size_t refs) {
  const std::size_t per_epoch = (refs + cfg.batch_size - 1) / cfg.batch_size;
  return std::uint32_t(std::size_t(cfg.epochs) * per_epoch);
}

void run_pretrain(TrainArgs& args, const CLI::App& cmd) {
  const std::vector<rcm::ChannelGrid> grids = load_grids(args.data);
  const rcm::Vocabulary vocab = load_or_build_vocab(args.vocab, grids, args.vocab_size);

  rcm::ModelConfig mc;
  const rcm::ModelParameters* init = nullptr;
  rcm::Checkpoint resume_ckpt;
  rcm::AdamState resume_state;
  const rcm::AdamState* resume = nullptr;
  if (!args.resume.empty()) {
    resume_ckpt = rcm::load_checkpoint(args.resume);
    mc = resume_ckpt.params.config;  // dims come from the checkpoint
    init = &resume_ckpt.params;
    resume_state = optimizer_from_extras(resume_ckpt);
    resume = &resume_state;
  } else {
    mc = derive_model_config(args, grids, vocab.size());
  }

  if (!args.steps_given)
    args.train.total_steps =
        derive_total_steps(args.train, eligible_refs(grids, args.train.negative_min_gap).size());
  if (args.train.checkpoint_every > 0 && args.train.checkpoint_path.empty())
    args.train.checkpoint_path = args.out;

  std::vector<const rcm::ChannelGrid*> ptrs;
  for (const rcm::ChannelGrid& g : grids) ptrs.push_back(&g);

  std::ofstream metrics = open_out(args.metrics);
  const rcm::PretrainResult result =
      rcm::pretrain(ptrs, vocab, mc, args.train, &metrics, init, resume);
  save_with_optimizer(result.params, result.adam, args.out);
  rcm::save_feature_map(rcm::build_feature_map(grids.front()), args.feature_map);
  write_snapshot(cmd, args.out);
  std::cout << "steps\t" << result.steps << "\nfinal_mlm_loss\t"
            << rcm::format_double(result.final_mlm_loss) << "\nfinal_nfp_loss\t"
            << rcm::format_double(result.final_nfp_loss) << "\neval_mlm_top1\t"
            << rcm::format_double(result.eval_mlm_top1) << "\neval_nfp_accuracy\t"
            << rcm::format_double(result.eval_nfp_accuracy) << "\nwrote " << args.out
            << "\n";
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::vector<std::string> data;
  ModelArgs model;
  std::uint32_t examples = 64;
  double mask_rate = 0.15;
  double neg_rate = 0.5;
  std::uint32_t neg_gap = 10;
  std::uint32_t perplexity_pairs = 8;
  std::uint32_t threads = 1;
  std::uint64_t seed = 0;
  std::string out;
};

void run_eval(const EvalArgs& args, const CLI::App& cmd) {
  const std::vector<rcm::ChannelGrid> grids = load_grids(args.data);
  const Loaded l = load_model(args.model);

  rcm::PretrainConfig ex_cfg;
  ex_cfg.mask_rate = args.mask_rate;
  ex_cfg.nfp_negative_rate = args.neg_rate;
  ex_cfg.negative_min_gap = args.neg_gap;

  const auto refs = eligible_refs(grids, args.neg_gap);
  if (refs.empty())
    throw std::invalid_argument("no frame pair in the dataset supports evaluation");
  const std::size_t count = std::min<std::size_t>(args.examples, refs.size());
  std::vector<rcm::TrainingExample> batch;
  batch.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& [g, t0] = refs[i];
    rcm::CounterRng pair_rng(args.seed, rcm::RngPurpose::kEval, 0, i, 0);
    rcm::TrainingExample ex = rcm::make_nfp_pair(grids[g], t0, l.vocab, ex_cfg, pair_rng);
    rcm::CounterRng mask_rng(args.seed, rcm::RngPurpose::kEval, 0, i, 1);
    rcm::TrainingExample masked =
        rcm::make_mlm_example(ex.input, l.vocab.size(), ex_cfg, mask_rng);
    masked.nfp_consecutive = ex.nfp_consecutive;
    batch.push_back(std::move(masked));
  }
  const rcm::EvalStats stats = rcm::evaluate(l.ckpt.params, batch, args.threads);

  std::ofstream out = open_out(args.out);
  out << "examples\t" << stats.examples << '\n';
  out << "masked_positions\t" << stats.masked_positions << '\n';
  out << "mlm_top1\t" << rcm::format_double(stats.mlm_top1) << '\n';
  out << "nfp_accuracy\t" << rcm::format_double(stats.nfp_accuracy) << '\n';

  if (args.perplexity_pairs > 0) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (const rcm::ChannelGrid& grid : grids) {
      for (std::uint32_t t = 0; t + 1 < grid.frames() && pairs < args.perplexity_pairs;
           ++t, ++pairs) {
        const rcm::SequenceExample seq = rcm::assemble_sequence(grid, {t, t + 1}, l.vocab);
        sum += rcm::pseudo_log_likelihood(l.ckpt.params, seq, args.threads).perplexity;
      }
      if (pairs >= args.perplexity_pairs) break;
    }
    out << "perplexity_pairs\t" << pairs << '\n';
    out << "mean_perplexity\t" << rcm::format_double(sum / double(pairs)) << '\n';
  }
  write_snapshot(cmd, args.out);
  std::cout << "mlm_top1\t" << rcm::format_double(stats.mlm_top1) << "\nnfp_accuracy\t"
            << rcm::format_double(stats.nfp_accuracy) << "\nwrote " << args.out << "\n";
}

// ------------------------------------------------------------- find-scale

struct ScaleArgs {
  std::string data;
  ModelArgs model;
  std::string feature_map;
  rcm::ScaleSearchConfig search;
  bool linear = false;
  std::string out;
};

void run_find_scale(const ScaleArgs& args, const CLI::App& cmd) {
  const rcm::ChannelGrid grid = rcm::load_cfrd(args.data);
  const Loaded l = load_model(args.model);
  const rcm::FeatureMap map = rcm::load_feature_map(args.feature_map);
  if (!(rcm::build_feature_map(grid) == map))
    throw std::invalid_argument(
        "target layout does not match the source feature map; transfer refused");

  rcm::ScaleSearchConfig cfg = args.search;
  cfg.log_spacing = !args.linear;
  const rcm::ScaleSearchResult result = rcm::find_scale(l.ckpt.params, l.vocab, grid, cfg);

  std::ofstream out = open_out(args.out);
  for (const rcm::ScalePoint& p : result.trace)
    out << rcm::format_double(p.scale) << '\t' << rcm::format_double(p.perplexity) << '\n';
  out << "# best\t" << rcm::format_double(result.best_scale) << '\t'
      << rcm::format_double(result.best_perplexity) << '\n';
  write_snapshot(cmd, args.out);
  std::cout << "best_scale\t" << rcm::format_double(result.best_scale)
            << "\nbest_perplexity\t" << rcm::format_double(result.best_perplexity)
            << "\nwrote " << args.out << "\n";
}

// ----------------------------------------------------------------- detect

struct DetectArgs {
  std::string data;
  ModelArgs model;
  std::uint32_t threads = 1;
  bool force_mitigate = false;
  std::string mitigate_out;
  std::string out;
};

void run_detect(const DetectArgs& args, const CLI::App& cmd) {
  const rcm::ChannelGrid grid = rcm::load_cfrd(args.data);
  const Loaded l = load_model(args.model);
  if (grid.frames() < 2) throw std::invalid_argument("detection needs at least two frames");

  const std::uint32_t pairs = grid.frames() - 1;
  std::vector<rcm::ContaminationReport> reports(pairs);
  rcm::parallel_shards(pairs, args.threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo; t < hi; ++t) {
      const rcm::SequenceExample seq =
          rcm::assemble_sequence(grid, {std::uint32_t(t), std::uint32_t(t) + 1}, l.vocab);
      reports[t] = rcm::detect_contamination(l.ckpt.params, seq);
    }
  });

  std::ofstream out = open_out(args.out);
  out << "# t0\tt1\tdecision\tmargin\n";
  std::size_t flagged = 0;
  for (std::uint32_t t = 0; t < pairs; ++t) {
    out << t << '\t' << t + 1 << '\t'
        << (reports[t].anomalous ? "anomalous" : "consecutive") << '\t'
        << rcm::format_double(reports[t].logit_margin) << '\n';
    if (reports[t].anomalous) ++flagged;
  }

  if (!args.mitigate_out.empty()) {
    rcm::ChannelGrid corrected = grid;
    for (std::uint32_t t = 0; t < pairs; ++t) {
      if (!reports[t].anomalous && !args.force_mitigate) continue;
      const rcm::SequenceExample seq = rcm::assemble_sequence(grid, {t, t + 1}, l.vocab);
      const auto values = rcm::mitigate_contamination(l.ckpt.params, l.vocab, seq);
      for (std::uint32_t a = 0; a < grid.antennas(); ++a)
        for (std::uint32_t s = 0; s < grid.subcarriers(); ++s)
          corrected.at(s, t + 1, a) = values[std::size_t(a) * grid.subcarriers() + s];
    }
    rcm::save_cfrd(corrected, args.mitigate_out);
  }

  write_snapshot(cmd, args.out);
  std::cout << "pairs\t" << pairs << "\nanomalous\t" << flagged << "\nwrote " << args.out
            << "\n";
}

// --------------------------------------------------------------- compress

struct CompressArgs {
  std::string data;
  ModelArgs model;
  std::uint32_t batch = 12;
  std::uint32_t threads = 1;
  std::string out;
};

void run_compress(const CompressArgs& args, const CLI::App& cmd) {
  const rcm::ChannelGrid grid = rcm::load_cfrd(args.data);
  const Loaded l = load_model(args.model);
  if (args.batch == 0) throw std::invalid_argument("--batch must be positive");

  const std::vector<rcm::SequenceExample> seqs = pair_sequences(grid, l.vocab, false);
  if (seqs.size() < args.batch)
    throw std::invalid_argument("dataset yields " + std::to_string(seqs.size()) +
                                " sequences; need at least one full batch of " +
                                std::to_string(args.batch));

  rcm::CompressionDims dims;
  dims.ns = grid.subcarriers();
  dims.nt = 2;
  dims.nr = grid.antennas();
  dims.nc = 2;
  dims.nb = args.batch;
  dims.h = l.ckpt.params.config.hidden_size;
  const rcm::Ratio gamma = rcm::compression_ratio(dims);
  const std::string gamma_text =
      gamma.den == 1 ? std::to_string(gamma.num)
                     : std::to_string(gamma.num) + "/" + std::to_string(gamma.den);

  std::ofstream out = open_out(args.out);
  out << "# gamma\t" << gamma_text << '\n';
  for (std::size_t start = 0; start + args.batch <= seqs.size(); start += args.batch) {
    const std::vector<rcm::SequenceExample> group(seqs.begin() + std::ptrdiff_t(start),
                                                  seqs.begin() +
                                                      std::ptrdiff_t(start + args.batch));
    const rcm::Mat rep = rcm::compress(l.ckpt.params, group, args.threads);
    out << start / args.batch;
    for (Eigen::Index j = 0; j < rep.cols(); ++j)
      out << '\t' << rcm::format_double(rep(0, j));
    out << '\n';
  }
  write_snapshot(cmd, args.out);
  std::cout << "gamma = " << gamma_text << "\nwrote " << args.out << "\n";
}

// ------------------------------------------------------------ fingerprint

struct FingerprintArgs {
  std::string data;
  ModelArgs model;
  std::uint32_t window = 8;
  std::uint32_t stride = 1;
  std::uint32_t threads = 1;
  std::string out;
};

void run_fingerprint(const FingerprintArgs& args, const CLI::App& cmd) {
  const rcm::ChannelGrid grid = rcm::load_cfrd(args.data);
  const Loaded l = load_model(args.model);
  if (args.window == 0 || args.stride == 0)
    throw std::invalid_argument("--window and --stride must be positive");

  const std::vector<rcm::SequenceExample> seqs = pair_sequences(grid, l.vocab, true);
  if (seqs.size() < args.window)
    throw std::invalid_argument("dataset yields " + std::to_string(seqs.size()) +
                                " sequences; the fingerprint window needs " +
                                std::to_string(args.window));

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + args.window <= seqs.size(); s += args.stride)
    starts.push_back(s);

  std::vector<rcm::Fingerprint> prints(starts.size());
  rcm::parallel_shards(starts.size(), args.threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const std::vector<rcm::SequenceExample> window(
          seqs.begin() + std::ptrdiff_t(starts[i]),
          seqs.begin() + std::ptrdiff_t(starts[i] + args.window));
      prints[i] = rcm::fingerprint(l.ckpt.params, window, starts[i], args.window);
    }
  });

  std::ofstream out = open_out(args.out);
  for (const rcm::Fingerprint& fp : prints) {
    out << fp.window_start;
    for (Eigen::Index j = 0; j < fp.vector.cols(); ++j)
      out << '\t' << rcm::format_double(fp.vector(0, j));
    out << '\n';
  }
  write_snapshot(cmd, args.out);
  std::cout << "fingerprints\t" << prints.size() << "\nwrote " << args.out << "\n";
}

// ------------------------------------------------------------------ chart

struct ChartArgs {
  std::vector<std::string> fingerprints;
  rcm::TsneConfig tsne;
  std::string out;
};

std::vector<rcm::Fingerprint> read_fingerprints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw rcm::data_format_error("cannot open " + path);
  std::vector<rcm::Fingerprint> prints;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string field;
    if (!std::getline(fields, field, '\t'))
      throw rcm::data_format_error("malformed fingerprint line in " + path);
    rcm::Fingerprint fp;
    fp.window_start = parse_uint(field, "window start");
    std::vector<double> values;
    while (std::getline(fields, field, '\t'))
      values.push_back(rcm::parse_double(field, "fingerprint value"));
    if (values.empty())
      throw rcm::data_format_error("fingerprint line without values in " + path);
    fp.vector = rcm::Mat(1, Eigen::Index(values.size()));
    for (std::size_t j = 0; j < values.size(); ++j)
      fp.vector(0, Eigen::Index(j)) = values[j];
    prints.push_back(std::move(fp));
  }
  if (prints.empty()) throw rcm::data_format_error("no fingerprints in " + path);
  return prints;
}

void run_chart(const ChartArgs& args, const CLI::App& cmd) {
  std::vector<rcm::Fingerprint> prints;
  std::vector<std::uint32_t> labels;
  for (std::size_t file = 0; file < args.fingerprints.size(); ++file) {
    for (rcm::Fingerprint& fp : read_fingerprints(args.fingerprints[file])) {
      prints.push_back(std::move(fp));
      labels.push_back(std::uint32_t(file));
    }
  }
  const rcm::TsneResult result = rcm::tsne_chart(prints, labels, args.tsne);

  double entropy_err = 0.0;
  const double target_bits = std::log2(args.tsne.perplexity);
  for (const double bits : result.entropy_bits)
    entropy_err = std::max(entropy_err, std::abs(bits - target_bits));

  std::ofstream out = open_out(args.out);
  out << "# kl_initial\t" << rcm::format_double(result.initial_kl) << '\n';
  out << "# kl_final\t" << rcm::format_double(result.final_kl) << '\n';
  out << "# entropy_bits_max_err\t" << rcm::format_double(entropy_err) << '\n';
  for (const rcm::ChartPoint& p : result.points)
    out << rcm::format_double(p.x) << '\t' << rcm::format_double(p.y) << '\t' << p.label
        << '\t' << p.size_rank << '\n';
  write_snapshot(cmd, args.out);
  std::cout << "points\t" << result.points.size() << "\nkl_final\t"
            << rcm::format_double(result.final_kl) << "\nwrote " << args.out << "\n";
}

// -------------------------------------------------------------- attention

struct AttentionArgs {
  std::string data;
  ModelArgs model;
  std::uint32_t pair = 0;
  std::uint32_t radius = 5;
  std::string out;
};

void run_attention(const AttentionArgs& args, const CLI::App& cmd) {
  const rcm::ChannelGrid grid = rcm::load_cfrd(args.data);
  const Loaded l = load_model(args.model);
  if (args.pair + 1 >= grid.frames())
    throw std::invalid_argument("--pair must leave a following frame");

  const rcm::SequenceExample seq =
      rcm::assemble_sequence(grid, {args.pair, args.pair + 1}, l.vocab);
  const auto profiles = rcm::attention_domain_profile(l.ckpt.params, seq, args.radius);
  const rcm::AttentionBucketShares sizes = rcm::attention_bucket_sizes(seq, args.radius);

  std::ofstream out = open_out(args.out);
  out << "# layer\thead\tfreq_local\tcross_time\tcross_antenna\tspecial\n";
  out << "# sizes\t-\t" << rcm::format_double(sizes.freq_local) << '\t'
      << rcm::format_double(sizes.cross_time) << '\t'
      << rcm::format_double(sizes.cross_antenna) << '\t'
      << rcm::format_double(sizes.special) << '\n';
  const rcm::HeadProfile* best_local = nullptr;
  const rcm::HeadProfile* best_time = nullptr;
  for (const rcm::HeadProfile& p : profiles) {
    out << p.layer << '\t' << p.head << '\t' << rcm::format_double(p.shares.freq_local)
        << '\t' << rcm::format_double(p.shares.cross_time) << '\t'
        << rcm::format_double(p.shares.cross_antenna) << '\t'
        << rcm::format_double(p.shares.special) << '\n';
    if (!best_local || p.shares.freq_local > best_local->shares.freq_local) best_local = &p;
    if (!best_time || p.shares.cross_time > best_time->shares.cross_time) best_time = &p;
  }
  out << "# max_freq_local\t" << best_local->layer << '\t' << best_local->head << '\n';
  out << "# max_cross_time\t" << best_time->layer << '\t' << best_time->head << '\n';
  write_snapshot(cmd, args.out);
  std::cout << "heads\t" << profiles.size() << "\nwrote " << args.out << "\n";
}

// ----------------------------------------------------------------- verify

struct VerifyArgs {
  std::string data;
  bool expect_static = false;
  bool gradcheck = false;
  double gradcheck_tol = 1e-4;
  std::uint64_t seed = 17;
  std::string out;
};

// Finite-difference sweep over every element of every tensor on a small
// fixed configuration; returns the worst relative error. The error of
// element j is |fd - analytic| / (max(|fd|, |analytic|) + 1e-4): central
// differences on a loss of order one carry about 1e-10 of roundoff at
// h = 1e-5, and the additive term keeps that noise from dominating the
// ratio where the true gradient is near zero (an absolute tolerance of
// 1e-8 at the default relative tolerance of 1e-4).
double gradcheck_max_err(std::uint64_t seed, std::size_t* param_count) {
  rcm::ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_size = 16;
  cfg.num_heads = 2;
  cfg.ffn_size = 32;
  cfg.vocab_size = 32;
  cfg.max_freq_features = 4;
  cfg.max_time_features = 2;
  cfg.max_antenna_features = 2;
  cfg.max_seq_len = 16;
  cfg.dropout_rate = 0.0;
  rcm::ModelParameters params = rcm::init_parameters(cfg, seed);

  rcm::SequenceExample seq;
  seq.token_ids = {rcm::kClsToken, 7, 9, 12, 3, 11, 13, 3, 6, 21, 3, 30, 3};
  seq.freq_ids = {0, 1, 2, 3, 0, 1, 2, 0, 1, 2, 0, 1, 0};
  seq.time_ids = {0, 1, 1, 1, 0, 1, 1, 0, 2, 2, 0, 2, 0};
  seq.antenna_ids = {0, 1, 1, 1, 0, 2, 2, 0, 1, 1, 0, 2, 0};
  seq.is_special = {1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1};

  const std::vector<std::size_t> positions = {1, 2, 5, 8};
  const std::vector<std::uint32_t> targets = {9, 12, 11, 21};
  const int nfp_label = 1;

  auto loss_of = [&](const rcm::ModelParameters& p, rcm::Mat* d_mlm, rcm::Mat* d_nfp,
                     rcm::ForwardTrace* trace_out) {
    const rcm::ForwardTrace trace = rcm::forward(p, seq);
    const rcm::Mat logits = rcm::mlm_logits(p, trace, positions);
    double loss = 0.0;
    if (d_mlm) *d_mlm = rcm::Mat::Zero(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
      loss += lse - logits(i, targets[std::size_t(i)]);
      if (d_mlm) {
        for (Eigen::Index v = 0; v < logits.cols(); ++v)
          (*d_mlm)(i, v) = std::exp(logits(i, v) - lse);
        (*d_mlm)(i, targets[std::size_t(i)]) -= 1.0;
      }
    }
    const std::array<double, 2> nfp = rcm::nfp_logits(p, trace);
    const double mx = std::max(nfp[0], nfp[1]);
    const double lse = mx + std::log(std::exp(nfp[0] - mx) + std::exp(nfp[1] - mx));
    loss += lse - nfp[nfp_label];
    if (d_nfp) {
      *d_nfp = rcm::Mat(1, 2);
      (*d_nfp)(0, 0) = std::exp(nfp[0] - lse) - (nfp_label == 0 ? 1.0 : 0.0);
      (*d_nfp)(0, 1) = std::exp(nfp[1] - lse) - (nfp_label == 1 ? 1.0 : 0.0);
    }
    if (trace_out) *trace_out = trace;
    return loss;
  };

  rcm::Mat d_mlm, d_nfp;
  rcm::ForwardTrace trace;
  loss_of(params, &d_mlm, &d_nfp, &trace);
  rcm::ModelParameters grads = rcm::zeros_like(params);
  rcm::backward(params, trace, positions, d_mlm, d_nfp, grads);

  const double h = 1e-5;
  const double noise_floor = 1e-4;
  double worst = 0.0;
  std::size_t count = 0;
  auto tensors = params.tensor_list();
  auto grad_tensors = grads.tensor_list();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    rcm::Mat* mat = tensors[t].second;
    for (Eigen::Index j = 0; j < mat->size(); ++j) {
      const double saved = mat->data()[j];
      mat->data()[j] = saved + h;
      const double up = loss_of(params, nullptr, nullptr, nullptr);
      mat->data()[j] = saved - h;
      const double down = loss_of(params, nullptr, nullptr, nullptr);
      mat->data()[j] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double analytic = grad_tensors[t].second->data()[j];
      const double denom = std::max(std::abs(fd), std::abs(analytic)) + noise_floor;
      worst = std::max(worst, std::abs(fd - analytic) / denom);
      ++count;
    }
  }
  if (param_count) *param_count = count;
  return worst;
}

void run_verify(const VerifyArgs& args, const CLI::App& cmd) {
  std::ofstream out = open_out(args.out);
  bool failed = false;
  std::string failure;

  if (!args.data.empty()) {
    const rcm::ChannelGrid grid = rcm::load_cfrd(args.data);
    bool finite = true;
    for (const rcm::cplx& v : grid.values)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) finite = false;
    bool identical = true;
    for (std::uint32_t t = 1; t < grid.frames() && identical; ++t)
      for (std::uint32_t a = 0; a < grid.antennas() && identical; ++a)
        for (std::uint32_t s = 0; s < grid.subcarriers(); ++s)
          if (grid.at(s, t, a) != grid.at(s, 0, a)) {
            identical = false;
            break;
          }
    out << "subcarriers\t" << grid.subcarriers() << '\n';
    out << "frames\t" << grid.frames() << '\n';
    out << "antennas\t" << grid.antennas() << '\n';
    out << "finite\t" << (finite ? 1 : 0) << '\n';
    out << "frames_identical\t" << (identical ? 1 : 0) << '\n';
    out << "mean_power\t" << rcm::format_double(grid.mean_power()) << '\n';
    if (args.expect_static && !identical) {
      failed = true;
      failure = "frames differ although the dataset was expected to be static";
    }
    if (!finite) {
      failed = true;
      failure = "dataset contains non-finite values";
    }
  }

  if (args.gradcheck) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t count = 0;
    const double worst = gradcheck_max_err(args.seed, &count);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "gradcheck_params\t" << count << '\n';
    out << "gradcheck_max_rel_err\t" << rcm::format_double(worst) << '\n';
    out << "gradcheck_pass\t" << (worst <= args.gradcheck_tol ? 1 : 0) << '\n';
    std::cout << "gradcheck took " << seconds << " s over " << count << " parameters\n";
    if (worst > args.gradcheck_tol) {
      failed = true;
      failure = "gradient check exceeded the tolerance: max relative error " +
                rcm::format_double(worst);
    }
  }

  out.close();
  write_snapshot(cmd, args.out);
  std::cout << "wrote " << args.out << "\n";
  if (failed) throw rcm::numeric_error(failure);
}

// ------------------------------------------------------------------ adapt

struct AdaptArgs {
  std::vector<std::string> data;
  ModelArgs model;
  std::string feature_map;
  double scale = 1.0;
  rcm::PretrainConfig train;
  bool steps_given = false;
  std::string out;
  std::string metrics;
};

void run_adapt(AdaptArgs& args, const CLI::App& cmd) {
  std::vector<rcm::ChannelGrid> grids = load_grids(args.data);
  const Loaded l = load_model(args.model);
  const rcm::FeatureMap map = rcm::load_feature_map(args.feature_map);

  if (args.scale != 1.0)
    for (rcm::ChannelGrid& g : grids) g = rcm::scale_channel(g, args.scale);

  if (!args.steps_given)
    args.train.total_steps =
        derive_total_steps(args.train, eligible_refs(grids, args.train.negative_min_gap).size());

  std::vector<const rcm::ChannelGrid*> ptrs;
  for (const rcm::ChannelGrid& g : grids) ptrs.push_back(&g);

  std::ofstream metrics = open_out(args.metrics);
  const rcm::ModelParameters adapted =
      rcm::transfer_adapt(l.ckpt.params, l.vocab, ptrs, map, args.train, &metrics);
  rcm::save_checkpoint(adapted, args.out);
  write_snapshot(cmd, args.out);
  std::cout << "steps\t" << args.train.total_steps << "\nwrote " << args.out << "\n";
}

// --------------------------------------------------------------- finetune

struct FinetuneArgs {
  std::vector<std::string> data;
  ModelArgs model;
  std::string task = "files";
  rcm::FineTuneConfig train;
  bool steps_given = false;
  std::uint32_t neg_gap = 10;
  std::string save_classifier;
  std::string out;
};

void run_finetune(FinetuneArgs& args, const CLI::App& cmd) {
  const std::vector<rcm::ChannelGrid> grids = load_grids(args.data);
  const Loaded l = load_model(args.model);

  std::vector<rcm::LabeledExample> examples;
  std::uint32_t num_classes = 0;
  if (args.task == "files") {
    if (grids.size() < 2)
      throw std::invalid_argument("the files task needs at least two --data files");
    num_classes = std::uint32_t(grids.size());
    for (std::size_t g = 0; g < grids.size(); ++g)
      for (rcm::SequenceExample& seq : pair_sequences(grids[g], l.vocab, true))
        examples.push_back({std::move(seq), std::uint32_t(g)});
  } else if (args.task == "nfp") {
    num_classes = 2;
    rcm::PretrainConfig ex_cfg;
    ex_cfg.negative_min_gap = args.neg_gap;
    const auto refs = eligible_refs(grids, args.neg_gap);
    if (refs.empty())
      throw std::invalid_argument("no frame pair in the dataset supports the nfp task");
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& [g, t0] = refs[i];
      rcm::CounterRng rng(args.train.seed, rcm::RngPurpose::kFineTune, 100, i, 0);
      rcm::TrainingExample ex = rcm::make_nfp_pair(grids[g], t0, l.vocab, ex_cfg, rng);
      examples.push_back({std::move(ex.input), ex.nfp_consecutive ? 1u : 0u});
    }
  } else {
    throw std::invalid_argument("unknown task '" + args.task + "' (use files or nfp)");
  }

  if (!args.steps_given) {
    std::size_t holdout =
        std::max<std::size_t>(1, std::size_t(std::llround(args.train.holdout_fraction *
                                                          double(examples.size()))));
    holdout = std::min(holdout, examples.size() - 1);
    const std::size_t train_n = examples.size() - holdout;
    args.train.total_steps = std::uint32_t(
        std::size_t(args.train.epochs) *
        ((train_n + args.train.batch_size - 1) / args.train.batch_size));
  }

  const rcm::FineTuneResult result =
      rcm::fine_tune_classifier(l.ckpt.params, examples, num_classes, args.train);

  std::ofstream out = open_out(args.out);
  out << "task\t" << args.task << '\n';
  out << "examples\t" << examples.size() << '\n';
  out << "classes\t" << num_classes << '\n';
  out << "steps\t" << result.steps << '\n';
  out << "holdout\t" << result.holdout_size << '\n';
  out << "holdout_accuracy\t" << rcm::format_double(result.holdout_accuracy) << '\n';

  if (!args.save_classifier.empty()) {
    std::vector<std::pair<std::string, rcm::Mat>> extra;
    extra.emplace_back("head.w", result.classifier.head_w);
    extra.emplace_back("head.b", result.classifier.head_b);
    rcm::save_checkpoint(result.classifier.params, args.save_classifier, extra);
  }
  write_snapshot(cmd, args.out);
  std::cout << "holdout_accuracy\t" << rcm::format_double(result.holdout_accuracy)
            << "\nwrote " << args.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rcm: pretrained realistic channel model toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string config_sink;

  // ------------------------------------------------------------- simulate
  SimArgs sim;
  sim.out = default_out("dataset.cfrd");
  CLI::App* c_sim = app.add_subcommand("simulate", "generate a synthetic CFR dataset");
  c_sim->add_option("--config", config_sink, "key = value config file; flags win");
  c_sim->add_option("--subcarriers", sim.subcarriers, "OFDM subcarriers");
  c_sim->add_option("--spacing", sim.spacing, "subcarrier spacing in Hz");
  c_sim->add_option("--frames", sim.frames, "time frames");
  c_sim->add_option("--interval", sim.interval, "frame interval in seconds");
  c_sim->add_option("--antennas", sim.antennas, "receive antennas");
  c_sim->add_option("--carrier", sim.carrier, "carrier frequency in Hz");
  c_sim->add_option("--speed", sim.speed, "user speed in m/s (0 freezes fading)");
  c_sim->add_option("--rho", sim.rho, "antenna correlation coefficient");
  c_sim->add_option("--pdp-taps", sim.pdp_taps, "exponential profile taps (0: one flat tap)");
  c_sim->add_option("--pdp-spacing", sim.pdp_spacing, "tap spacing in seconds");
  c_sim->add_option("--pdp-spread", sim.pdp_spread, "rms delay spread in seconds");
  c_sim->add_option("--seed", sim.seed, "generator seed");
  c_sim->add_option("--scale", sim.scale, "multiply every coefficient after generation");
  c_sim->add_option("--contaminate-frame", sim.contaminate, "frame to contaminate (repeatable)");
  c_sim->add_option("--sir-db", sim.sir_db, "signal-to-interference ratio in dB");
  CLI::Option* iseed =
      c_sim->add_option("--interferer-seed", sim.interferer_seed, "interferer seed (default seed+1)");
  c_sim->add_option("--out", sim.out, "dataset path");
  c_sim->callback([&] {
    sim.interferer_seed_set = iseed->count() > 0;
    run_simulate(sim, *c_sim);
  });

  // ------------------------------------------------------------- pretrain
  TrainArgs tr;
  tr.out = default_out("model.rcmp");
  tr.vocab = default_out("vocab.rcmv");
  CLI::App* c_tr = app.add_subcommand("pretrain", "pretrain the channel model");
  c_tr->add_option("--config", config_sink, "key = value config file; flags win");
  c_tr->add_option("--data", tr.data, "training dataset (repeatable)")->required();
  c_tr->add_option("--vocab", tr.vocab, "vocabulary path (built and saved if missing)");
  c_tr->add_option("--vocab-size", tr.vocab_size, "vocabulary size when building");
  c_tr->add_option("--layers", tr.layers, "encoder layers");
  c_tr->add_option("--hidden", tr.hidden, "hidden size");
  c_tr->add_option("--heads", tr.heads, "attention heads");
  c_tr->add_option("--ffn", tr.ffn, "feed-forward size");
  c_tr->add_option("--dropout", tr.dropout, "dropout rate");
  c_tr->add_option("--batch", tr.train.batch_size, "batch size");
  c_tr->add_option("--mask-rate", tr.train.mask_rate, "masking rate");
  c_tr->add_option("--neg-rate", tr.train.nfp_negative_rate, "negative pair rate");
  c_tr->add_option("--neg-gap", tr.train.negative_min_gap, "negative pair minimum gap");
  c_tr->add_option("--epochs", tr.train.epochs, "training epochs");
  CLI::Option* steps_opt =
      c_tr->add_option("--steps", tr.train.total_steps, "total steps (default: epochs cover the data)");
  c_tr->add_option("--warmup", tr.train.warmup_steps, "warmup steps");
  c_tr->add_option("--lr", tr.train.learning_rate_peak, "peak learning rate");
  c_tr->add_option("--clip", tr.train.grad_clip_norm, "gradient clip norm (0 disables)");
  c_tr->add_option("--eval-examples", tr.train.eval_examples, "held-in eval examples per epoch");
  c_tr->add_option("--checkpoint-every", tr.train.checkpoint_every, "periodic checkpoint stride");
  c_tr->add_option("--checkpoint-path", tr.train.checkpoint_path,
                   "periodic checkpoint target (default: <out>)");
  c_tr->add_option("--resume", tr.resume, "checkpoint to continue from");
  c_tr->add_option("--threads", tr.train.threads, "worker threads");
  c_tr->add_option("--seed", tr.train.seed, "training seed");
  c_tr->add_option("--out", tr.out, "checkpoint path");
  c_tr->add_option("--metrics", tr.metrics, "metrics path (default: <out>.metrics)");
  c_tr->add_option("--feature-map", tr.feature_map,
                   "source layout record (default: <out>.fmap)");
  c_tr->callback([&] {
    tr.steps_given = steps_opt->count() > 0;
    if (tr.metrics.empty()) tr.metrics = tr.out + ".metrics";
    if (tr.feature_map.empty()) tr.feature_map = tr.out + ".fmap";
    run_pretrain(tr, *c_tr);
  });

  // ----------------------------------------------------------------- eval
  EvalArgs ev;
  ev.out = default_out("eval.tsv");
  CLI::App* c_ev = app.add_subcommand("eval", "score a model on held-out data");
  c_ev->add_option("--config", config_sink, "key = value config file; flags win");
  c_ev->add_option("--data", ev.data, "evaluation dataset (repeatable)")->required();
  c_ev->add_option("--checkpoint", ev.model.checkpoint, "model checkpoint")->required();
  c_ev->add_option("--vocab", ev.model.vocab, "vocabulary path")->required();
  c_ev->add_option("--examples", ev.examples, "evaluation examples");
  c_ev->add_option("--mask-rate", ev.mask_rate, "masking rate");
  c_ev->add_option("--neg-rate", ev.neg_rate, "negative pair rate");
  c_ev->add_option("--neg-gap", ev.neg_gap, "negative pair minimum gap");
  c_ev->add_option("--perplexity-pairs", ev.perplexity_pairs,
                   "frame pairs scored for perplexity (0 skips)");
  c_ev->add_option("--threads", ev.threads, "worker threads");
  c_ev->add_option("--seed", ev.seed, "example construction seed");
  c_ev->add_option("--out", ev.out, "report path");
  c_ev->callback([&] { run_eval(ev, *c_ev); });

  // ----------------------------------------------------------- find-scale
  ScaleArgs sc;
  sc.out = default_out("scale.tsv");
  CLI::App* c_sc = app.add_subcommand("find-scale", "search the power scale of a target dataset");
  c_sc->add_option("--config", config_sink, "key = value config file; flags win");
  c_sc->add_option("--data", sc.data, "target dataset")->required();
  c_sc->add_option("--checkpoint", sc.model.checkpoint, "model checkpoint")->required();
  c_sc->add_option("--vocab", sc.model.vocab, "vocabulary path")->required();
  c_sc->add_option("--feature-map", sc.feature_map, "source feature map (layout guard)")
      ->required();
  c_sc->add_option("--s-min", sc.search.s_min, "smallest scale");
  c_sc->add_option("--s-max", sc.search.s_max, "largest scale");
  c_sc->add_option("--points", sc.search.num_points, "grid points");
  c_sc->add_flag("--linear", sc.linear, "linear grid instead of logarithmic");
  c_sc->add_flag("--refine", sc.search.refine, "golden-section refinement");
  c_sc->add_option("--eval-sequences", sc.search.eval_sequences, "sequences scored per scale");
  c_sc->add_option("--threads", sc.search.threads, "worker threads");
  c_sc->add_option("--out", sc.out, "trace path (S<TAB>PP lines)");
  c_sc->callback([&] { run_find_scale(sc, *c_sc); });

  // --------------------------------------------------------------- detect
  DetectArgs de;
  de.out = default_out("detect.tsv");
  CLI::App* c_de = app.add_subcommand("detect", "flag contaminated frame pairs");
  c_de->add_option("--config", config_sink, "key = value config file; flags win");
  c_de->add_option("--data", de.data, "dataset to screen")->required();
  c_de->add_option("--checkpoint", de.model.checkpoint, "model checkpoint")->required();
  c_de->add_option("--vocab", de.model.vocab, "vocabulary path")->required();
  c_de->add_option("--threads", de.threads, "worker threads");
  c_de->add_flag("--force-mitigate", de.force_mitigate, "reconstruct every pair");
  c_de->add_option("--mitigate-out", de.mitigate_out, "write the corrected dataset here");
  c_de->add_option("--out", de.out, "report path");
  c_de->callback([&] { run_detect(de, *c_de); });

  // ------------------------------------------------------------- compress
  CompressArgs co;
  co.out = default_out("compress.tsv");
  CLI::App* c_co = app.add_subcommand("compress", "pool sequences into fixed representations");
  c_co->add_option("--config", config_sink, "key = value config file; flags win");
  c_co->add_option("--data", co.data, "dataset")->required();
  c_co->add_option("--checkpoint", co.model.checkpoint, "model checkpoint")->required();
  c_co->add_option("--vocab", co.model.vocab, "vocabulary path")->required();
  c_co->add_option("--batch", co.batch, "sequences per representation");
  c_co->add_option("--threads", co.threads, "worker threads");
  c_co->add_option("--out", co.out, "report path");
  c_co->callback([&] { run_compress(co, *c_co); });

  // ---------------------------------------------------------- fingerprint
  FingerprintArgs fp;
  fp.out = default_out("fingerprints.tsv");
  CLI::App* c_fp = app.add_subcommand("fingerprint", "emit windowed channel fingerprints");
  c_fp->add_option("--config", config_sink, "key = value config file; flags win");
  c_fp->add_option("--data", fp.data, "dataset")->required();
  c_fp->add_option("--checkpoint", fp.model.checkpoint, "model checkpoint")->required();
  c_fp->add_option("--vocab", fp.model.vocab, "vocabulary path")->required();
  c_fp->add_option("--window", fp.window, "sequences per fingerprint");
  c_fp->add_option("--stride", fp.stride, "window stride");
  c_fp->add_option("--threads", fp.threads, "worker threads");
  c_fp->add_option("--out", fp.out, "fingerprint file");
  c_fp->callback([&] { run_fingerprint(fp, *c_fp); });

  // ----------------------------------------------------------------- chart
  ChartArgs ch;
  ch.out = default_out("chart.tsv");
  CLI::App* c_ch = app.add_subcommand("chart", "t-SNE chart of fingerprints");
  c_ch->add_option("--config", config_sink, "key = value config file; flags win");
  c_ch->add_option("--fingerprints", ch.fingerprints,
                   "fingerprint file (repeatable; file index becomes the label)")
      ->required();
  c_ch->add_option("--perplexity", ch.tsne.perplexity, "t-SNE perplexity");
  c_ch->add_option("--iterations", ch.tsne.iterations, "descent iterations");
  c_ch->add_option("--lr", ch.tsne.learning_rate, "descent learning rate");
  c_ch->add_option("--seed", ch.tsne.seed, "layout seed");
  c_ch->add_option("--out", ch.out, "chart path (x<TAB>y<TAB>label<TAB>size_rank)");
  c_ch->callback([&] { run_chart(ch, *c_ch); });

  // -------------------------------------------------------------- attention
  AttentionArgs at;
  at.out = default_out("attention.tsv");
  CLI::App* c_at = app.add_subcommand("attention", "attention-domain profile per head");
  c_at->add_option("--config", config_sink, "key = value config file; flags win");
  c_at->add_option("--data", at.data, "dataset")->required();
  c_at->add_option("--checkpoint", at.model.checkpoint, "model checkpoint")->required();
  c_at->add_option("--vocab", at.model.vocab, "vocabulary path")->required();
  c_at->add_option("--pair", at.pair, "first frame of the profiled pair");
  c_at->add_option("--radius", at.radius, "freq-local bucket radius in subcarriers");
  c_at->add_option("--out", at.out, "report path");
  c_at->callback([&] { run_attention(at, *c_at); });

  // ----------------------------------------------------------------- verify
  VerifyArgs ve;
  ve.out = default_out("verify.tsv");
  CLI::App* c_ve = app.add_subcommand("verify", "check datasets and gradients");
  c_ve->add_option("--config", config_sink, "key = value config file; flags win");
  c_ve->add_option("--data", ve.data, "dataset to inspect");
  c_ve->add_flag("--expect-static", ve.expect_static, "fail unless all frames are identical");
  c_ve->add_flag("--gradcheck", ve.gradcheck, "finite-difference sweep on a small model");
  c_ve->add_option("--gradcheck-tol", ve.gradcheck_tol, "max relative error allowed");
  c_ve->add_option("--seed", ve.seed, "gradcheck model seed");
  c_ve->add_option("--out", ve.out, "report path");
  c_ve->callback([&] {
    if (ve.data.empty() && !ve.gradcheck)
      throw CLI::ValidationError("verify", "nothing to do: pass --data and/or --gradcheck");
    run_verify(ve, *c_ve);
  });

  // ------------------------------------------------------------------ adapt
  AdaptArgs ad;
  ad.out = default_out("adapted.rcmp");
  CLI::App* c_ad = app.add_subcommand("adapt", "continue pretraining on scaled target data");
  c_ad->add_option("--config", config_sink, "key = value config file; flags win");
  c_ad->add_option("--data", ad.data, "target dataset (repeatable)")->required();
  c_ad->add_option("--checkpoint", ad.model.checkpoint, "source checkpoint")->required();
  c_ad->add_option("--vocab", ad.model.vocab, "vocabulary path")->required();
  c_ad->add_option("--feature-map", ad.feature_map, "source feature map (layout guard)")
      ->required();
  c_ad->add_option("--scale", ad.scale, "normalizer applied to the target first");
  c_ad->add_option("--batch", ad.train.batch_size, "batch size");
  c_ad->add_option("--mask-rate", ad.train.mask_rate, "masking rate");
  c_ad->add_option("--neg-rate", ad.train.nfp_negative_rate, "negative pair rate");
  c_ad->add_option("--neg-gap", ad.train.negative_min_gap, "negative pair minimum gap");
  c_ad->add_option("--epochs", ad.train.epochs, "adaptation epochs");
  CLI::Option* ad_steps =
      c_ad->add_option("--steps", ad.train.total_steps, "total steps (default: epochs cover the data)");
  c_ad->add_option("--warmup", ad.train.warmup_steps, "warmup steps");
  c_ad->add_option("--lr", ad.train.learning_rate_peak, "peak learning rate");
  c_ad->add_option("--threads", ad.train.threads, "worker threads");
  c_ad->add_option("--seed", ad.train.seed, "adaptation seed");
  c_ad->add_option("--out", ad.out, "adapted checkpoint path");
  c_ad->add_option("--metrics", ad.metrics, "metrics path (default: <out>.metrics)");
  c_ad->callback([&] {
    ad.steps_given = ad_steps->count() > 0;
    if (ad.metrics.empty()) ad.metrics = ad.out + ".metrics";
    run_adapt(ad, *c_ad);
  });

  // --------------------------------------------------------------- finetune
  FinetuneArgs ft;
  ft.out = default_out("finetune.tsv");
  CLI::App* c_ft = app.add_subcommand("finetune", "train a task head on the pooled output");
  c_ft->add_option("--config", config_sink, "key = value config file; flags win");
  c_ft->add_option("--data", ft.data, "labeled dataset (repeatable)")->required();
  c_ft->add_option("--checkpoint", ft.model.checkpoint, "model checkpoint")->required();
  c_ft->add_option("--vocab", ft.model.vocab, "vocabulary path")->required();
  c_ft->add_option("--task", ft.task, "files (label = file index) or nfp");
  c_ft->add_option("--neg-gap", ft.neg_gap, "negative pair minimum gap (nfp task)");
  c_ft->add_option("--batch", ft.train.batch_size, "batch size");
  c_ft->add_option("--epochs", ft.train.epochs, "fine-tune epochs");
  CLI::Option* ft_steps =
      c_ft->add_option("--steps", ft.train.total_steps, "total steps (default: epochs cover the data)");
  c_ft->add_option("--warmup", ft.train.warmup_steps, "warmup steps");
  c_ft->add_option("--lr", ft.train.learning_rate_peak, "peak learning rate");
  c_ft->add_option("--holdout", ft.train.holdout_fraction, "held-out fraction");
  c_ft->add_option("--threads", ft.train.threads, "worker threads");
  c_ft->add_option("--seed", ft.train.seed, "fine-tune seed");
  c_ft->add_option("--save-classifier", ft.save_classifier, "write backbone+head checkpoint");
  c_ft->add_option("--out", ft.out, "report path");
  c_ft->callback([&] {
    ft.steps_given = ft_steps->count() > 0;
    run_finetune(ft, *c_ft);
  });

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    layer_config_file(args);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const rcm::data_format_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const rcm::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::logic_error& e) {  // invalid_argument, out_of_range, ...
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
