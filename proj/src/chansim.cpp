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

#include "rcm/chansim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

#include "rcm/binio.hpp"
#include "rcm/errors.hpp"
#include "rcm/rng.hpp"

namespace rcm {
namespace {

constexpr double kSpeedOfLight = 299792458.0;
constexpr int kSinusoidsPerTap = 16;
constexpr std::uint32_t kMaxAntennas = 8;

// Cholesky factor of the exponential correlation matrix R[i][j] = rho^|i-j|.
// rho = 1 makes R singular (all-ones), so that case is handled explicitly
// with the rank-one factor whose first column is all ones.
Eigen::MatrixXd correlation_root(std::uint32_t n, double rho) {
  Eigen::MatrixXd root = Eigen::MatrixXd::Zero(n, n);
  if (rho == 1.0) {
    root.col(0).setOnes();
    return root;
  }
  Eigen::MatrixXd corr(n, n);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < n; ++j)
      corr(i, j) = std::pow(rho, std::abs(int(i) - int(j)));
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success)
    throw numeric_error("antenna correlation matrix is not positive definite");
  root = llt.matrixL();
  return root;
}

}  // namespace

void SimConfig::validate() const {
  if (num_subcarriers == 0) throw std::invalid_argument("num_subcarriers must be positive");
  if (!(subcarrier_spacing_hz > 0.0))
    throw std::invalid_argument("subcarrier_spacing_hz must be positive");
  if (num_frames == 0) throw std::invalid_argument("num_frames must be positive");
  if (!(frame_interval_s > 0.0)) throw std::invalid_argument("frame_interval_s must be positive");
  if (num_antennas == 0 || num_antennas > kMaxAntennas)
    throw std::invalid_argument("num_antennas must be in [1, 8]");
  if (!(carrier_freq_hz > 0.0)) throw std::invalid_argument("carrier_freq_hz must be positive");
  if (user_speed_mps < 0.0 || !std::isfinite(user_speed_mps))
    throw std::invalid_argument("user_speed_mps must be finite and non-negative");
  if (taps.empty()) throw std::invalid_argument("at least one tap is required");
  for (const TapSpec& tap : taps) {
    if (tap.delay_s < 0.0 || !std::isfinite(tap.delay_s))
      throw std::invalid_argument("tap delays must be finite and non-negative");
    if (!(tap.power > 0.0) || !std::isfinite(tap.power))
      throw std::invalid_argument("tap powers must be finite and positive");
  }
  if (antenna_correlation < 0.0 || antenna_correlation > 1.0)
    throw std::invalid_argument("antenna_correlation must be in [0, 1]");
}

double SimConfig::total_tap_power() const {
  double sum = 0.0;
  for (const TapSpec& tap : taps) sum += tap.power;
  return sum;
}

void SimConfig::normalize_taps() {
  const double total = total_tap_power();
  if (!(total > 0.0)) throw std::invalid_argument("total tap power must be positive");
  for (TapSpec& tap : taps) tap.power /= total;
}

std::vector<TapSpec> make_exponential_pdp(int num_taps, double tap_spacing_s,
                                          double rms_delay_spread_s) {
  if (num_taps < 1) throw std::invalid_argument("num_taps must be positive");
  if (!(tap_spacing_s > 0.0)) throw std::invalid_argument("tap_spacing_s must be positive");
  if (rms_delay_spread_s < 0.0)
    throw std::invalid_argument("rms_delay_spread_s must be non-negative");
  std::vector<TapSpec> taps(num_taps);
  double total = 0.0;
  for (int l = 0; l < num_taps; ++l) {
    taps[l].delay_s = l * tap_spacing_s;
    taps[l].power = (rms_delay_spread_s > 0.0)
                        ? std::exp(-taps[l].delay_s / rms_delay_spread_s)
                        : (l == 0 ? 1.0 : 0.0);
    total += taps[l].power;
  }
  if (rms_delay_spread_s == 0.0) taps.resize(1);
  for (TapSpec& tap : taps) tap.power /= total;
  return taps;
}

double ChannelGrid::mean_power() const {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (const cplx& v : values) sum += std::norm(v);
  return sum / double(values.size());
}

ChannelGrid generate_channel(const SimConfig& config) {
  config.validate();
  const std::uint32_t ns = config.num_subcarriers;
  const std::uint32_t nt = config.num_frames;
  const std::uint32_t na = config.num_antennas;
  const std::size_t nl = config.taps.size();
  const double doppler_hz = config.user_speed_mps * config.carrier_freq_hz / kSpeedOfLight;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  // Uncorrelated per-antenna tap gains from the Jakes sum-of-sinusoids
  // model: 16 equal-power rays, each with its own arrival angle and phase.
  // Every (tap, antenna, ray) triple owns a counter stream, so the result
  // does not depend on evaluation order.
  std::vector<cplx> raw(nl * na * nt);
  for (std::size_t l = 0; l < nl; ++l) {
    for (std::uint32_t a = 0; a < na; ++a) {
      double angle[kSinusoidsPerTap];
      double phase[kSinusoidsPerTap];
      for (int m = 0; m < kSinusoidsPerTap; ++m) {
        CounterRng rng(config.seed, RngPurpose::kSimPhases, l, a, std::uint64_t(m));
        angle[m] = rng.uniform(0.0, two_pi);
        phase[m] = rng.uniform(0.0, two_pi);
      }
      const double amp = std::sqrt(config.taps[l].power / kSinusoidsPerTap);
      for (std::uint32_t t = 0; t < nt; ++t) {
        const double time_s = t * config.frame_interval_s;
        cplx sum = 0.0;
        for (int m = 0; m < kSinusoidsPerTap; ++m) {
          const double arg = two_pi * doppler_hz * std::cos(angle[m]) * time_s + phase[m];
          sum += cplx(std::cos(arg), std::sin(arg));
        }
        raw[(l * na + a) * nt + t] = amp * sum;
      }
    }
  }

  const Eigen::MatrixXd root = correlation_root(na, config.antenna_correlation);

  ChannelGrid grid;
  grid.meta = config;
  grid.values.assign(std::size_t(ns) * nt * na, cplx(0.0, 0.0));
  for (std::uint32_t t = 0; t < nt; ++t) {
    for (std::uint32_t a = 0; a < na; ++a) {
      for (std::size_t l = 0; l < nl; ++l) {
        cplx gain = 0.0;
        for (std::uint32_t b = 0; b <= a; ++b)
          gain += root(a, b) * raw[(l * na + b) * nt + t];
        const double step = -two_pi * config.subcarrier_spacing_hz * config.taps[l].delay_s;
        for (std::uint32_t s = 0; s < ns; ++s) {
          const double arg = step * s;
          grid.at(s, t, a) += gain * cplx(std::cos(arg), std::sin(arg));
        }
      }
    }
  }
  return grid;
}

ChannelGrid inject_contamination(const ChannelGrid& grid, std::uint32_t frame_index,
                                 const ChannelGrid& interferer, double sir_db) {
  if (frame_index >= grid.frames())
    throw std::invalid_argument("contamination frame index out of range");
  if (interferer.subcarriers() != grid.subcarriers() ||
      interferer.antennas() != grid.antennas())
    throw std::invalid_argument("interferer grid dimensions do not match");
  ChannelGrid out = grid;
  if (sir_db == std::numeric_limits<double>::infinity()) return out;
  if (!std::isfinite(sir_db)) throw std::invalid_argument("sir_db must be finite or +inf");

  const std::uint32_t src_frame = frame_index % interferer.frames();
  double signal_power = 0.0;
  double interferer_power = 0.0;
  for (std::uint32_t a = 0; a < grid.antennas(); ++a) {
    for (std::uint32_t s = 0; s < grid.subcarriers(); ++s) {
      signal_power += std::norm(grid.at(s, frame_index, a));
      interferer_power += std::norm(interferer.at(s, src_frame, a));
    }
  }
  if (!(interferer_power > 0.0))
    throw numeric_error("interferer frame has zero power, cannot meet a finite SIR");
  if (!(signal_power > 0.0))
    throw numeric_error("target frame has zero power, SIR is undefined");

  const double alpha = std::sqrt(signal_power / (interferer_power * std::pow(10.0, sir_db / 10.0)));
  for (std::uint32_t a = 0; a < grid.antennas(); ++a)
    for (std::uint32_t s = 0; s < grid.subcarriers(); ++s)
      out.at(s, frame_index, a) += alpha * interferer.at(s, src_frame, a);
  return out;
}

std::vector<cplx> empirical_autocorrelation(const ChannelGrid& grid, GridAxis axis) {
  std::uint32_t n = 0;
  switch (axis) {
    case GridAxis::kFrequency: n = grid.subcarriers(); break;
    case GridAxis::kTime: n = grid.frames(); break;
    case GridAxis::kAntenna: n = grid.antennas(); break;
  }
  if (n == 0 || grid.values.empty())
    throw std::invalid_argument("autocorrelation needs a non-empty grid");

  auto fetch = [&](std::uint32_t i, std::uint32_t j, std::uint32_t k) {
    switch (axis) {
      case GridAxis::kFrequency: return grid.at(i, j, k);
      case GridAxis::kTime: return grid.at(j, i, k);
      default: return grid.at(j, k, i);
    }
  };
  std::uint32_t other1 = 0, other2 = 0;
  switch (axis) {
    case GridAxis::kFrequency: other1 = grid.frames(); other2 = grid.antennas(); break;
    case GridAxis::kTime: other1 = grid.subcarriers(); other2 = grid.antennas(); break;
    case GridAxis::kAntenna: other1 = grid.subcarriers(); other2 = grid.frames(); break;
  }

  std::vector<cplx> corr(n);
  for (std::uint32_t lag = 0; lag < n; ++lag) {
    cplx acc = 0.0;
    for (std::uint32_t i = 0; i + lag < n; ++i)
      for (std::uint32_t j = 0; j < other1; ++j)
        for (std::uint32_t k = 0; k < other2; ++k)
          acc += std::conj(fetch(i, j, k)) * fetch(i + lag, j, k);
    corr[lag] = acc / double(std::size_t(n - lag) * other1 * other2);
  }
  const double power = corr[0].real();
  if (!(power > 0.0)) throw numeric_error("autocorrelation of an all-zero grid is undefined");
  for (cplx& c : corr) c /= power;
  corr[0] = cplx(1.0, 0.0);
  return corr;
}

cplx analytic_frequency_correlation(const std::vector<TapSpec>& taps,
                                    double subcarrier_spacing_hz, int lag) {
  if (taps.empty()) throw std::invalid_argument("tap profile is empty");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  cplx acc = 0.0;
  double total = 0.0;
  for (const TapSpec& tap : taps) {
    const double arg = -two_pi * lag * subcarrier_spacing_hz * tap.delay_s;
    acc += tap.power * cplx(std::cos(arg), std::sin(arg));
    total += tap.power;
  }
  if (!(total > 0.0)) throw std::invalid_argument("total tap power must be positive");
  return acc / total;
}

void scale_grid(ChannelGrid& grid, double factor) {
  if (!std::isfinite(factor)) throw std::invalid_argument("scale factor must be finite");
  for (cplx& v : grid.values) v *= factor;
}

void save_cfrd(const ChannelGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_format_error("cannot open '" + path + "' for writing");
  out.write("CFRD", 4);
  write_pod(out, std::uint32_t(1));
  write_pod(out, grid.meta.num_subcarriers);
  write_pod(out, grid.meta.num_frames);
  write_pod(out, grid.meta.num_antennas);
  write_pod(out, grid.meta.frame_interval_s);
  write_pod(out, grid.meta.subcarrier_spacing_hz);
  const std::size_t expect =
      std::size_t(grid.meta.num_subcarriers) * grid.meta.num_frames * grid.meta.num_antennas;
  if (grid.values.size() != expect)
    throw data_format_error("grid value count does not match its dimensions");
  for (const cplx& v : grid.values) {
    write_pod(out, float(v.real()));
    write_pod(out, float(v.imag()));
  }
  if (!out) throw data_format_error("short write while saving '" + path + "'");
}

ChannelGrid load_cfrd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_format_error("cannot open '" + path + "' for reading");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "CFRD")
    throw data_format_error("'" + path + "' is not a CFRD dataset");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != 1)
    throw data_format_error("unsupported CFRD version " + std::to_string(version));
  ChannelGrid grid;
  grid.meta.num_subcarriers = read_pod<std::uint32_t>(in);
  grid.meta.num_frames = read_pod<std::uint32_t>(in);
  grid.meta.num_antennas = read_pod<std::uint32_t>(in);
  grid.meta.frame_interval_s = read_pod<double>(in);
  grid.meta.subcarrier_spacing_hz = read_pod<double>(in);
  if (grid.meta.num_subcarriers == 0 || grid.meta.num_frames == 0 ||
      grid.meta.num_antennas == 0 || grid.meta.num_antennas > kMaxAntennas)
    throw data_format_error("CFRD header carries impossible dimensions");
  if (!(grid.meta.frame_interval_s > 0.0) || !(grid.meta.subcarrier_spacing_hz > 0.0))
    throw data_format_error("CFRD header carries non-positive spacings");
  const std::size_t count =
      std::size_t(grid.meta.num_subcarriers) * grid.meta.num_frames * grid.meta.num_antennas;
  grid.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float re = read_pod<float>(in);
    const float im = read_pod<float>(in);
    if (!std::isfinite(re) || !std::isfinite(im))
      throw data_format_error("CFRD payload contains a non-finite value");
    grid.values[i] = cplx(re, im);
  }
  in.peek();
  if (!in.eof()) throw data_format_error("trailing bytes after CFRD payload");
  return grid;
}

}  // namespace rcm
