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

#ifndef RCM_CHANSIM_HPP
#define RCM_CHANSIM_HPP

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace rcm {

using cplx = std::complex<double>;

/// One multipath tap of the tapped-delay-line profile.
struct TapSpec {
  double delay_s = 0.0;
  double power = 1.0;  // linear
};

/// Configuration of the synthetic CFR generator. Defaults mirror a 20 MHz
/// LTE downlink pilot grid: 200 pilot subcarriers at 90 kHz spacing,
/// 1 ms sub-frames, 2 antennas, 1.9 GHz carrier.
struct SimConfig {
  std::uint32_t num_subcarriers = 200;
  double subcarrier_spacing_hz = 90e3;
  std::uint32_t num_frames = 2;
  double frame_interval_s = 1e-3;
  std::uint32_t num_antennas = 2;
  double carrier_freq_hz = 1.9e9;
  double user_speed_mps = 1.4;
  std::vector<TapSpec> taps = {{0.0, 1.0}};
  double antenna_correlation = 0.5;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;

  /// Sum of linear tap powers.
  double total_tap_power() const;

  /// Rescales tap powers so they sum to 1.
  void normalize_taps();
};

/// Equal-spacing exponential power-delay profile with the requested rms
/// delay spread; powers normalized to sum to 1.
std::vector<TapSpec> make_exponential_pdp(int num_taps, double tap_spacing_s,
                                          double rms_delay_spread_s);

/// Dense complex CFR indexed by (subcarrier, frame, antenna). Storage is
/// frame-major / antenna-middle / subcarrier-fastest, matching the CFRD
/// on-disk order, and immutable-by-convention after generation.
struct ChannelGrid {
  SimConfig meta;
  std::vector<cplx> values;

  std::uint32_t subcarriers() const { return meta.num_subcarriers; }
  std::uint32_t frames() const { return meta.num_frames; }
  std::uint32_t antennas() const { return meta.num_antennas; }

  std::size_t index(std::uint32_t sc, std::uint32_t frame, std::uint32_t ant) const {
    return (std::size_t(frame) * meta.num_antennas + ant) * meta.num_subcarriers + sc;
  }
  cplx at(std::uint32_t sc, std::uint32_t frame, std::uint32_t ant) const {
    return values[index(sc, frame, ant)];
  }
  cplx& at(std::uint32_t sc, std::uint32_t frame, std::uint32_t ant) {
    return values[index(sc, frame, ant)];
  }

  double mean_power() const;
};

/// Correlation axes of empirical_autocorrelation.
enum class GridAxis { kFrequency, kTime, kAntenna };

/// Deterministic sum-of-sinusoids Jakes generator. Each tap gain per
/// antenna is a sum of 16 equal-power sinusoids whose arrival angles and
/// phases come from a counter-based RNG keyed by (seed, tap, antenna,
/// sinusoid); antennas are mixed with the Cholesky root of an exponential
/// correlation matrix rho^|i-j|. The output is a pure function of config.
ChannelGrid generate_channel(const SimConfig& config);

/// Returns a copy of `grid` where frame `frame_index` becomes
/// H + alpha * H_int, with alpha chosen so the frame's signal-to-
/// interference power ratio equals sir_db. The interferer frame used is
/// frame_index % interferer.frames(). sir_db = +inf leaves the grid
/// unchanged.
ChannelGrid inject_contamination(const ChannelGrid& grid, std::uint32_t frame_index,
                                 const ChannelGrid& interferer, double sir_db);

/// Normalized lag correlation along one axis, averaged over the other two;
/// element d is the lag-d correlation and element 0 is exactly 1.
std::vector<cplx> empirical_autocorrelation(const ChannelGrid& grid, GridAxis axis);

/// Analytic frequency correlation of a tap profile at lag `lag` subcarrier
/// spacings: sum_l P_l * exp(-j*2*pi*lag*df*tau_l) / sum_l P_l.
cplx analytic_frequency_correlation(const std::vector<TapSpec>& taps,
                                    double subcarrier_spacing_hz, int lag);

/// Multiplies every coefficient by `factor` (models a pilot power change).
void scale_grid(ChannelGrid& grid, double factor);

// CFRD dataset file: magic "CFRD", version u32=1, u32 subcarriers,
// u32 frames, u32 antennas, f64 frame_interval, f64 subcarrier_spacing,
// then (re f32, im f32) pairs, subcarrier-fastest / antenna-middle /
// frame-slowest. Values are stored at 32-bit precision.
void save_cfrd(const ChannelGrid& grid, const std::string& path);
ChannelGrid load_cfrd(const std::string& path);

}  // namespace rcm

#endif  // RCM_CHANSIM_HPP
