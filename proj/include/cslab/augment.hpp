// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file augment.hpp
 * @brief Masking and additive-noise augmentation of encoder features.
 *
 * Noise is added first, then masks, mirroring the usual order of waveform
 * noise followed by spectrogram masking.
 */

#include <cmath>
#include <cstdint>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "random.hpp"

namespace cslab {

struct AugmentPolicy {
  std::size_t time_masks = 0;
  std::size_t time_width = 0; // maximum frames per time mask
  std::size_t feature_masks = 0;
  std::size_t feature_width = 0; // maximum dims per feature mask
  std::vector<double> snr_db;    // empty disables noise

  bool is_identity() const {
    return (time_masks == 0 || time_width == 0) && (feature_masks == 0 || feature_width == 0) && snr_db.empty();
  }

  void validate() const {
    for (double s : snr_db)
      if (!std::isfinite(s))
        throw ConfigError("SNR values must be finite");
  }
};

inline double mean_power(std::span<const double> v) {
  double s = 0.0;
  for (double x : v)
    s += x * x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Deterministic in (x, policy, seed). Masks wider than the input are clipped.
/// Noise is Gaussian rescaled so its empirical power sits exactly at the drawn SNR.
inline EncoderFeatures augment(const EncoderFeatures &x, const AugmentPolicy &policy, std::uint64_t seed) {
  x.validate();
  policy.validate();
  EncoderFeatures out = x;
  if (policy.is_identity())
    return out;
  Rng rng(derive_seed(seed, "augment"));

  if (!policy.snr_db.empty()) {
    const double snr = policy.snr_db[uniform_index(rng, policy.snr_db.size())];
    const double p_signal = mean_power(x.values);
    std::vector<double> noise(x.values.size());
    for (auto &n : noise)
      n = normal(rng);
    const double p_noise = mean_power(noise);
    if (p_signal > 0.0 && p_noise > 0.0) {
      const double k = std::sqrt(p_signal / (p_noise * std::pow(10.0, snr / 10.0)));
      for (std::size_t i = 0; i < noise.size(); ++i)
        out.values[i] += k * noise[i];
    }
  }

  auto span_start = [&](std::size_t width, std::size_t extent) {
    return extent > width ? uniform_index(rng, extent - width + 1) : std::size_t{0};
  };
  if (policy.time_width > 0)
    for (std::size_t m = 0; m < policy.time_masks; ++m) {
      const std::size_t w = std::min(uniform_index(rng, policy.time_width + 1), x.frames);
      const std::size_t t0 = span_start(w, x.frames);
      for (std::size_t t = t0; t < t0 + w; ++t)
        for (std::size_t d = 0; d < x.dim; ++d)
          out.values[t * x.dim + d] = 0.0;
    }
  if (policy.feature_width > 0)
    for (std::size_t m = 0; m < policy.feature_masks; ++m) {
      const std::size_t w = std::min(uniform_index(rng, policy.feature_width + 1), x.dim);
      const std::size_t f0 = span_start(w, x.dim);
      for (std::size_t t = 0; t < x.frames; ++t)
        for (std::size_t d = f0; d < f0 + w; ++d)
          out.values[t * x.dim + d] = 0.0;
    }
  return out;
}

} // namespace cslab
