// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace mst::diffusion {

enum class BetaShape { linear, cosine };

// Fixed noise schedule. Arrays are 1-indexed through the accessors:
// beta(t), alpha(t), alpha_bar(t) for t in [1, T], with alpha_bar(0) == 1.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> sigmas;
  int64_t T = 0;

  double beta(int64_t t) const { return betas[static_cast<std::size_t>(t - 1)]; }
  double alpha(int64_t t) const { return alphas[static_cast<std::size_t>(t - 1)]; }
  double alpha_bar(int64_t t) const {
    return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)];
  }
  double sigma(int64_t t) const { return sigmas[static_cast<std::size_t>(t - 1)]; }
};

// Linear shape interpolates beta evenly from beta_start to beta_end.
// Cosine follows the squared-cosine alpha_bar profile, with each beta
// clamped into [beta_start, beta_end].
NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end,
                            BetaShape shape = BetaShape::linear);

// One CSV row per step: t,beta,alpha_bar,sigma.
void dump_schedule_csv(const NoiseSchedule& s, std::ostream& os);

// Evenly spaced descending timestep subsequence of the given length,
// always starting at T and ending at 1.
std::vector<int64_t> stride_timesteps(int64_t T, int64_t steps);

}  // namespace mst::diffusion
