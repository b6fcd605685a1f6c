// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace mst::diffusion {

NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end,
                            BetaShape shape) {
  if (T < 1) throw std::invalid_argument("make_schedule: T >= 1 required");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<std::size_t>(T));
  if (shape == BetaShape::linear) {
    for (int64_t t = 0; t < T; ++t)
      s.betas[static_cast<std::size_t>(t)] =
          T == 1 ? beta_start
                 : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                       static_cast<double>(T - 1);
  } else {
    const double ofs = 0.008;
    auto f = [&](double u) {
      const double v = std::cos((u + ofs) / (1.0 + ofs) * std::numbers::pi / 2.0);
      return v * v;
    };
    double prev = 1.0;
    for (int64_t t = 1; t <= T; ++t) {
      const double ab = f(static_cast<double>(t) / static_cast<double>(T)) / f(0.0);
      const double beta = std::clamp(1.0 - ab / prev, beta_start, beta_end);
      s.betas[static_cast<std::size_t>(t - 1)] = beta;
      prev *= 1.0 - beta;
    }
  }

  s.alphas.resize(static_cast<std::size_t>(T));
  s.alpha_bars.resize(static_cast<std::size_t>(T));
  s.sigmas.resize(static_cast<std::size_t>(T));
  double bar = 1.0;
  for (int64_t t = 1; t <= T; ++t) {
    const double beta = s.beta(t);
    const double alpha = 1.0 - beta;
    const double prev_bar = bar;
    bar *= alpha;
    s.alphas[static_cast<std::size_t>(t - 1)] = alpha;
    s.alpha_bars[static_cast<std::size_t>(t - 1)] = bar;
    s.sigmas[static_cast<std::size_t>(t - 1)] =
        std::sqrt((1.0 - prev_bar) / (1.0 - bar) * beta);
  }
  return s;
}

void dump_schedule_csv(const NoiseSchedule& s, std::ostream& os) {
  os << "t,beta,alpha_bar,sigma\n";
  os.precision(17);
  for (int64_t t = 1; t <= s.T; ++t)
    os << t << ',' << s.beta(t) << ',' << s.alpha_bar(t) << ',' << s.sigma(t)
       << '\n';
}

std::vector<int64_t> stride_timesteps(int64_t T, int64_t steps) {
  if (steps < 1 || steps > T)
    throw std::invalid_argument("stride_timesteps: need 1 <= steps <= T");
  std::vector<int64_t> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  if (steps == 1) {
    ts.push_back(T);
    return ts;
  }
  for (int64_t i = 0; i < steps; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(steps - 1);
    const int64_t t = T - static_cast<int64_t>(std::llround(u * static_cast<double>(T - 1)));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  return ts;
}

}  // namespace mst::diffusion
