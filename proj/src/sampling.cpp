// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <bit>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "vfa/analysis.hpp"
#include "vfa/error.hpp"

namespace vfa {

int sampled_channel_count(double ratio, int channels) {
  const int n = static_cast<int>(std::ceil(ratio * channels - 1e-9));
  return std::clamp(n, 1, channels);
}

int sampled_neuron_count(int neurons) {
  if (neurons <= 1) return 1;
  const int n = static_cast<int>(std::bit_width(static_cast<unsigned>(neurons - 1)));
  return std::min(n, neurons);
}

SamplingPlan make_sampling_plan(const Network& net, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ConfigError("channel sampling ratio must lie in (0, 1], got " + std::to_string(ratio));
  SamplingPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  for (int l : net.conv_layers()) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(l)};
    std::mt19937_64 rng(seq);
    const Shape3& s = net.output_shape(l);

    std::vector<int> all(static_cast<std::size_t>(s.channels));
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> picked;
    std::sample(all.begin(), all.end(), std::back_inserter(picked),
                sampled_channel_count(ratio, s.channels), rng);

    LayerPlan lp{l, {}};
    const int plane = s.height * s.width;
    std::vector<int> positions(static_cast<std::size_t>(plane));
    std::iota(positions.begin(), positions.end(), 0);
    for (int c : picked) {
      std::vector<int> chosen;
      std::sample(positions.begin(), positions.end(), std::back_inserter(chosen),
                  sampled_neuron_count(plane), rng);
      ChannelPlan cp{c, {}};
      for (int p : chosen) cp.neurons.emplace_back(p / s.width, p % s.width);
      lp.channels.push_back(std::move(cp));
    }
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

SamplingPlan make_complete_plan(const Network& net) {
  SamplingPlan plan;
  plan.complete = true;
  for (int l : net.conv_layers()) {
    const Shape3& s = net.output_shape(l);
    LayerPlan lp{l, {}};
    for (int c = 0; c < s.channels; ++c) {
      ChannelPlan cp{c, {}};
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) cp.neurons.emplace_back(y, x);
      lp.channels.push_back(std::move(cp));
    }
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

std::vector<AnalysisUnit> SamplingPlan::units(AnalysisMode mode) const {
  std::vector<AnalysisUnit> out;
  for (const LayerPlan& lp : layers)
    for (const ChannelPlan& cp : lp.channels) {
      if (mode == AnalysisMode::Filters) {
        out.push_back({mode, lp.layer, cp.channel, -1, -1});
        continue;
      }
      for (const auto& [y, x] : cp.neurons) out.push_back({mode, lp.layer, cp.channel, y, x});
    }
  return out;
}

}  // namespace vfa
