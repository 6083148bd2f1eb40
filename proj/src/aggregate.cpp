// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>

#include "vfa/analysis.hpp"

namespace vfa {

namespace {

struct Mean {
  double sum = 0.0;
  double sum_alt = 0.0;
  std::size_t n = 0;
};

}  // namespace

VfSummary aggregate(std::span<const VulnerabilityRecord> records, const SamplingPlan& plan,
                    const Network& net) {
  VfSummary out;

  // (mode, layer, channel) -> running means, visited in key order.
  std::map<std::tuple<AnalysisMode, int, int>, Mean> channels;
  std::set<AnalysisMode> modes;
  std::set<AnalysisUnit> seen;
  for (const VulnerabilityRecord& r : records) {
    Mean& m = channels[{r.unit.mode, r.unit.layer, r.unit.channel}];
    m.sum += r.vf;
    m.sum_alt += r.vf_alt;
    ++m.n;
    modes.insert(r.unit.mode);
    seen.insert(r.unit);

    ModeCounters& c = [&]() -> ModeCounters& {
      auto& slot = r.unit.mode == AnalysisMode::Filters ? out.weight_counters : out.act_counters;
      if (!slot) slot = ModeCounters{};
      return *slot;
    }();
    ++c.units;
    c.unit_images += r.images.size();
    c.injection_passes += r.injection_passes;
    c.gradient_passes += r.gradient_passes;
    c.exhaustive_fi_forwards += r.exhaustive_fi_forwards;
    for (const ImageVulnerability& iv : r.images) {
      c.gradient_skips += iv.gradient_zero;
      ++out.edm.maps;
      out.edm.max_mass_error = std::max(out.edm.max_mass_error, iv.mass_error);
      out.edm.non_monotone += !iv.cdf_monotone;
    }
  }

  for (AnalysisMode mode : modes) {
    std::size_t missing = 0;
    for (const AnalysisUnit& u : plan.units(mode)) missing += !seen.contains(u);
    if (missing > 0)
      out.warnings.push_back(std::to_string(missing) + " planned " +
                             std::string(to_string(mode)) + " units have no record");
  }

  // Channel -> layer means.
  std::map<std::pair<AnalysisMode, int>, Mean> layers;
  for (const auto& [key, m] : channels) {
    const auto& [mode, layer, channel] = key;
    ChannelVf cv;
    cv.layer = layer;
    cv.channel = channel;
    cv.mode = mode;
    cv.cvf = m.sum / static_cast<double>(m.n);
    cv.cvf_alt = m.sum_alt / static_cast<double>(m.n);
    cv.units = m.n;
    out.channels.push_back(cv);
    Mean& lm = layers[{mode, layer}];
    lm.sum += cv.cvf;
    lm.sum_alt += cv.cvf_alt;
    ++lm.n;
  }

  Mean mvf_act, mvf_weight, mvf_total;
  for (int l : net.conv_layers()) {
    LayerVf lv;
    lv.layer = l;
    lv.activations = net.output_activations(l);
    lv.weights = net.weight_count(l);
    for (AnalysisMode mode : modes) {
      auto it = layers.find({mode, l});
      if (it == layers.end()) {
        out.warnings.push_back("layer " + std::to_string(l) + " has no analyzed " +
                               std::string(to_string(mode)) + " units");
        continue;
      }
      const double lvf = it->second.sum / static_cast<double>(it->second.n);
      const double alt = it->second.sum_alt / static_cast<double>(it->second.n);
      Mean& total = mode == AnalysisMode::Filters ? mvf_weight : mvf_act;
      total.sum += lvf;
      ++total.n;
      if (mode == AnalysisMode::Filters) {
        lv.lvf_weight = lvf;
        lv.lvf_weight_alt = alt;
      } else {
        lv.lvf_act = lvf;
        lv.lvf_act_alt = alt;
      }
    }
    if (lv.lvf_act && lv.lvf_weight) {
      const double n = static_cast<double>(lv.activations);
      const double w = static_cast<double>(lv.weights);
      mvf_total.sum += n / (n + w) * *lv.lvf_act + w / (n + w) * *lv.lvf_weight;
      ++mvf_total.n;
    }
    out.layers.push_back(lv);
  }
  if (mvf_act.n) out.mvf_act = mvf_act.sum / static_cast<double>(mvf_act.n);
  if (mvf_weight.n) out.mvf_weight = mvf_weight.sum / static_cast<double>(mvf_weight.n);
  if (mvf_total.n) {
    out.mvf_total = mvf_total.sum / static_cast<double>(mvf_total.n);
    if (mvf_total.n < net.conv_layers().size())
      out.warnings.push_back("MVF_total covers " + std::to_string(mvf_total.n) + " of " +
                             std::to_string(net.conv_layers().size()) + " conv layers");
  }
  return out;
}

}  // namespace vfa
