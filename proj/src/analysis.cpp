// SPDX-License-Identifier: Apache-2.0
#include "vfa/analysis.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "vfa/error.hpp"
#include "vfa/parallel.hpp"

namespace vfa {

std::string_view to_string(AnalysisMode mode) {
  return mode == AnalysisMode::Filters ? "filters" : "activations";
}

AnalysisMode parse_analysis_mode(std::string_view text) {
  if (text == "activations") return AnalysisMode::Activations;
  if (text == "filters") return AnalysisMode::Filters;
  throw ConfigError("unknown analysis mode '" + std::string(text) + "'");
}

std::string_view to_string(DeltaOrigin origin) {
  switch (origin) {
    case DeltaOrigin::GradientZero: return "gradient-zero";
    case DeltaOrigin::Search: return "search";
    case DeltaOrigin::NoFlip: return "no-flip";
  }
  return "search";
}

DeltaSearch search_delta(const Network& net, const Trace& clean, int golden,
                         const InjectionSite& site, const Vvss& vvss, int sign,
                         bool gradient_zero, int rho_max) {
  const double s = sign > 0 ? 1.0 : -1.0;
  if (gradient_zero) {
    const double d = s * std::ldexp(1.0, rho_max);
    return {d, d, DeltaOrigin::GradientZero, 0};
  }
  const std::vector<double>& small = sign > 0 ? vvss.positive_small : vvss.negative_small;
  const std::vector<double>& large = sign > 0 ? vvss.positive_large : vvss.negative_large;

  int passes = 0;
  std::optional<bool> at_unit;
  auto misclassifies = [&](double d) {
    const bool unit = std::abs(d) == 1.0;
    if (unit && at_unit) return *at_unit;
    ++passes;
    const bool r =
        injection_misclassifies(net, clean, golden, site, static_cast<float>(d), rho_max);
    if (unit) at_unit = r;
    return r;
  };
  // Lower bound of the first misclassifying member, assuming monotonicity.
  auto first_flip = [&](const std::vector<double>& v) {
    std::size_t lo = 0, hi = v.size();
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (misclassifies(v[mid]))
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo;
  };

  // The unit probe picks the subspace; members of the other one are never tried.
  const std::size_t idx =
      misclassifies(s) ? first_flip(small) : small.size() + first_flip(large);
  auto member = [&](std::size_t i) {
    return i < small.size() ? small[i] : large[i - small.size()];
  };

  DeltaSearch r;
  r.passes = passes;
  if (idx < small.size() + large.size()) {
    r.delta = member(idx);
    r.origin = DeltaOrigin::Search;
  } else {
    r.delta = s * std::numeric_limits<double>::infinity();
    r.origin = DeltaOrigin::NoFlip;
  }
  r.delta_alt = idx > 0 ? member(idx - 1) : r.delta;
  return r;
}

DeltaSearch find_delta(const Network& net, const Trace& clean, int golden,
                       const InjectionSite& site, const Vvss& vvss, int sign,
                       const AnalysisConfig& cfg) {
  const Tensor g = grad_wrt_activation(net, clean, golden, site);
  return search_delta(net, clean, golden, site, vvss, sign, gradient_is_zero(g, cfg.grad_tol),
                      cfg.rho_max);
}

double compute_vf(const ErrorDistributionMap& edm, double delta_neg, double delta_pos) {
  if (!(delta_neg < 0.0) || !(delta_pos > 0.0))
    throw AnalysisError("vulnerability bounds must satisfy delta- < 0 < delta+");
  if (edm.total() == 0) throw AnalysisError("vulnerability factor of an empty distribution");
  const CvvGrid& g = edm.grid();
  const int neg = g.bin_of(delta_neg);
  const int pos = g.bin_of(delta_pos);
  std::uint64_t hit = 0;
  for (int b = 0; b <= neg; ++b) hit += edm.count(b);
  for (int b = pos; b < g.bin_count(); ++b) hit += edm.count(b);
  return static_cast<double>(hit) / static_cast<double>(edm.total());
}

namespace {

const LayerSpec& check_unit(const Network& net, const AnalysisUnit& unit) {
  if (unit.layer < 0 || unit.layer >= net.layer_count() || !net.layer(unit.layer).is_conv())
    throw ConfigError("analysis unit layer " + std::to_string(unit.layer) +
                      " is not a conv layer");
  check_site(net, unit.site());
  return net.layer(unit.layer);
}

}  // namespace

ErrorDistributionMap unit_edm(const GoldenRun& run, const AnalysisUnit& unit, std::size_t image,
                              const CvvGrid& grid) {
  const LayerSpec& conv = check_unit(run.net(), unit);
  const Tensor& ifmap = layer_input(run.trace(image), unit.layer);
  ErrorDistributionMap edm(grid);
  if (unit.mode == AnalysisMode::Filters) {
    accumulate_filter_errors(ifmap, conv, unit.channel, edm);
  } else {
    const NeuronPatch p = neuron_patch(ifmap, conv, unit.channel, unit.y, unit.x);
    accumulate_neuron_errors(p.inputs, p.weights, edm);
  }
  if (edm.total() == 0)
    throw AnalysisError("unit at layer " + std::to_string(unit.layer) + " channel " +
                        std::to_string(unit.channel) + " has an empty fault space");
  return edm;
}

std::uint64_t unit_fault_space(const Network& net, const AnalysisUnit& unit) {
  const LayerSpec& conv = check_unit(net, unit);
  if (unit.mode == AnalysisMode::Filters)
    return static_cast<std::uint64_t>(conv.filter_size()) * kBitsPerValue;
  const Shape3& in = net.input_shape_of(unit.layer);
  auto span = [&](int o, int extent) {
    int n = 0;
    for (int kk = 0; kk < conv.kernel; ++kk) {
      const int i = o * conv.stride - conv.padding + kk;
      n += i >= 0 && i < extent;
    }
    return n;
  };
  return static_cast<std::uint64_t>(conv.group_in_channels()) * span(unit.y, in.height) *
         span(unit.x, in.width) * kBitsPerValue;
}

namespace {

VulnerabilityRecord analyze(const GoldenRun& run, const AnalysisUnit& unit,
                            const AnalysisConfig& cfg, const std::vector<Tensor>* gradients) {
  const Network& net = run.net();
  check_unit(net, unit);
  const CvvGrid grid(cfg.rho_max);
  const InjectionSite site = unit.site();

  VulnerabilityRecord rec;
  rec.unit = unit;
  rec.images.reserve(run.size());
  for (std::size_t i = 0; i < run.size(); ++i) {
    const Trace& clean = run.trace(i);
    const int golden = run.golden(i);
    const ErrorDistributionMap edm = unit_edm(run, unit, i, grid);
    const Vvss vvss = derive_vvss(edm);

    ImageVulnerability iv;
    iv.vvss_size = vvss.size();
    iv.mass_error = std::abs(edm.masses().sum() - 1.0);
    const Eigen::ArrayXd cdf = edm.cdf();
    for (Eigen::Index b = 1; b < cdf.size(); ++b)
      if (cdf[b] < cdf[b - 1]) iv.cdf_monotone = false;

    if (gradients) {
      const Tensor& g = (*gradients)[i];
      iv.gradient_zero =
          site.is_channel()
              ? static_cast<double>(g.channel(site.channel).abs().maxCoeff()) <= cfg.grad_tol
              : std::abs(static_cast<double>(g(site.channel, site.y, site.x))) <= cfg.grad_tol;
    } else {
      iv.gradient_zero =
          gradient_is_zero(grad_wrt_activation(net, clean, golden, site), cfg.grad_tol);
    }
    ++rec.gradient_passes;

    const DeltaSearch neg =
        search_delta(net, clean, golden, site, vvss, -1, iv.gradient_zero, cfg.rho_max);
    const DeltaSearch pos =
        search_delta(net, clean, golden, site, vvss, +1, iv.gradient_zero, cfg.rho_max);
    iv.delta_neg = neg.delta;
    iv.delta_pos = pos.delta;
    iv.delta_neg_alt = neg.delta_alt;
    iv.delta_pos_alt = pos.delta_alt;
    iv.neg_origin = neg.origin;
    iv.pos_origin = pos.origin;
    iv.passes = neg.passes + pos.passes;
    iv.vf = compute_vf(edm, neg.delta, pos.delta);
    iv.vf_alt = compute_vf(edm, neg.delta_alt, pos.delta_alt);
    rec.injection_passes += static_cast<std::uint64_t>(iv.passes);
    rec.images.push_back(iv);
  }

  double sum = 0.0, sum_alt = 0.0;
  for (const ImageVulnerability& iv : rec.images) {
    sum += iv.vf;
    sum_alt += iv.vf_alt;
  }
  if (!rec.images.empty()) {
    rec.vf = sum / static_cast<double>(rec.images.size());
    rec.vf_alt = sum_alt / static_cast<double>(rec.images.size());
  }
  rec.exhaustive_fi_forwards = unit_fault_space(net, unit) * run.size();
  return rec;
}

}  // namespace

VulnerabilityRecord analyze_unit(const GoldenRun& run, const AnalysisUnit& unit,
                                 const AnalysisConfig& cfg) {
  return analyze(run, unit, cfg, nullptr);
}

std::vector<VulnerabilityRecord> run_analysis(const GoldenRun& run, const SamplingPlan& plan,
                                              AnalysisMode mode, const AnalysisConfig& cfg) {
  const std::vector<AnalysisUnit> units = plan.units(mode);

  // The loss gradient at a layer output does not depend on the unit, so it is
  // evaluated once per (layer, image) and shared by all units of that layer.
  std::vector<int> layers;
  for (const LayerPlan& lp : plan.layers)
    if (!lp.channels.empty()) layers.push_back(lp.layer);
  std::vector<std::vector<Tensor>> gradients(layers.size());
  for (auto& g : gradients) g.resize(run.size());
  parallel_for(layers.size() * run.size(), cfg.workers, [&](std::size_t job) {
    const std::size_t li = job / run.size(), img = job % run.size();
    gradients[li][img] =
        output_gradient(run.net(), run.trace(img), run.golden(img), layers[li]);
  });
  auto gradients_of = [&](int layer) -> const std::vector<Tensor>* {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i] == layer) return &gradients[i];
    return nullptr;
  };

  std::vector<VulnerabilityRecord> records(units.size());
  parallel_for(units.size(), cfg.workers, [&](std::size_t i) {
    records[i] = analyze(run, units[i], cfg, gradients_of(units[i].layer));
  });
  return records;
}

}  // namespace vfa
