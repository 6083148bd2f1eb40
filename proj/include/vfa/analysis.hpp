// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vfa/edm.hpp"
#include "vfa/engine.hpp"
#include "vfa/network.hpp"

namespace vfa {

enum class AnalysisMode { Activations, Filters };

std::string_view to_string(AnalysisMode mode);
/// Accepts "activations" and "filters"; throws ConfigError otherwise.
AnalysisMode parse_analysis_mode(std::string_view text);

struct AnalysisConfig {
  int rho_max = 10;
  double grad_tol = 1e-12;
  int workers = 1;
};

/// A neuron (one conv output element) or a filter (one conv output channel).
struct AnalysisUnit {
  AnalysisMode mode = AnalysisMode::Activations;
  int layer = 0;
  int channel = 0;
  int y = -1;
  int x = -1;

  InjectionSite site() const {
    return mode == AnalysisMode::Filters ? InjectionSite::whole_channel(layer, channel)
                                         : InjectionSite::neuron(layer, channel, y, x);
  }
  auto operator<=>(const AnalysisUnit&) const = default;
};

/// How a vulnerability value was settled.
enum class DeltaOrigin {
  GradientZero,  // gradient gate: +/-2^rho_max without injections
  Search,        // a VVSS member found by the probe and binary search
  NoFlip,        // no member misclassifies: +/-infinity
};

std::string_view to_string(DeltaOrigin origin);

struct DeltaSearch {
  double delta = 0.0;
  /// Under the reading where the bound is the largest-magnitude member that
  /// keeps the golden class (equal to `delta` when no such member exists).
  double delta_alt = 0.0;
  DeltaOrigin origin = DeltaOrigin::Search;
  int passes = 0;
};

/// Vulnerability value on one side (sign > 0: delta+, sign < 0: delta-) of a
/// unit for one image. `gradient_zero` comes from the gate evaluated once per
/// unit and image.
DeltaSearch search_delta(const Network& net, const Trace& clean, int golden,
                         const InjectionSite& site, const Vvss& vvss, int sign,
                         bool gradient_zero, int rho_max = 10);

/// search_delta with the gradient gate evaluated here.
DeltaSearch find_delta(const Network& net, const Trace& clean, int golden,
                       const InjectionSite& site, const Vvss& vvss, int sign,
                       const AnalysisConfig& cfg = {});

/// Mass of the EDM inside (-inf, delta_neg] and [delta_pos, +inf), each bound
/// snapped to its bin; infinite bounds cover only the overflow bins.
double compute_vf(const ErrorDistributionMap& edm, double delta_neg, double delta_pos);

/// EDM of a unit for image `image` of the run.
ErrorDistributionMap unit_edm(const GoldenRun& run, const AnalysisUnit& unit, std::size_t image,
                              const CvvGrid& grid);

/// Exhaustive single-fault space of a unit per image: |valid patch| * 32 for
/// a neuron and |filter| * 32 for a filter.
std::uint64_t unit_fault_space(const Network& net, const AnalysisUnit& unit);

struct ImageVulnerability {
  double delta_neg = 0.0;
  double delta_pos = 0.0;
  double delta_neg_alt = 0.0;
  double delta_pos_alt = 0.0;
  DeltaOrigin neg_origin = DeltaOrigin::Search;
  DeltaOrigin pos_origin = DeltaOrigin::Search;
  double vf = 0.0;
  double vf_alt = 0.0;
  int passes = 0;
  bool gradient_zero = false;
  std::size_t vvss_size = 0;
  double mass_error = 0.0;  // |sum of masses - 1|
  bool cdf_monotone = true;
};

struct VulnerabilityRecord {
  AnalysisUnit unit;
  std::vector<ImageVulnerability> images;
  double vf = 0.0;      // uniform mean over images
  double vf_alt = 0.0;
  std::uint64_t injection_passes = 0;
  std::uint64_t gradient_passes = 0;
  std::uint64_t exhaustive_fi_forwards = 0;  // image forwards exhaustive FI would need
};

VulnerabilityRecord analyze_unit(const GoldenRun& run, const AnalysisUnit& unit,
                                 const AnalysisConfig& cfg = {});

struct ChannelPlan {
  int channel = 0;
  std::vector<std::pair<int, int>> neurons;  // (y, x), row-major ascending
  bool operator==(const ChannelPlan&) const = default;
};

struct LayerPlan {
  int layer = 0;
  std::vector<ChannelPlan> channels;  // ascending channel ids
  bool operator==(const LayerPlan&) const = default;
};

/// Channels per conv layer and neurons per channel to analyze.
struct SamplingPlan {
  double ratio = 1.0;
  std::uint64_t seed = 0;
  bool complete = false;
  std::vector<LayerPlan> layers;

  bool operator==(const SamplingPlan&) const = default;
  std::vector<AnalysisUnit> units(AnalysisMode mode) const;
};

/// ceil(ratio * channels) channels per conv layer and ceil(log2(H*W)) (at
/// least 1) neurons per channel, all drawn without replacement from a
/// generator seeded by (seed, layer). Throws ConfigError unless 0 < ratio <= 1.
SamplingPlan make_sampling_plan(const Network& net, double ratio, std::uint64_t seed);
/// Every channel and every neuron of every conv layer.
SamplingPlan make_complete_plan(const Network& net);

/// ceil(ratio * n) with a small guard against products such as 0.15 * 20
/// landing a hair above an integer.
int sampled_channel_count(double ratio, int channels);
int sampled_neuron_count(int neurons);

std::vector<VulnerabilityRecord> run_analysis(const GoldenRun& run, const SamplingPlan& plan,
                                              AnalysisMode mode, const AnalysisConfig& cfg = {});

struct ChannelVf {
  int layer = 0;
  int channel = 0;
  AnalysisMode mode = AnalysisMode::Activations;
  double cvf = 0.0;
  double cvf_alt = 0.0;
  std::size_t units = 0;
};

struct LayerVf {
  int layer = 0;
  std::size_t activations = 0;  // N_l
  std::size_t weights = 0;      // W_l
  std::optional<double> lvf_act;
  std::optional<double> lvf_weight;
  std::optional<double> lvf_act_alt;
  std::optional<double> lvf_weight_alt;
};

struct ModeCounters {
  std::uint64_t units = 0;
  std::uint64_t unit_images = 0;
  std::uint64_t injection_passes = 0;
  std::uint64_t gradient_passes = 0;
  std::uint64_t gradient_skips = 0;  // unit-image pairs settled by the gradient gate
  std::uint64_t exhaustive_fi_forwards = 0;
  std::uint64_t forward_passes() const { return injection_passes + gradient_passes; }
};

struct EdmChecks {
  std::uint64_t maps = 0;
  double max_mass_error = 0.0;
  std::uint64_t non_monotone = 0;
};

struct VfSummary {
  std::vector<LayerVf> layers;      // every conv layer, ascending
  std::vector<ChannelVf> channels;  // (mode, layer, channel) ascending
  std::optional<double> mvf_act;
  std::optional<double> mvf_weight;
  std::optional<double> mvf_total;
  std::optional<ModeCounters> act_counters;
  std::optional<ModeCounters> weight_counters;
  EdmChecks edm;
  std::vector<std::string> warnings;
};

/// CVF = mean unit VF per channel, LVF = mean CVF per layer, MVF = mean LVF
/// over layers with results, MVF_total = mean over layers of the N/W-weighted
/// blend of both LVFs (only when both modes cover a layer). Layers without
/// units are left empty and reported in `warnings`.
VfSummary aggregate(std::span<const VulnerabilityRecord> records, const SamplingPlan& plan,
                    const Network& net);

}  // namespace vfa
