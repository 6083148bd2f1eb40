// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "vfa/analysis.hpp"
#include "vfa/engine.hpp"

namespace vfa {

enum class FiMode {
  ExhaustiveWeights,
  ExhaustiveActivations,
  SfiLayerwise,
  SfiDataUnaware,
  SfiDataAware,
};

std::string_view to_string(FiMode mode);
FiMode parse_fi_mode(std::string_view text);

/// Where statistical campaigns place faults.
enum class FaultTarget { Weights, Activations };

std::string_view to_string(FaultTarget target);
FaultTarget parse_fault_target(std::string_view text);

/// Activation faults follow the analysis fault model: one bit of one input
/// tap of one neuron, for one image and one inference. Weight faults flip one
/// bit of one filter weight for the whole batch.
struct FiCampaignSpec {
  FiMode mode = FiMode::ExhaustiveWeights;
  FaultTarget target = FaultTarget::Weights;  // statistical modes only
  std::vector<int> layers;                    // empty: every conv layer
  double e = 0.01;
  double t = 2.576;
  double p = 0.5;
  int pilot = 100;  // data-aware pilot injections per (layer, bit)
  std::uint64_t seed = 0;
  int workers = 1;

  /// Throws ConfigError unless e > 0, t > 0, 0 < p < 1 and pilot >= 2.
  void validate() const;
};

struct FiCounters {
  std::uint64_t injections = 0;      // faults simulated
  std::uint64_t batch_forwards = 0;  // weight faults: one per fault
  std::uint64_t image_forwards = 0;

  FiCounters& operator+=(const FiCounters& o) {
    injections += o.injections;
    batch_forwards += o.batch_forwards;
    image_forwards += o.image_forwards;
    return *this;
  }
};

/// Outcome of exhaustive injection into one neuron or one filter.
struct UnitFi {
  AnalysisUnit unit;
  std::uint64_t outcomes = 0;       // (fault, image) pairs evaluated
  std::uint64_t misclassified = 0;  // of those, departures from golden
  FiCounters counters;

  double cvf() const {
    return outcomes == 0 ? 0.0 : static_cast<double>(misclassified) / static_cast<double>(outcomes);
  }
};

/// Every bit of every weight of filter `channel`, each on the whole batch.
/// The network is never modified: the faulty channel is recomputed from a copy.
UnitFi exhaustive_weight_fi(const GoldenRun& run, int layer, int channel);
/// Every bit of every valid input tap of neuron (channel, y, x), per image.
UnitFi exhaustive_activation_fi(const GoldenRun& run, int layer, int channel, int y, int x);

/// Finite-population sample size ceil(N / (1 + e^2 (N - 1) / (t^2 p (1 - p)))),
/// clamped to [1, N].
std::uint64_t sfi_sample_size(std::uint64_t N, double e, double t, double p);

struct FiLayerResult {
  int layer = 0;
  std::uint64_t fault_space = 0;  // faults per bit position times 32
  double lvf = 0.0;
  std::vector<std::uint64_t> bit_samples;  // statistical modes: main-sample size per bit
  std::vector<double> bit_p;               // data-aware: pilot estimate per bit
  FiCounters counters;
};

struct FiResult {
  FiMode mode = FiMode::ExhaustiveWeights;
  FaultTarget target = FaultTarget::Weights;
  std::vector<UnitFi> units;        // exhaustive modes
  std::vector<ChannelVf> channels;  // exhaustive modes: mean unit CVF per channel
  std::vector<FiLayerResult> layers;
  FiCounters counters;
};

/// Exhaustive modes inject into the units of `plan` (filters or neurons);
/// statistical modes sample the fault space of `spec.layers`.
FiResult run_fi(const GoldenRun& run, const FiCampaignSpec& spec, const SamplingPlan& plan);

/// Statistical campaigns only (plan-free form of run_fi).
FiResult run_sfi(const GoldenRun& run, const FiCampaignSpec& spec);

/// Mean absolute difference; throws AnalysisError on a length mismatch or empty input.
double compare_mae(std::span<const double> a, std::span<const double> b);

}  // namespace vfa
