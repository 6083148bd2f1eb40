// SPDX-License-Identifier: Apache-2.0
#include "vfa/fi.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

#include "vfa/bitflip.hpp"
#include "vfa/error.hpp"
#include "vfa/kernels.hpp"
#include "vfa/parallel.hpp"

namespace vfa {

std::string_view to_string(FiMode mode) {
  switch (mode) {
    case FiMode::ExhaustiveWeights: return "exhaustive-weights";
    case FiMode::ExhaustiveActivations: return "exhaustive-activations";
    case FiMode::SfiLayerwise: return "sfi-layerwise";
    case FiMode::SfiDataUnaware: return "sfi-data-unaware";
    case FiMode::SfiDataAware: return "sfi-data-aware";
  }
  return "exhaustive-weights";
}

FiMode parse_fi_mode(std::string_view text) {
  for (FiMode m : {FiMode::ExhaustiveWeights, FiMode::ExhaustiveActivations, FiMode::SfiLayerwise,
                   FiMode::SfiDataUnaware, FiMode::SfiDataAware})
    if (text == to_string(m)) return m;
  throw ConfigError("unknown fault-injection mode '" + std::string(text) + "'");
}

std::string_view to_string(FaultTarget target) {
  return target == FaultTarget::Weights ? "weights" : "activations";
}

FaultTarget parse_fault_target(std::string_view text) {
  if (text == "weights") return FaultTarget::Weights;
  if (text == "activations") return FaultTarget::Activations;
  throw ConfigError("unknown fault target '" + std::string(text) + "'");
}

void FiCampaignSpec::validate() const {
  if (!(e > 0.0)) throw ConfigError("error margin e must be positive");
  if (!(t > 0.0)) throw ConfigError("confidence coefficient t must be positive");
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("failure probability p must lie in (0, 1)");
  if (pilot < 2) throw ConfigError("pilot size must be at least 2");
}

namespace {

const LayerSpec& conv_layer(const Network& net, int layer) {
  if (layer < 0 || layer >= net.layer_count() || !net.layer(layer).is_conv())
    throw ConfigError("layer " + std::to_string(layer) + " is not a conv layer");
  return net.layer(layer);
}

bool weight_fault_hits(const GoldenRun& run, int layer, int channel, int tap, int bit,
                       std::size_t image) {
  const Network& net = run.net();
  const LayerSpec& conv = net.layer(layer);
  const int fs = conv.filter_size();
  const float* clean = conv.weight.data() + static_cast<std::ptrdiff_t>(channel) * fs;
  std::vector<float> filter(clean, clean + fs);
  filter[static_cast<std::size_t>(tap)] = flip_bit(clean[tap], bit);
  const Trace& tr = run.trace(image);
  Tensor out = tr.outputs[static_cast<std::size_t>(layer)];
  kernels::conv2d_channel(layer_input(tr, layer), conv, channel, filter.data(),
                          conv.bias[channel], out.height(), out.width(),
                          out.data() + out.index(channel, 0, 0));
  return replacement_misclassifies(net, tr, run.golden(image), layer, out);
}

bool activation_fault_hits(const GoldenRun& run, int layer, int channel, int y, int x, int tap,
                           float clean_value, int bit, std::size_t image) {
  const Network& net = run.net();
  const LayerSpec& conv = net.layer(layer);
  const Trace& tr = run.trace(image);
  Tensor out = tr.outputs[static_cast<std::size_t>(layer)];
  out(channel, y, x) = kernels::conv2d_neuron(layer_input(tr, layer), conv, channel, y, x, tap,
                                              flip_bit(clean_value, bit));
  return replacement_misclassifies(net, tr, run.golden(image), layer, out);
}

}  // namespace

UnitFi exhaustive_weight_fi(const GoldenRun& run, int layer, int channel) {
  const LayerSpec& conv = conv_layer(run.net(), layer);
  check_site(run.net(), InjectionSite::whole_channel(layer, channel));
  UnitFi r;
  r.unit = {AnalysisMode::Filters, layer, channel, -1, -1};
  for (int tap = 0; tap < conv.filter_size(); ++tap)
    for (int bit = 0; bit < kBitsPerValue; ++bit) {
      ++r.counters.injections;
      ++r.counters.batch_forwards;
      for (std::size_t i = 0; i < run.size(); ++i) {
        r.misclassified += weight_fault_hits(run, layer, channel, tap, bit, i);
        ++r.outcomes;
        ++r.counters.image_forwards;
      }
    }
  return r;
}

UnitFi exhaustive_activation_fi(const GoldenRun& run, int layer, int channel, int y, int x) {
  const LayerSpec& conv = conv_layer(run.net(), layer);
  check_site(run.net(), InjectionSite::neuron(layer, channel, y, x));
  UnitFi r;
  r.unit = {AnalysisMode::Activations, layer, channel, y, x};
  for (std::size_t i = 0; i < run.size(); ++i) {
    const NeuronPatch p = neuron_patch(layer_input(run.trace(i), layer), conv, channel, y, x);
    for (std::size_t t = 0; t < p.taps.size(); ++t)
      for (int bit = 0; bit < kBitsPerValue; ++bit) {
        r.misclassified +=
            activation_fault_hits(run, layer, channel, y, x, p.taps[t], p.inputs[t], bit, i);
        ++r.outcomes;
        ++r.counters.injections;
        ++r.counters.image_forwards;
      }
  }
  return r;
}

std::uint64_t sfi_sample_size(std::uint64_t N, double e, double t, double p) {
  if (N <= 1) return 1;
  const long double n = static_cast<long double>(N);
  const long double q = static_cast<long double>(p) * (1.0L - static_cast<long double>(p));
  const long double ee = static_cast<long double>(e) * e;
  const long double tt = static_cast<long double>(t) * t;
  const long double size = std::ceil(n / (1.0L + ee * (n - 1.0L) / (tt * q)));
  if (!(size >= 1.0L)) return 1;
  if (size >= n) return N;
  return static_cast<std::uint64_t>(size);
}

double compare_mae(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw AnalysisError("cannot compare " + std::to_string(a.size()) + " values with " +
                        std::to_string(b.size()));
  if (a.empty()) throw AnalysisError("cannot compare empty lists");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

namespace {

/// Fault space of one bit position in one layer, with a decoder from a flat
/// index to a concrete fault.
class LayerFaultSpace {
 public:
  LayerFaultSpace(const GoldenRun& run, int layer, FaultTarget target)
      : run_(run), layer_(layer), target_(target), conv_(conv_layer(run.net(), layer)) {
    if (target == FaultTarget::Weights) {
      per_bit_ = static_cast<std::uint64_t>(conv_.weight.size());
      return;
    }
    const Shape3& s = run.net().output_shape(layer);
    prefix_.push_back(0);
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          neurons_.push_back({AnalysisMode::Activations, layer, c, y, x});
          prefix_.push_back(prefix_.back() +
                            unit_fault_space(run.net(), neurons_.back()) / kBitsPerValue);
        }
    per_image_ = prefix_.back();
    per_bit_ = per_image_ * run.size();
  }

  std::uint64_t per_bit() const { return per_bit_; }

  /// Misclassification rate of fault `index` at bit `bit`: a fraction of the
  /// batch for weights, 0 or 1 for activations.
  double outcome(std::uint64_t index, int bit, FiCounters& counters) const {
    ++counters.injections;
    if (target_ == FaultTarget::Weights) {
      const int fs = conv_.filter_size();
      const int channel = static_cast<int>(index / static_cast<std::uint64_t>(fs));
      const int tap = static_cast<int>(index % static_cast<std::uint64_t>(fs));
      std::uint64_t hits = 0;
      for (std::size_t i = 0; i < run_.size(); ++i)
        hits += weight_fault_hits(run_, layer_, channel, tap, bit, i);
      ++counters.batch_forwards;
      counters.image_forwards += run_.size();
      return static_cast<double>(hits) / static_cast<double>(run_.size());
    }
    const std::size_t image = static_cast<std::size_t>(index / per_image_);
    const std::uint64_t q = index % per_image_;
    const auto it = std::upper_bound(prefix_.begin(), prefix_.end(), q);
    const std::size_t n = static_cast<std::size_t>(it - prefix_.begin()) - 1;
    const AnalysisUnit& u = neurons_[n];
    const NeuronPatch p =
        neuron_patch(layer_input(run_.trace(image), layer_), conv_, u.channel, u.y, u.x);
    const std::size_t slot = static_cast<std::size_t>(q - prefix_[n]);
    ++counters.image_forwards;
    return activation_fault_hits(run_, layer_, u.channel, u.y, u.x, p.taps[slot],
                                 p.inputs[slot], bit, image)
               ? 1.0
               : 0.0;
  }

 private:
  const GoldenRun& run_;
  int layer_;
  FaultTarget target_;
  const LayerSpec& conv_;
  std::vector<AnalysisUnit> neurons_;
  std::vector<std::uint64_t> prefix_;
  std::uint64_t per_image_ = 0;
  std::uint64_t per_bit_ = 0;
};

/// n distinct indices from [0, N) in ascending order (Floyd's algorithm).
std::vector<std::uint64_t> sample_indices(std::uint64_t N, std::uint64_t n, std::mt19937_64& rng) {
  std::vector<std::uint64_t> out;
  if (n >= N) {
    out.resize(static_cast<std::size_t>(N));
    std::iota(out.begin(), out.end(), std::uint64_t{0});
    return out;
  }
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(n) * 2);
  for (std::uint64_t j = N - n; j < N; ++j) {
    std::uniform_int_distribution<std::uint64_t> pick(0, j);
    const std::uint64_t v = pick(rng);
    if (!chosen.insert(v).second) chosen.insert(j);
  }
  out.assign(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::mt19937_64 stream(std::uint64_t seed, int layer, int bit, int phase) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(bit + 1),
                    static_cast<std::uint32_t>(phase)};
  return std::mt19937_64(seq);
}

/// Mean outcome over faults (index list, bits given per index).
double evaluate(const LayerFaultSpace& space, const std::vector<std::uint64_t>& indices,
                const std::vector<int>& bits, int workers, FiCounters& counters) {
  std::vector<double> outcome(indices.size());
  std::vector<FiCounters> local(indices.size());
  parallel_for(indices.size(), workers, [&](std::size_t i) {
    outcome[i] = space.outcome(indices[i], bits[i], local[i]);
  });
  double sum = 0.0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    sum += outcome[i];
    counters += local[i];
  }
  return indices.empty() ? 0.0 : sum / static_cast<double>(indices.size());
}

FiLayerResult sfi_layer(const GoldenRun& run, const FiCampaignSpec& spec, int layer) {
  const LayerFaultSpace space(run, layer, spec.target);
  const std::uint64_t per_bit = space.per_bit();
  FiLayerResult r;
  r.layer = layer;
  r.fault_space = per_bit * kBitsPerValue;

  if (spec.mode == FiMode::SfiLayerwise) {
    std::mt19937_64 rng = stream(spec.seed, layer, -1, 0);
    const std::uint64_t n = sfi_sample_size(r.fault_space, spec.e, spec.t, spec.p);
    std::vector<std::uint64_t> flat = sample_indices(r.fault_space, n, rng);
    std::vector<int> bits(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
      bits[i] = static_cast<int>(flat[i] / per_bit);
      flat[i] %= per_bit;
    }
    r.lvf = evaluate(space, flat, bits, spec.workers, r.counters);
    r.bit_samples.assign(1, n);
    return r;
  }

  double sum = 0.0;
  for (int bit = 0; bit < kBitsPerValue; ++bit) {
    double p = 0.5;
    if (spec.mode == FiMode::SfiDataAware) {
      std::mt19937_64 prng = stream(spec.seed, layer, bit, 1);
      const std::vector<std::uint64_t> pilot =
          sample_indices(per_bit, static_cast<std::uint64_t>(spec.pilot), prng);
      const double rate =
          evaluate(space, pilot, std::vector<int>(pilot.size(), bit), spec.workers, r.counters);
      const double lo = 1.0 / spec.pilot;
      p = std::clamp(rate, lo, 1.0 - lo);
      r.bit_p.push_back(p);
    }
    std::mt19937_64 rng = stream(spec.seed, layer, bit, 0);
    const std::uint64_t n = sfi_sample_size(per_bit, spec.e, spec.t, p);
    const std::vector<std::uint64_t> idx = sample_indices(per_bit, n, rng);
    sum += evaluate(space, idx, std::vector<int>(idx.size(), bit), spec.workers, r.counters);
    r.bit_samples.push_back(n);
  }
  r.lvf = sum / kBitsPerValue;
  return r;
}

bool is_statistical(FiMode m) {
  return m == FiMode::SfiLayerwise || m == FiMode::SfiDataUnaware || m == FiMode::SfiDataAware;
}

}  // namespace

FiResult run_sfi(const GoldenRun& run, const FiCampaignSpec& spec) {
  spec.validate();
  if (!is_statistical(spec.mode))
    throw ConfigError("run_sfi needs a statistical mode, got " + std::string(to_string(spec.mode)));
  FiResult out;
  out.mode = spec.mode;
  out.target = spec.target;
  const std::vector<int> layers = spec.layers.empty() ? run.net().conv_layers() : spec.layers;
  for (int l : layers) {
    out.layers.push_back(sfi_layer(run, spec, l));
    out.counters += out.layers.back().counters;
  }
  return out;
}

FiResult run_fi(const GoldenRun& run, const FiCampaignSpec& spec, const SamplingPlan& plan) {
  if (is_statistical(spec.mode)) return run_sfi(run, spec);
  spec.validate();

  FiResult out;
  out.mode = spec.mode;
  const bool weights = spec.mode == FiMode::ExhaustiveWeights;
  out.target = weights ? FaultTarget::Weights : FaultTarget::Activations;
  const std::vector<AnalysisUnit> units =
      plan.units(weights ? AnalysisMode::Filters : AnalysisMode::Activations);
  out.units.resize(units.size());
  parallel_for(units.size(), spec.workers, [&](std::size_t i) {
    const AnalysisUnit& u = units[i];
    out.units[i] = weights ? exhaustive_weight_fi(run, u.layer, u.channel)
                           : exhaustive_activation_fi(run, u.layer, u.channel, u.y, u.x);
  });

  std::map<std::pair<int, int>, std::pair<double, std::size_t>> channels;
  std::map<int, FiLayerResult> layers;
  for (const UnitFi& u : out.units) {
    auto& c = channels[{u.unit.layer, u.unit.channel}];
    c.first += u.cvf();
    ++c.second;
    FiLayerResult& lr = layers[u.unit.layer];
    lr.layer = u.unit.layer;
    lr.fault_space += unit_fault_space(run.net(), u.unit) * run.size();
    lr.counters += u.counters;
    out.counters += u.counters;
  }
  std::map<int, std::pair<double, std::size_t>> layer_means;
  for (const auto& [key, c] : channels) {
    ChannelVf cv;
    cv.layer = key.first;
    cv.channel = key.second;
    cv.mode = weights ? AnalysisMode::Filters : AnalysisMode::Activations;
    cv.cvf = c.first / static_cast<double>(c.second);
    cv.cvf_alt = cv.cvf;
    cv.units = c.second;
    out.channels.push_back(cv);
    auto& lm = layer_means[key.first];
    lm.first += cv.cvf;
    ++lm.second;
  }
  for (auto& [l, lr] : layers) {
    lr.lvf = layer_means[l].first / static_cast<double>(layer_means[l].second);
    out.layers.push_back(lr);
  }
  return out;
}

}  // namespace vfa
