// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <map>
#include <random>

#include "support/oracles.hpp"
#include "vfa/error.hpp"
#include "vfa/fi.hpp"
#include "vfa/model_io.hpp"

using namespace vfa;

namespace {

/// 1x1 input -> 1x1 conv to `w.size()` channels -> flatten -> linear.
Network one_by_one(const std::vector<float>& w, const std::vector<float>& head, int classes) {
  const int c = static_cast<int>(w.size());
  Eigen::ArrayXf cw(c), cb = Eigen::ArrayXf::Zero(c), lw(classes * c), lb = Eigen::ArrayXf::Zero(classes);
  for (int i = 0; i < c; ++i) cw[i] = w[static_cast<std::size_t>(i)];
  for (int i = 0; i < classes * c; ++i) lw[i] = head[static_cast<std::size_t>(i)];
  std::vector<LayerSpec> l{LayerSpec::conv2d(1, c, 1, 1, 0, cw, cb), LayerSpec::flatten(),
                           LayerSpec::linear(c, classes, lw, lb)};
  return Network(Shape3{1, 1, 1}, std::move(l), classes);
}

Tensor filled(Shape3 s, float v) {
  Tensor t(s);
  t.array() = v;
  return t;
}

/// Misclassification count over the batch with weight `index` of layer
/// `layer` flipped at `bit`, from a rebuilt network.
int rebuilt_weight_hits(const Network& net, const std::vector<Tensor>& images,
                        const std::vector<int>& golden, int layer, int index, int bit) {
  std::vector<LayerSpec> layers = net.layers();
  float& w = layers[static_cast<std::size_t>(layer)].weight[index];
  w = oracle::toggle(w, bit);
  const Network faulty(net.input_shape(), layers, net.classes());
  const Logits out = forward(faulty, images);
  int hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tensor row(Shape3{net.classes(), 1, 1});
    for (int k = 0; k < net.classes(); ++k) row[k] = out(static_cast<Eigen::Index>(i), k);
    hits += is_misclassified(row, golden[i]);
  }
  return hits;
}

}  // namespace

TEST_CASE("sample size examples") {
  CHECK(sfi_sample_size(1000000, 0.01, 2.576, 0.5) == 16319);
  CHECK(sfi_sample_size(1000, 0.05, 1.96, 0.5) == 278);
  CHECK(sfi_sample_size(1, 0.01, 2.576, 0.5) == 1);
  CHECK(sfi_sample_size(1000000, 1e6, 2.576, 0.5) == 1);
  CHECK(sfi_sample_size(50, 1e-9, 2.576, 0.5) == 50);
}

TEST_CASE("sample size agrees with a high-precision evaluation") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> le(-3.0, -0.5), t(1.0, 3.5), p(0.001, 0.999);
  std::uniform_int_distribution<int> ln(0, 9);
  std::uint64_t prev = 0;
  for (int i = 0; i < 300; ++i) {
    const std::uint64_t N = static_cast<std::uint64_t>(std::pow(10.0, ln(rng))) + static_cast<std::uint64_t>(i);
    const double e = std::pow(10.0, le(rng)), tt = t(rng), pp = p(rng);
    const auto got = static_cast<long long>(sfi_sample_size(N, e, tt, pp));
    const auto want = static_cast<long long>(oracle::sfi_size_hp(N, e, tt, pp));
    CHECK(std::llabs(got - want) <= 1);
    CHECK(got >= 1);
    CHECK(static_cast<std::uint64_t>(got) <= std::max<std::uint64_t>(N, 1));
  }
  // Monotone in N for fixed (e, t, p).
  for (std::uint64_t N = 1; N < 200000; N = N * 3 / 2 + 1) {
    const std::uint64_t n = sfi_sample_size(N, 0.01, 2.576, 0.5);
    CHECK(n >= prev);
    prev = n;
  }
}

TEST_CASE("campaign spec validation") {
  FiCampaignSpec s;
  CHECK_NOTHROW(s.validate());
  s.e = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.t = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.p = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.pilot = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(parse_fi_mode("sfi-data-aware") == FiMode::SfiDataAware);
  CHECK(to_string(FiMode::ExhaustiveActivations) == "exhaustive-activations");
  CHECK_THROWS_AS(parse_fi_mode("sfi"), ConfigError);
  CHECK(parse_fault_target("activations") == FaultTarget::Activations);
  CHECK_THROWS_AS(parse_fault_target("biases"), ConfigError);
}

TEST_CASE("filter feeding a dead channel is never vulnerable") {
  // Channel 1 is ignored by the head; inputs are small enough that no single
  // weight flip overflows to inf (0 * inf would leak a NaN).
  const Network net = one_by_one({0.5f, 0.5f}, {1.0f, 0.0f, -1.0f, 0.0f}, 2);
  const GoldenRun run(net, {filled(net.input_shape(), 1.0f), filled(net.input_shape(), -1.5f)});
  const UnitFi fi = exhaustive_weight_fi(run, 0, 1);
  CHECK(fi.outcomes == 32 * 2);
  CHECK(fi.misclassified == 0);
  CHECK(fi.cvf() == 0.0);
}

TEST_CASE("only the sign flip misclassifies") {
  const Network net = one_by_one({0.5f}, {1.0f, 0.0f}, 2);
  const GoldenRun run(net, {filled(net.input_shape(), 1.0f)});
  REQUIRE(run.golden(0) == 0);
  const UnitFi fi = exhaustive_weight_fi(run, 0, 0);
  CHECK(fi.outcomes == 32);
  CHECK(fi.misclassified == 1);
  CHECK(fi.cvf() == doctest::Approx(1.0 / 32));
  CHECK(fi.counters.injections == 32);
  CHECK(fi.counters.batch_forwards == 32);
  CHECK(fi.counters.image_forwards == 32);
}

TEST_CASE("weight FI agrees with a rebuilt faulty network") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 3; ++trial) {
    const Network net = oracle::random_net(rng);
    std::vector<Tensor> images;
    for (int i = 0; i < 4; ++i) images.push_back(oracle::random_tensor(net.input_shape(), rng));
    const GoldenRun run(net, images);
    for (int layer : net.conv_layers()) {
      const LayerSpec& conv = net.layer(layer);
      const int channel = static_cast<int>(rng() % static_cast<unsigned>(conv.out_channels));
      const UnitFi fi = exhaustive_weight_fi(run, layer, channel);
      std::uint64_t hits = 0;
      for (int tap = 0; tap < conv.filter_size(); ++tap)
        for (int bit = 0; bit < 32; ++bit)
          hits += static_cast<std::uint64_t>(rebuilt_weight_hits(
              net, images, run.goldens(), layer, channel * conv.filter_size() + tap, bit));
      CHECK(fi.outcomes == static_cast<std::uint64_t>(conv.filter_size()) * 32 * images.size());
      CHECK(fi.misclassified == hits);
    }
  }
}

TEST_CASE("exhaustive FI leaves the network and goldens unchanged") {
  std::mt19937_64 rng(43);
  const Network net = oracle::random_net(rng);
  const std::vector<LayerSpec> before = net.layers();
  std::vector<Tensor> images;
  for (int i = 0; i < 3; ++i) images.push_back(oracle::random_tensor(net.input_shape(), rng));
  const GoldenRun run(net, images);
  const Logits clean = forward(net, images);
  (void)exhaustive_weight_fi(run, 0, 1);
  (void)exhaustive_activation_fi(run, 4, 2, 1, 1);
  for (int l = 0; l < net.layer_count(); ++l) {
    CHECK((net.layer(l).weight == before[static_cast<std::size_t>(l)].weight).all());
    CHECK((net.layer(l).bias == before[static_cast<std::size_t>(l)].bias).all());
  }
  const Logits again = forward(net, images);
  CHECK((clean.array() == again.array()).all());
  CHECK(golden_classify(again) == run.goldens());
}

TEST_CASE("activation FI agrees with a recomputed neuron") {
  std::mt19937_64 rng(47);
  const Network net = oracle::random_two_conv_net(rng);
  std::vector<Tensor> images;
  for (int i = 0; i < 3; ++i) images.push_back(oracle::random_tensor(net.input_shape(), rng));
  const GoldenRun run(net, images);
  const int layer = 2;
  const LayerSpec& conv = net.layer(layer);
  std::uint64_t total = 0, mismatches = 0;
  for (auto [c, y, x] : std::vector<std::array<int, 3>>{{0, 0, 0}, {1, 2, 3}, {3, 5, 5}}) {
    const UnitFi fi = exhaustive_activation_fi(run, layer, c, y, x);
    std::uint64_t hits = 0, outcomes = 0;
    for (std::size_t i = 0; i < run.size(); ++i) {
      const Trace& t = run.trace(i);
      const NeuronPatch p = neuron_patch(layer_input(t, layer), conv, c, y, x);
      for (std::size_t k = 0; k < p.inputs.size(); ++k)
        for (int bit = 0; bit < 32; ++bit) {
          double acc = conv.bias[c];
          for (std::size_t j = 0; j < p.inputs.size(); ++j) {
            const float v = j == k ? oracle::toggle(p.inputs[j], bit) : p.inputs[j];
            acc += static_cast<double>(v) * static_cast<double>(p.weights[j]);
          }
          Tensor replaced = t.outputs[layer];
          replaced(c, y, x) = static_cast<float>(acc);
          hits += replacement_misclassifies(net, t, run.golden(i), layer, replaced);
          ++outcomes;
        }
    }
    CHECK(fi.outcomes == outcomes);
    mismatches += hits > fi.misclassified ? hits - fi.misclassified : fi.misclassified - hits;
    total += outcomes;
  }
  // Summation order differs between the two; only knife-edge faults may disagree.
  CHECK(mismatches * 200 <= total);
}

TEST_CASE("data-unaware count equals the per-bit formula sum") {
  const Network net = load_model(VFA_DATA_DIR "/desk.vglm");
  Batch b = load_batch(VFA_DATA_DIR "/desk.vglb", net.classes());
  b.images.resize(2);
  const GoldenRun run(net, b.images);
  FiCampaignSpec spec;
  spec.mode = FiMode::SfiDataUnaware;
  spec.target = FaultTarget::Weights;
  spec.e = 0.2;
  spec.seed = 9;
  const FiResult r = run_sfi(run, spec);
  std::uint64_t expected = 0;
  for (int l : net.conv_layers())
    expected += 32 * sfi_sample_size(net.weight_count(l), spec.e, spec.t, 0.5);
  CHECK(r.counters.injections == expected);
  CHECK(r.counters.batch_forwards == expected);
  CHECK(r.counters.image_forwards == expected * 2);
  REQUIRE(r.layers.size() == 3);
  for (const FiLayerResult& l : r.layers) {
    CHECK(l.bit_samples.size() == 32);
    CHECK(l.fault_space == 32 * net.weight_count(l.layer));
    CHECK(l.lvf >= 0.0);
    CHECK(l.lvf <= 1.0);
  }
}

TEST_CASE("huge margin gives one fault per stratum") {
  std::mt19937_64 rng(53);
  const Network net = oracle::random_two_conv_net(rng);
  const GoldenRun run(net, {oracle::random_tensor(net.input_shape(), rng)});
  FiCampaignSpec spec;
  spec.e = 1e6;
  spec.target = FaultTarget::Activations;
  spec.mode = FiMode::SfiLayerwise;
  CHECK(run_sfi(run, spec).counters.injections == 2);
  spec.mode = FiMode::SfiDataUnaware;
  CHECK(run_sfi(run, spec).counters.injections == 64);
  spec.mode = FiMode::SfiDataAware;
  spec.pilot = 4;
  const FiResult aware = run_sfi(run, spec);
  CHECK(aware.counters.injections == 64 + 64 * 4);
  for (const FiLayerResult& l : aware.layers) {
    CHECK(l.bit_p.size() == 32);
    for (double p : l.bit_p) {
      CHECK(p >= 0.25);
      CHECK(p <= 0.75);
    }
  }
}

TEST_CASE("activation fault space counts valid taps") {
  std::mt19937_64 rng(59);
  const Network net = oracle::random_two_conv_net(rng);
  const GoldenRun run(net, {oracle::random_tensor(net.input_shape(), rng),
                            oracle::random_tensor(net.input_shape(), rng)});
  FiCampaignSpec spec;
  spec.mode = FiMode::SfiLayerwise;
  spec.target = FaultTarget::Activations;
  spec.e = 1e6;
  const FiResult r = run_sfi(run, spec);
  REQUIRE(r.layers.size() == 2);
  for (const FiLayerResult& l : r.layers) {
    std::uint64_t taps = 0;
    const Shape3& s = net.output_shape(l.layer);
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
          taps += neuron_patch(layer_input(run.trace(0), l.layer), net.layer(l.layer), c, y, x)
                      .inputs.size();
    CHECK(l.fault_space == taps * 32 * 2);
  }
}

TEST_CASE("layer-wise estimates land within the margin in repeated campaigns") {
  std::mt19937_64 rng(61);
  const Network net = oracle::random_two_conv_net(rng);
  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) images.push_back(oracle::random_tensor(net.input_shape(), rng));
  const GoldenRun run(net, images);

  std::map<int, double> truth;
  for (int l : net.conv_layers()) {
    std::uint64_t hits = 0, outcomes = 0;
    for (int c = 0; c < net.layer(l).out_channels; ++c) {
      const UnitFi fi = exhaustive_weight_fi(run, l, c);
      hits += fi.misclassified;
      outcomes += fi.outcomes;
    }
    truth[l] = static_cast<double>(hits) / static_cast<double>(outcomes);
  }

  FiCampaignSpec spec;
  spec.mode = FiMode::SfiLayerwise;
  spec.target = FaultTarget::Weights;
  spec.e = 0.05;
  spec.t = 1.96;
  for (int l : net.conv_layers()) {
    int within = 0;
    spec.layers = {l};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      spec.seed = seed;
      const FiResult r = run_sfi(run, spec);
      within += std::abs(r.layers[0].lvf - truth[l]) <= spec.e;
    }
    CHECK(within >= 45);
  }
}

TEST_CASE("statistical campaigns are reproducible at any worker count") {
  std::mt19937_64 rng(67);
  const Network net = oracle::random_two_conv_net(rng);
  std::vector<Tensor> images;
  for (int i = 0; i < 3; ++i) images.push_back(oracle::random_tensor(net.input_shape(), rng));
  const GoldenRun run(net, images);
  for (FiMode mode : {FiMode::SfiLayerwise, FiMode::SfiDataUnaware, FiMode::SfiDataAware})
    for (FaultTarget target : {FaultTarget::Weights, FaultTarget::Activations}) {
      FiCampaignSpec spec;
      spec.mode = mode;
      spec.target = target;
      spec.e = 0.1;
      spec.pilot = 10;
      spec.seed = 77;
      const FiResult a = run_sfi(run, spec);
      spec.workers = 3;
      const FiResult b = run_sfi(run, spec);
      REQUIRE(a.layers.size() == b.layers.size());
      for (std::size_t i = 0; i < a.layers.size(); ++i) {
        CHECK(a.layers[i].lvf == b.layers[i].lvf);
        CHECK(a.layers[i].bit_samples == b.layers[i].bit_samples);
        CHECK(a.layers[i].bit_p == b.layers[i].bit_p);
      }
      CHECK(a.counters.injections == b.counters.injections);
    }
}

TEST_CASE("exhaustive campaigns follow the plan") {
  std::mt19937_64 rng(71);
  const Network net = oracle::random_two_conv_net(rng);
  const GoldenRun run(net, {oracle::random_tensor(net.input_shape(), rng)});
  const SamplingPlan plan = make_sampling_plan(net, 0.5, 2);
  FiCampaignSpec spec;
  spec.mode = FiMode::ExhaustiveWeights;
  const FiResult w = run_fi(run, spec, plan);
  CHECK(w.units.size() == plan.units(AnalysisMode::Filters).size());
  CHECK(w.channels.size() == w.units.size());
  spec.mode = FiMode::ExhaustiveActivations;
  spec.workers = 2;
  const FiResult a = run_fi(run, spec, plan);
  CHECK(a.units.size() == plan.units(AnalysisMode::Activations).size());
  for (const UnitFi& u : a.units) {
    CHECK(u.misclassified <= u.outcomes);
    CHECK(u.cvf() >= 0.0);
    CHECK(u.cvf() <= 1.0);
  }
  CHECK_THROWS_AS(exhaustive_weight_fi(run, 1, 0), ConfigError);
}

TEST_CASE("mean absolute error") {
  const std::vector<double> a{0.1, 0.3}, b{0.2, 0.1}, c{0.1};
  CHECK(compare_mae(a, a) == 0.0);
  CHECK(compare_mae(a, b) == doctest::Approx(0.15));
  CHECK_THROWS_AS(compare_mae(a, c), AnalysisError);
  CHECK_THROWS_AS(compare_mae(std::vector<double>{}, std::vector<double>{}), AnalysisError);
}
