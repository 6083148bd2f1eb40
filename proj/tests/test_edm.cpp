// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "vfa/edm.hpp"
#include "vfa/error.hpp"

using namespace vfa;

namespace {

bool same_class_or_close(double got, long double want, long double floor) {
  if (std::isnan(got) || std::isnan(static_cast<double>(want)))
    return std::isnan(got) && std::isnan(static_cast<double>(want));
  if (std::isinf(got) || std::isinf(static_cast<double>(want))) return got == static_cast<double>(want);
  return std::abs(static_cast<long double>(got) - want) <= 1e-6L * std::abs(want) + floor;
}

/// Bin by interval membership: CVV v owns magnitudes in [v/sqrt2, v*sqrt2),
/// tested on exact squares.
int oracle_bin(const CvvGrid& g, double e) {
  using F = boost::multiprecision::cpp_bin_float_50;
  if (std::isnan(e)) return g.positive_overflow_bin();
  const F sq = F(e) * F(e);
  for (int b = 0; b < g.bin_count(); ++b) {
    if (!g.is_cvv_bin(b)) continue;
    const double v = g.bin_value(b);
    if ((v < 0) != (e < 0)) continue;
    const F vv = F(v) * F(v);
    if (sq * 2 >= vv && sq < vv * 2) return b;
  }
  const F top = F(std::ldexp(1.0, g.rho_max())) * F(std::ldexp(1.0, g.rho_max())) * 2;
  if (sq >= top) return e < 0 ? g.negative_overflow_bin() : g.positive_overflow_bin();
  return g.mask_bin();
}

}  // namespace

TEST_CASE("grid layout") {
  const CvvGrid g(10);
  CHECK(g.bin_count() == 45);
  CHECK(g.mask_bin() == 22);
  int cvvs = 0;
  double prev = -INFINITY;
  for (int b = 0; b < g.bin_count(); ++b) {
    CHECK(g.bin_value(b) >= prev);
    if (b > 0) CHECK(g.bin_value(b) > prev);
    prev = g.bin_value(b);
    cvvs += g.is_cvv_bin(b);
    CHECK(g.bin_value(b) == -g.bin_value(g.bin_count() - 1 - b));
  }
  CHECK(cvvs == 42);
  CHECK(g.bin_value(g.cvv_bin(-1, 0)) == -1.0);
  CHECK(g.bin_value(g.cvv_bin(1, -10)) == std::ldexp(1.0, -10));
  CHECK(g.bin_of(-0.5) == g.cvv_bin(-1, -1));
}

TEST_CASE("build_edm counting examples") {
  const std::vector<double> e{-1.0, -1.0, -1.0, 1.0};
  const ErrorDistributionMap edm = build_edm(e);
  CHECK(edm.mass(edm.grid().cvv_bin(-1, 0)) == 0.75);
  CHECK(edm.mass(edm.grid().cvv_bin(1, 0)) == 0.25);
  const std::vector<double> zeros(7, 0.0);
  CHECK(build_edm(zeros).mass(CvvGrid().mask_bin()) == 1.0);
  CHECK_THROWS_AS(build_edm(std::vector<double>{}), AnalysisError);
}

TEST_CASE("histogram equals interval-membership counting") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ex(-14.0, 14.0);
  std::vector<double> errors;
  for (int n = 0; n < 5000; ++n) errors.push_back((n % 3 ? 1 : -1) * std::exp2(ex(rng)));
  errors.push_back(NAN);
  errors.push_back(-INFINITY);
  errors.push_back(0.0);
  const CvvGrid g;
  const ErrorDistributionMap edm = build_edm(errors, g);
  std::vector<std::uint64_t> want(static_cast<std::size_t>(g.bin_count()), 0);
  for (double e : errors) ++want[static_cast<std::size_t>(oracle_bin(g, e))];
  for (int b = 0; b < g.bin_count(); ++b) CHECK(edm.count(b) == want[static_cast<std::size_t>(b)]);
  CHECK(std::abs(edm.masses().sum() - 1.0) <= 1e-9);
  const Eigen::ArrayXd cdf = edm.cdf();
  CHECK(cdf[cdf.size() - 1] == 1.0);
  for (Eigen::Index b = 1; b < cdf.size(); ++b) CHECK(cdf[b] >= cdf[b - 1]);
}

TEST_CASE("derive_vvss") {
  const ErrorDistributionMap unit = build_edm(std::vector<double>{-1.0, 1.0, 0.0});
  const Vvss v = derive_vvss(unit);
  CHECK(v.negative_large == std::vector<double>{-1.0});
  CHECK(v.positive_large == std::vector<double>{1.0});
  CHECK(v.negative_small.empty());
  CHECK(v.positive_small.empty());
  CHECK(derive_vvss(build_edm(std::vector<double>{0.0, 1e-9})).empty());

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 44);
  for (int trial = 0; trial < 50; ++trial) {
    ErrorDistributionMap edm;
    for (int k = 0; k < 12; ++k) edm.add_bin(pick(rng));
    const Vvss s = derive_vvss(edm);
    std::vector<double> members;
    for (auto* part : {&s.negative_large, &s.negative_small, &s.positive_small, &s.positive_large})
      members.insert(members.end(), part->begin(), part->end());
    std::vector<double> want;
    for (int b = 0; b < 45; ++b)
      if (edm.grid().is_cvv_bin(b) && edm.count(b) > 0) want.push_back(edm.grid().bin_value(b));
    std::sort(members.begin(), members.end());
    CHECK(members == want);
    for (double m : s.negative_large) CHECK(m <= -1.0);
    for (double m : s.negative_small) CHECK((m > -1.0 && m < 0.0));
    for (double m : s.positive_small) CHECK((m > 0.0 && m < 1.0));
    for (double m : s.positive_large) CHECK(m >= 1.0);
    for (std::size_t i = 1; i < s.positive().size(); ++i) CHECK(s.positive()[i] > s.positive()[i - 1]);
    for (std::size_t i = 1; i < s.negative().size(); ++i) CHECK(s.negative()[i] < s.negative()[i - 1]);
  }
}

TEST_CASE("neuron error analysis examples") {
  const std::vector<float> x{1.0f}, w{0.5f};
  const std::vector<double> e = neuron_error_analysis(x, w);
  REQUIRE(e.size() == 32);
  CHECK(e[31] == -1.0);
  const std::vector<float> xs{0.3f, -2.0f, 7.5f}, zero(3, 0.0f);
  ErrorDistributionMap edm;
  accumulate_neuron_errors(xs, zero, edm);
  CHECK(edm.mass(edm.grid().mask_bin()) == 1.0);
}

TEST_CASE("neuron error analysis equals single-fault brute force") {
  std::mt19937_64 rng(12);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<float> x(18), w(18);
    for (auto& v : x) v = std::max(0.0f, d(rng));  // post-ReLU style inputs
    for (auto& v : w) v = 0.3f * d(rng);
    const std::vector<double> got = neuron_error_analysis(x, w);
    const std::vector<long double> want = oracle::neuron_brute_force(x, w);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      const std::size_t j = k % x.size();
      const int bit = static_cast<int>(k / x.size());
      long double mag = 0.0L;
      for (std::size_t i = 0; i < x.size(); ++i)
        mag += std::abs(static_cast<long double>(i == j ? oracle::toggle(x[i], bit) : x[i]) * w[i]);
      CHECK(same_class_or_close(got[k], want[k], 2.0L * x.size() * 0x1p-63L * mag));
    }
  }
}

TEST_CASE("filter error analysis") {
  // 1x1 filter, w = 1, constant input 2: the sign flip gives -4 everywhere.
  Eigen::ArrayXf w(1), b(1);
  w << 1.0f;
  b << 0.0f;
  const LayerSpec conv = LayerSpec::conv2d(1, 1, 1, 1, 0, w, b);
  Tensor in(1, 3, 3);
  in.array().setConstant(2.0f);
  const std::vector<double> e = filter_error_analysis(in, conv, 0);
  REQUIRE(e.size() == 32 * 9);
  for (int p = 0; p < 9; ++p) CHECK(e[31 * 9 + p] == -4.0);
  for (double v : filter_error_analysis(Tensor(1, 3, 3), conv, 0))
    CHECK((v == 0.0 || std::isnan(v)));

  // Random padded layer against direct reconvolution.
  std::mt19937_64 rng(4);
  const LayerSpec rc = oracle::random_conv(2, 3, 3, 2, 1, rng);
  std::vector<LayerSpec> layers{rc, LayerSpec::global_avgpool()};
  const Tensor img = oracle::random_tensor(Shape3{2, 5, 5}, rng);
  const int oc = 1;
  const std::vector<double> got = filter_error_analysis(img, rc, oc);
  const Network clean_net(Shape3{2, 5, 5}, layers, 3);
  const auto clean = oracle::naive_forward(clean_net, img).outputs[0];
  const int plane = 9;  // 3x3 output
  std::size_t k = 0;
  for (int tap = 0; tap < rc.filter_size(); ++tap)
    for (int bit = 0; bit < 32; ++bit) {
      std::vector<LayerSpec> faulty = layers;
      faulty[0].weight[oc * rc.filter_size() + tap] =
          oracle::toggle(rc.weight[oc * rc.filter_size() + tap], bit);
      const Network fn(Shape3{2, 5, 5}, faulty, 3);
      const auto out = oracle::naive_forward(fn, img).outputs[0];
      for (int p = 0; p < plane; ++p, ++k) {
        const double want = out[static_cast<std::size_t>(oc * plane + p)] -
                            clean[static_cast<std::size_t>(oc * plane + p)];
        CHECK(same_class_or_close(got[k], want, 1e-12L * (1.0L + std::abs(static_cast<long double>(out[oc * plane + p])))));
      }
    }
  CHECK(k == got.size());
}
