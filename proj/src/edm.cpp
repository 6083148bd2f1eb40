// SPDX-License-Identifier: Apache-2.0
#include "vfa/edm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vfa/error.hpp"

namespace vfa {

CvvGrid::CvvGrid(int rho_max) : rho_max_(rho_max) {
  if (rho_max < 0 || rho_max > 60) throw ConfigError("rho_max must lie in [0, 60]");
}

int CvvGrid::bin_of(const Pow2& p) const {
  switch (p.kind) {
    case Pow2Kind::Mask: return mask_bin();
    case Pow2Kind::Overflow: return p.sign < 0 ? negative_overflow_bin() : positive_overflow_bin();
    case Pow2Kind::Cvv: return cvv_bin(p.sign, p.rho);
  }
  return mask_bin();
}

double CvvGrid::bin_value(int bin) const {
  if (bin == negative_overflow_bin()) return -std::numeric_limits<double>::infinity();
  if (bin == positive_overflow_bin()) return std::numeric_limits<double>::infinity();
  if (bin == mask_bin()) return 0.0;
  if (bin < mask_bin()) return -std::ldexp(1.0, rho_max_ - (bin - 1));
  return std::ldexp(1.0, bin - mask_bin() - 1 - rho_max_);
}

ErrorDistributionMap::ErrorDistributionMap(CvvGrid grid)
    : grid_(grid), counts_(static_cast<std::size_t>(grid.bin_count()), 0) {}

double ErrorDistributionMap::mass(int bin) const {
  return total_ == 0 ? 0.0 : static_cast<double>(count(bin)) / static_cast<double>(total_);
}

Eigen::ArrayXd ErrorDistributionMap::masses() const {
  Eigen::ArrayXd m(grid_.bin_count());
  for (int b = 0; b < grid_.bin_count(); ++b) m[b] = mass(b);
  return m;
}

Eigen::ArrayXd ErrorDistributionMap::cdf() const {
  Eigen::ArrayXd c(grid_.bin_count());
  std::uint64_t running = 0;
  for (int b = 0; b < grid_.bin_count(); ++b) {
    running += count(b);
    c[b] = total_ == 0 ? 0.0 : static_cast<double>(running) / static_cast<double>(total_);
  }
  return c;
}

ErrorDistributionMap build_edm(std::span<const double> errors, const CvvGrid& grid) {
  if (errors.empty()) throw AnalysisError("cannot build an error distribution from no errors");
  ErrorDistributionMap edm(grid);
  for (double e : errors) edm.add(e);
  return edm;
}

std::vector<double> Vvss::positive() const {
  std::vector<double> out(positive_small);
  out.insert(out.end(), positive_large.begin(), positive_large.end());
  return out;
}

std::vector<double> Vvss::negative() const {
  std::vector<double> out(negative_small);
  out.insert(out.end(), negative_large.begin(), negative_large.end());
  return out;
}

Vvss derive_vvss(const ErrorDistributionMap& edm) {
  const CvvGrid& g = edm.grid();
  Vvss v;
  // Walk outward from the mask bin so each list grows in magnitude.
  for (int b = g.mask_bin() - 1; b > g.negative_overflow_bin(); --b) {
    if (edm.count(b) == 0) continue;
    const double c = g.bin_value(b);
    (c <= -1.0 ? v.negative_large : v.negative_small).push_back(c);
  }
  for (int b = g.mask_bin() + 1; b < g.positive_overflow_bin(); ++b) {
    if (edm.count(b) == 0) continue;
    const double c = g.bin_value(b);
    (c >= 1.0 ? v.positive_large : v.positive_small).push_back(c);
  }
  return v;
}

NeuronPatch neuron_patch(const Tensor& ifmap, const LayerSpec& conv, int oc, int oy, int ox) {
  NeuronPatch p;
  const int k = conv.kernel;
  const int c0 = conv.group_offset(oc);
  const float* filter = conv.weight.data() + static_cast<std::ptrdiff_t>(oc) * conv.filter_size();
  for (int ic = 0; ic < conv.group_in_channels(); ++ic)
    for (int ky = 0; ky < k; ++ky) {
      const int iy = oy * conv.stride - conv.padding + ky;
      if (iy < 0 || iy >= ifmap.height()) continue;
      for (int kx = 0; kx < k; ++kx) {
        const int ix = ox * conv.stride - conv.padding + kx;
        if (ix < 0 || ix >= ifmap.width()) continue;
        const int tap = (ic * k + ky) * k + kx;
        p.inputs.push_back(ifmap(c0 + ic, iy, ix));
        p.weights.push_back(filter[tap]);
        p.taps.push_back(tap);
      }
    }
  return p;
}

namespace {

// Calls f(bit, input_errors (double array)) per bit, with the flip applied to
// every input simultaneously.
template <typename F>
void for_each_bit_errors(std::span<const float> inputs, std::span<const float> weights, F&& f) {
  if (inputs.size() != weights.size())
    throw ConfigError("neuron inputs and weights differ in length");
  const auto n = static_cast<Eigen::Index>(inputs.size());
  const Eigen::Map<const Eigen::ArrayXf> x(inputs.data(), n);
  const Eigen::ArrayXd xd = x.cast<double>();
  const Eigen::ArrayXd wd = Eigen::Map<const Eigen::ArrayXf>(weights.data(), n).cast<double>();
  for (int bit = 0; bit < kBitsPerValue; ++bit) {
    const Eigen::ArrayXf erroneous = x.unaryExpr([bit](float v) { return flip_bit(v, bit); });
    const Eigen::ArrayXd input_errors = erroneous.cast<double>() - xd;
    f(bit, (input_errors * wd).eval());
  }
}

int out_extent(int in, const LayerSpec& conv) {
  return (in + 2 * conv.padding - conv.kernel) / conv.stride + 1;
}

template <typename F>
void for_each_filter_error(const Tensor& ifmap, const LayerSpec& conv, int oc, F&& f) {
  const int k = conv.kernel;
  const int c0 = conv.group_offset(oc);
  const int oh = out_extent(ifmap.height(), conv);
  const int ow = out_extent(ifmap.width(), conv);
  const float* filter = conv.weight.data() + static_cast<std::ptrdiff_t>(oc) * conv.filter_size();
  for (int ic = 0; ic < conv.group_in_channels(); ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const float w = filter[(ic * k + ky) * k + kx];
        for (int bit = 0; bit < kBitsPerValue; ++bit) {
          const double eps = exact_epsilon(w, bit);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * conv.stride - conv.padding + ky;
            const bool row_ok = iy >= 0 && iy < ifmap.height();
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * conv.stride - conv.padding + kx;
              if (!row_ok || ix < 0 || ix >= ifmap.width())
                f(0.0);
              else
                f(eps * static_cast<double>(ifmap(c0 + ic, iy, ix)));
            }
          }
        }
      }
}

}  // namespace

std::vector<double> neuron_error_analysis(std::span<const float> inputs,
                                          std::span<const float> weights) {
  std::vector<double> out(inputs.size() * kBitsPerValue);
  const auto n = static_cast<Eigen::Index>(inputs.size());
  for_each_bit_errors(inputs, weights, [&](int bit, const Eigen::ArrayXd& errors) {
    Eigen::Map<Eigen::ArrayXd>(out.data() + bit * n, n) = errors;
  });
  return out;
}

void accumulate_neuron_errors(std::span<const float> inputs, std::span<const float> weights,
                              ErrorDistributionMap& edm) {
  for_each_bit_errors(inputs, weights, [&](int, const Eigen::ArrayXd& errors) {
    for (double e : errors) edm.add(e);
  });
}

std::vector<double> filter_error_analysis(const Tensor& ifmap, const LayerSpec& conv, int oc) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(conv.filter_size()) * kBitsPerValue *
              static_cast<std::size_t>(out_extent(ifmap.height(), conv)) *
              static_cast<std::size_t>(out_extent(ifmap.width(), conv)));
  for_each_filter_error(ifmap, conv, oc, [&](double e) { out.push_back(e); });
  return out;
}

void accumulate_filter_errors(const Tensor& ifmap, const LayerSpec& conv, int oc,
                              ErrorDistributionMap& edm) {
  for_each_filter_error(ifmap, conv, oc, [&](double e) { edm.add(e); });
}

}  // namespace vfa
