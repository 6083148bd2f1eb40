// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "vfa/bitflip.hpp"
#include "vfa/network.hpp"
#include "vfa/tensor.hpp"

namespace vfa {

/// Signed power-of-two grid of candidate vulnerability values (CVVs).
///
/// Bins in ascending order:
///   0                       negative overflow (<= -2^(rho_max + 1/2), -inf)
///   1 .. 2r+1               -2^r, -2^(r-1), ..., -2^-r
///   2r+2                    mask, |e| < 2^-(r + 1/2)
///   2r+3 .. 4r+3            2^-r, ..., 2^r
///   4r+4                    positive overflow (incl. +inf and NaN)
/// An error joins the bin of its nearest power of two in the log2 domain, so
/// each CVV bin covers magnitudes [2^(rho - 1/2), 2^(rho + 1/2)).
class CvvGrid {
 public:
  explicit CvvGrid(int rho_max = 10);

  int rho_max() const { return rho_max_; }
  int bin_count() const { return 4 * rho_max_ + 5; }
  int negative_overflow_bin() const { return 0; }
  int positive_overflow_bin() const { return bin_count() - 1; }
  int mask_bin() const { return 2 * rho_max_ + 2; }

  int cvv_bin(int sign, int rho) const {
    return sign < 0 ? 1 + (rho_max_ - rho) : mask_bin() + 1 + (rho + rho_max_);
  }
  int bin_of(const Pow2& p) const;
  int bin_of(double error) const { return bin_of(approx_pow2(error, rho_max_)); }
  bool is_cvv_bin(int bin) const {
    return bin > 0 && bin < positive_overflow_bin() && bin != mask_bin();
  }
  /// Signed CVV of a bin; +/-infinity for overflow bins and 0 for the mask bin.
  double bin_value(int bin) const;

  bool operator==(const CvvGrid&) const = default;

 private:
  int rho_max_;
};

/// Histogram of output errors over a CvvGrid.
class ErrorDistributionMap {
 public:
  explicit ErrorDistributionMap(CvvGrid grid = CvvGrid());

  void add(double error) { add_bin(grid_.bin_of(error)); }
  void add_bin(int bin, std::uint64_t n = 1) {
    counts_[static_cast<std::size_t>(bin)] += n;
    total_ += n;
  }

  const CvvGrid& grid() const { return grid_; }
  std::uint64_t total() const { return total_; }
  std::uint64_t count(int bin) const { return counts_[static_cast<std::size_t>(bin)]; }
  double mass(int bin) const;
  Eigen::ArrayXd masses() const;
  /// Inclusive cumulative mass over the ascending bins; the last entry is 1.
  Eigen::ArrayXd cdf() const;

 private:
  CvvGrid grid_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Throws AnalysisError on an empty list.
ErrorDistributionMap build_edm(std::span<const double> errors, const CvvGrid& grid = CvvGrid());

/// CVVs with non-zero mass split into four exploration spaces. Each list is
/// ordered by increasing magnitude.
struct Vvss {
  std::vector<double> negative_large;  // <= -1
  std::vector<double> negative_small;  // (-1, 0)
  std::vector<double> positive_small;  // (0, 1)
  std::vector<double> positive_large;  // >= 1

  /// Positive members ascending.
  std::vector<double> positive() const;
  /// Negative members by increasing magnitude.
  std::vector<double> negative() const;
  std::size_t size() const {
    return negative_large.size() + negative_small.size() + positive_small.size() +
           positive_large.size();
  }
  bool empty() const { return size() == 0; }
};

Vvss derive_vvss(const ErrorDistributionMap& edm);

/// Receptive field of one conv output element with padded taps dropped.
struct NeuronPatch {
  std::vector<float> inputs;
  std::vector<float> weights;
  std::vector<int> taps;  // index into the filter layout [in/groups, k, k]
};

NeuronPatch neuron_patch(const Tensor& ifmap, const LayerSpec& conv, int oc, int oy, int ox);

/// All single-bitflip output errors of a neuron: for each bit 0..31 the bit is
/// flipped in every input at once and the input errors are multiplied
/// pointwise by the weights. Result is bit-major: [bit * n + input].
std::vector<double> neuron_error_analysis(std::span<const float> inputs,
                                          std::span<const float> weights);

/// Output-channel errors from flipping each bit of each weight of filter `oc`:
/// error = epsilon(weight, bit) * ifmap tap, per output position (0 where the
/// tap falls in padding). Order: [tap][bit][position].
std::vector<double> filter_error_analysis(const Tensor& ifmap, const LayerSpec& conv, int oc);

/// Streaming forms of the two analyses, binning straight into an EDM.
void accumulate_neuron_errors(std::span<const float> inputs, std::span<const float> weights,
                              ErrorDistributionMap& edm);
void accumulate_filter_errors(const Tensor& ifmap, const LayerSpec& conv, int oc,
                              ErrorDistributionMap& edm);

}  // namespace vfa
