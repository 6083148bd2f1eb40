// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "vfa/network.hpp"
#include "vfa/tensor.hpp"

namespace vfa::kernels {

// Every reduction below accumulates in a fixed order so that results are
// bitwise reproducible and a single output element recomputed on its own
// equals the same element of a full-layer evaluation.

/// Range [lo, hi) of output columns whose tap at kernel offset `k` lands inside
/// an input of extent `in_extent`.
inline void valid_range(int out_extent, int in_extent, int stride, int padding, int k, int& lo,
                        int& hi) {
  lo = 0;
  while (lo < out_extent && lo * stride - padding + k < 0) ++lo;
  hi = out_extent;
  while (hi > lo && (hi - 1) * stride - padding + k >= in_extent) --hi;
}

/// One output channel of a conv layer. `filter` points at filter_size() weights
/// laid out [in/groups, k, k]; passing a modified copy evaluates a faulty filter.
/// Per element: sum over (input channel, kernel row, kernel col) ascending,
/// padded taps skipped, bias added last.
template <typename S>
void conv2d_channel(const TensorT<S>& in, const LayerSpec& conv, int oc, const float* filter,
                    float bias, int out_h, int out_w, S* out) {
  const int k = conv.kernel;
  const int cin = conv.group_in_channels();
  const int c0 = conv.group_offset(oc);
  const int plane = out_h * out_w;
  for (int p = 0; p < plane; ++p) out[p] = S(0);
  for (int ic = 0; ic < cin; ++ic) {
    for (int ky = 0; ky < k; ++ky) {
      int ylo, yhi;
      valid_range(out_h, in.height(), conv.stride, conv.padding, ky, ylo, yhi);
      for (int kx = 0; kx < k; ++kx) {
        int xlo, xhi;
        valid_range(out_w, in.width(), conv.stride, conv.padding, kx, xlo, xhi);
        const S w = S(filter[(ic * k + ky) * k + kx]);
        for (int oy = ylo; oy < yhi; ++oy) {
          const int iy = oy * conv.stride - conv.padding + ky;
          const S* row = in.data() + in.index(c0 + ic, iy, 0);
          S* o = out + oy * out_w;
          for (int ox = xlo; ox < xhi; ++ox) o[ox] += w * row[ox * conv.stride - conv.padding + kx];
        }
      }
    }
  }
  const S b = S(bias);
  for (int p = 0; p < plane; ++p) out[p] += b;
}

/// A single conv output element, with input tap `override_tap` (index into the
/// filter layout, -1 for none) reading `override_value` instead of the stored
/// activation. Bitwise equal to the matching element of conv2d_channel.
template <typename S>
S conv2d_neuron(const TensorT<S>& in, const LayerSpec& conv, int oc, int oy, int ox,
                int override_tap = -1, S override_value = S(0)) {
  const int k = conv.kernel;
  const int cin = conv.group_in_channels();
  const int c0 = conv.group_offset(oc);
  const float* filter = conv.weight.data() + static_cast<std::ptrdiff_t>(oc) * conv.filter_size();
  S sum = S(0);
  for (int ic = 0; ic < cin; ++ic)
    for (int ky = 0; ky < k; ++ky) {
      const int iy = oy * conv.stride - conv.padding + ky;
      if (iy < 0 || iy >= in.height()) continue;
      for (int kx = 0; kx < k; ++kx) {
        const int ix = ox * conv.stride - conv.padding + kx;
        if (ix < 0 || ix >= in.width()) continue;
        const int tap = (ic * k + ky) * k + kx;
        const S x = tap == override_tap ? override_value : in(c0 + ic, iy, ix);
        sum += S(filter[tap]) * x;
      }
    }
  return sum + S(conv.bias[oc]);
}

template <typename S>
void conv2d(const TensorT<S>& in, const LayerSpec& conv, TensorT<S>& out) {
  const int fs = conv.filter_size();
  for (int oc = 0; oc < conv.out_channels; ++oc)
    conv2d_channel(in, conv, oc, conv.weight.data() + static_cast<std::ptrdiff_t>(oc) * fs,
                   conv.bias[oc], out.height(), out.width(),
                   out.data() + out.index(oc, 0, 0));
}

template <typename S>
void conv2d_backward(const TensorT<S>& grad_out, const LayerSpec& conv, TensorT<S>& grad_in) {
  const int k = conv.kernel;
  const int cin = conv.group_in_channels();
  for (int oc = 0; oc < conv.out_channels; ++oc) {
    const int c0 = conv.group_offset(oc);
    const float* filter =
        conv.weight.data() + static_cast<std::ptrdiff_t>(oc) * conv.filter_size();
    for (int ic = 0; ic < cin; ++ic)
      for (int ky = 0; ky < k; ++ky) {
        int ylo, yhi;
        valid_range(grad_out.height(), grad_in.height(), conv.stride, conv.padding, ky, ylo, yhi);
        for (int kx = 0; kx < k; ++kx) {
          int xlo, xhi;
          valid_range(grad_out.width(), grad_in.width(), conv.stride, conv.padding, kx, xlo, xhi);
          const S w = S(filter[(ic * k + ky) * k + kx]);
          for (int oy = ylo; oy < yhi; ++oy) {
            const int iy = oy * conv.stride - conv.padding + ky;
            for (int ox = xlo; ox < xhi; ++ox)
              grad_in(c0 + ic, iy, ox * conv.stride - conv.padding + kx) += w * grad_out(oc, oy, ox);
          }
        }
      }
  }
}

// NaN passes through (x <= 0 is false for NaN), matching common frameworks.
template <typename S>
void relu(const TensorT<S>& in, TensorT<S>& out) {
  out.array() = in.array().unaryExpr([](S v) { return v <= S(0) ? S(0) : v; });
}

template <typename S>
void relu_backward(const TensorT<S>& in, const TensorT<S>& grad_out, TensorT<S>& grad_in) {
  grad_in.array() += (in.array() > S(0)).select(grad_out.array(), S(0));
}

/// Max pooling; padded taps are ignored and NaN wins. Writes the flat input
/// index of each selected element to `argmax` when given.
template <typename S>
void maxpool(const TensorT<S>& in, const LayerSpec& pool, TensorT<S>& out,
             Eigen::ArrayXi* argmax = nullptr) {
  if (argmax) argmax->resize(out.size());
  for (int c = 0; c < out.channels(); ++c)
    for (int oy = 0; oy < out.height(); ++oy)
      for (int ox = 0; ox < out.width(); ++ox) {
        S best = S(0);
        Eigen::Index best_idx = -1;
        for (int ky = 0; ky < pool.kernel; ++ky) {
          const int iy = oy * pool.stride - pool.padding + ky;
          if (iy < 0 || iy >= in.height()) continue;
          for (int kx = 0; kx < pool.kernel; ++kx) {
            const int ix = ox * pool.stride - pool.padding + kx;
            if (ix < 0 || ix >= in.width()) continue;
            const S v = in(c, iy, ix);
            if (best_idx < 0 || (!std::isnan(best) && (std::isnan(v) || v > best))) {
              best = v;
              best_idx = in.index(c, iy, ix);
            }
          }
        }
        out(c, oy, ox) = best;
        if (argmax) (*argmax)[out.index(c, oy, ox)] = static_cast<int>(best_idx);
      }
}

template <typename S>
void maxpool_backward(const Eigen::ArrayXi& argmax, const TensorT<S>& grad_out,
                      TensorT<S>& grad_in) {
  for (Eigen::Index i = 0; i < grad_out.size(); ++i) grad_in[argmax[i]] += grad_out[i];
}

/// Average pooling with padded taps counted in the divisor (kernel * kernel).
template <typename S>
void avgpool(const TensorT<S>& in, const LayerSpec& pool, TensorT<S>& out) {
  const S area = S(pool.kernel * pool.kernel);
  for (int c = 0; c < out.channels(); ++c)
    for (int oy = 0; oy < out.height(); ++oy)
      for (int ox = 0; ox < out.width(); ++ox) {
        S sum = S(0);
        for (int ky = 0; ky < pool.kernel; ++ky) {
          const int iy = oy * pool.stride - pool.padding + ky;
          if (iy < 0 || iy >= in.height()) continue;
          for (int kx = 0; kx < pool.kernel; ++kx) {
            const int ix = ox * pool.stride - pool.padding + kx;
            if (ix < 0 || ix >= in.width()) continue;
            sum += in(c, iy, ix);
          }
        }
        out(c, oy, ox) = sum / area;
      }
}

template <typename S>
void avgpool_backward(const LayerSpec& pool, const TensorT<S>& grad_out, TensorT<S>& grad_in) {
  const S area = S(pool.kernel * pool.kernel);
  for (int c = 0; c < grad_out.channels(); ++c)
    for (int oy = 0; oy < grad_out.height(); ++oy)
      for (int ox = 0; ox < grad_out.width(); ++ox) {
        const S g = grad_out(c, oy, ox) / area;
        for (int ky = 0; ky < pool.kernel; ++ky) {
          const int iy = oy * pool.stride - pool.padding + ky;
          if (iy < 0 || iy >= grad_in.height()) continue;
          for (int kx = 0; kx < pool.kernel; ++kx) {
            const int ix = ox * pool.stride - pool.padding + kx;
            if (ix < 0 || ix >= grad_in.width()) continue;
            grad_in(c, iy, ix) += g;
          }
        }
      }
}

template <typename S>
void global_avgpool(const TensorT<S>& in, TensorT<S>& out) {
  const auto plane = static_cast<Eigen::Index>(in.shape().plane());
  for (int c = 0; c < in.channels(); ++c) {
    const S* p = in.data() + in.index(c, 0, 0);
    S sum = S(0);
    for (Eigen::Index i = 0; i < plane; ++i) sum += p[i];
    out[c] = sum / S(plane);
  }
}

template <typename S>
void global_avgpool_backward(const TensorT<S>& grad_out, TensorT<S>& grad_in) {
  const auto plane = static_cast<Eigen::Index>(grad_in.shape().plane());
  for (int c = 0; c < grad_in.channels(); ++c)
    grad_in.channel(c) += grad_out[c] / S(plane);
}

template <typename S>
void linear(const TensorT<S>& in, const LayerSpec& fc, TensorT<S>& out) {
  for (int o = 0; o < fc.out_channels; ++o) {
    const float* w = fc.weight.data() + static_cast<std::ptrdiff_t>(o) * fc.in_channels;
    S sum = S(0);
    for (int i = 0; i < fc.in_channels; ++i) sum += S(w[i]) * in[i];
    out[o] = sum + S(fc.bias[o]);
  }
}

template <typename S>
void linear_backward(const TensorT<S>& grad_out, const LayerSpec& fc, TensorT<S>& grad_in) {
  for (int o = 0; o < fc.out_channels; ++o) {
    const float* w = fc.weight.data() + static_cast<std::ptrdiff_t>(o) * fc.in_channels;
    for (int i = 0; i < fc.in_channels; ++i) grad_in[i] += S(w[i]) * grad_out[o];
  }
}

template <typename S>
S batchnorm_scale(const LayerSpec& bn, int c) {
  return S(bn.gamma[c]) / std::sqrt(S(bn.var[c]) + S(bn.eps));
}

template <typename S>
void batchnorm(const TensorT<S>& in, const LayerSpec& bn, TensorT<S>& out) {
  for (int c = 0; c < in.channels(); ++c)
    out.channel(c) = (in.channel(c) - S(bn.mean[c])) * batchnorm_scale<S>(bn, c) + S(bn.beta[c]);
}

template <typename S>
void batchnorm_backward(const TensorT<S>& grad_out, const LayerSpec& bn, TensorT<S>& grad_in) {
  for (int c = 0; c < grad_out.channels(); ++c)
    grad_in.channel(c) += grad_out.channel(c) * batchnorm_scale<S>(bn, c);
}

/// Forward of any layer. `skip` is the residual operand (ignored otherwise).
template <typename S>
TensorT<S> layer_forward(const LayerSpec& s, const Shape3& out_shape, const TensorT<S>& in,
                         const TensorT<S>* skip) {
  TensorT<S> out(out_shape);
  switch (s.kind) {
    case LayerKind::Conv2d: conv2d(in, s, out); break;
    case LayerKind::Relu: relu(in, out); break;
    case LayerKind::MaxPool: maxpool(in, s, out); break;
    case LayerKind::AvgPool: avgpool(in, s, out); break;
    case LayerKind::GlobalAvgPool: global_avgpool(in, out); break;
    case LayerKind::Linear: linear(in, s, out); break;
    case LayerKind::BatchNorm: batchnorm(in, s, out); break;
    case LayerKind::ResidualAdd: out.array() = in.array() + skip->array(); break;
    case LayerKind::Flatten: out.array() = in.array(); break;
  }
  return out;
}

/// Accumulates d(loss)/d(input) into `grad_in` (and `grad_skip` for residual
/// adds) given d(loss)/d(output). `in` is the clean primary input.
template <typename S>
void layer_backward(const LayerSpec& s, const TensorT<S>& in, const TensorT<S>& grad_out,
                    TensorT<S>& grad_in, TensorT<S>* grad_skip) {
  switch (s.kind) {
    case LayerKind::Conv2d: conv2d_backward(grad_out, s, grad_in); break;
    case LayerKind::Relu: relu_backward(in, grad_out, grad_in); break;
    case LayerKind::MaxPool: {
      TensorT<S> scratch(grad_out.shape());
      Eigen::ArrayXi argmax;
      maxpool(in, s, scratch, &argmax);
      maxpool_backward(argmax, grad_out, grad_in);
      break;
    }
    case LayerKind::AvgPool: avgpool_backward(s, grad_out, grad_in); break;
    case LayerKind::GlobalAvgPool: global_avgpool_backward(grad_out, grad_in); break;
    case LayerKind::Linear: linear_backward(grad_out, s, grad_in); break;
    case LayerKind::BatchNorm: batchnorm_backward(grad_out, s, grad_in); break;
    case LayerKind::ResidualAdd:
      grad_in.array() += grad_out.array();
      if (grad_skip) grad_skip->array() += grad_out.array();
      break;
    case LayerKind::Flatten: grad_in.array() += grad_out.array(); break;
  }
}

}  // namespace vfa::kernels
