// SPDX-License-Identifier: Apache-2.0
#include "vfa/network.hpp"

#include <string>

#include "vfa/error.hpp"

namespace vfa {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::GlobalAvgPool: return "globalavgpool";
    case LayerKind::Linear: return "linear";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::ResidualAdd: return "residual-add";
    case LayerKind::Flatten: return "flatten";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv2d(int in, int out, int kernel, int stride, int padding,
                            Eigen::ArrayXf weight, Eigen::ArrayXf bias, int groups) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.groups = groups;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  return s;
}

LayerSpec LayerSpec::linear(int in, int out, Eigen::ArrayXf weight, Eigen::ArrayXf bias) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in_channels = in;
  s.out_channels = out;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  return s;
}

LayerSpec LayerSpec::batchnorm(int channels, Eigen::ArrayXf gamma, Eigen::ArrayXf beta,
                               Eigen::ArrayXf mean, Eigen::ArrayXf var, float eps) {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm;
  s.in_channels = channels;
  s.out_channels = channels;
  s.gamma = std::move(gamma);
  s.beta = std::move(beta);
  s.mean = std::move(mean);
  s.var = std::move(var);
  s.eps = eps;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::maxpool(int kernel, int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::avgpool(int kernel, int stride, int padding) {
  LayerSpec s = maxpool(kernel, stride, padding);
  s.kind = LayerKind::AvgPool;
  return s;
}

LayerSpec LayerSpec::global_avgpool() {
  LayerSpec s;
  s.kind = LayerKind::GlobalAvgPool;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::residual_add(int skip_from) {
  LayerSpec s;
  s.kind = LayerKind::ResidualAdd;
  s.skip_from = skip_from;
  return s;
}

Network::Network(Shape3 input, std::vector<LayerSpec> layers, int classes)
    : input_(input), layers_(std::move(layers)), classes_(classes) {
  validate();
}

namespace {

[[noreturn]] void fail(int layer, const LayerSpec& s, const std::string& what) {
  throw ConfigError("layer " + std::to_string(layer) + " (" + std::string(to_string(s.kind)) +
                    "): " + what);
}

void expect_len(int layer, const LayerSpec& s, const char* name, const Eigen::ArrayXf& a,
                std::size_t expected) {
  if (static_cast<std::size_t>(a.size()) != expected)
    fail(layer, s, std::string(name) + " has " + std::to_string(a.size()) +
                       " values, expected " + std::to_string(expected));
}

int pooled_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace

void Network::validate() {
  if (input_.size() == 0) throw ConfigError("network input shape must be non-empty");
  if (classes_ < 1) throw ConfigError("class count must be positive");
  if (layers_.empty()) throw ConfigError("network has no layers");

  shapes_.clear();
  conv_layers_.clear();
  for (int i = 0; i < layer_count(); ++i) {
    const LayerSpec& s = layers_[static_cast<std::size_t>(i)];
    const Shape3 in = input_shape_of(i);
    Shape3 out = in;
    switch (s.kind) {
      case LayerKind::Conv2d: {
        if (s.in_channels != in.channels)
          fail(i, s, "expects " + std::to_string(s.in_channels) + " input channels, got " +
                         in.str());
        if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || s.out_channels < 1)
          fail(i, s, "invalid kernel/stride/padding/channels");
        if (s.groups != 1 && !(s.groups == s.in_channels && s.out_channels % s.groups == 0))
          fail(i, s, "only dense (groups=1) and depthwise (groups=in_channels) conv supported");
        out = {s.out_channels, pooled_extent(in.height, s.kernel, s.stride, s.padding),
               pooled_extent(in.width, s.kernel, s.stride, s.padding)};
        expect_len(i, s, "weight", s.weight,
                   static_cast<std::size_t>(s.out_channels) * s.filter_size());
        expect_len(i, s, "bias", s.bias, static_cast<std::size_t>(s.out_channels));
        conv_layers_.push_back(i);
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || 2 * s.padding > s.kernel)
          fail(i, s, "invalid kernel/stride/padding");
        out = {in.channels, pooled_extent(in.height, s.kernel, s.stride, s.padding),
               pooled_extent(in.width, s.kernel, s.stride, s.padding)};
        break;
      case LayerKind::GlobalAvgPool:
        out = {in.channels, 1, 1};
        break;
      case LayerKind::Flatten:
        out = {static_cast<int>(in.size()), 1, 1};
        break;
      case LayerKind::Linear:
        if (in.height != 1 || in.width != 1 || in.channels != s.in_channels)
          fail(i, s, "expects a flat input of " + std::to_string(s.in_channels) + ", got " +
                         in.str());
        if (s.out_channels < 1) fail(i, s, "output size must be positive");
        expect_len(i, s, "weight", s.weight,
                   static_cast<std::size_t>(s.out_channels) * s.in_channels);
        expect_len(i, s, "bias", s.bias, static_cast<std::size_t>(s.out_channels));
        out = {s.out_channels, 1, 1};
        break;
      case LayerKind::BatchNorm: {
        if (s.in_channels != in.channels) fail(i, s, "channel count mismatch with " + in.str());
        const auto c = static_cast<std::size_t>(in.channels);
        expect_len(i, s, "gamma", s.gamma, c);
        expect_len(i, s, "beta", s.beta, c);
        expect_len(i, s, "mean", s.mean, c);
        expect_len(i, s, "var", s.var, c);
        if (!(s.var > 0.0f).all()) fail(i, s, "variance must be strictly positive");
        if (!(s.eps >= 0.0f)) fail(i, s, "eps must be non-negative");
        break;
      }
      case LayerKind::ResidualAdd: {
        if (s.skip_from < kNetworkInput || s.skip_from >= i - 1)
          fail(i, s, "skip source " + std::to_string(s.skip_from) +
                         " must precede the primary input");
        const Shape3 other = s.skip_from == kNetworkInput ? input_ : output_shape(s.skip_from);
        if (!(other == in)) fail(i, s, "operand shapes differ: " + in.str() + " vs " + other.str());
        break;
      }
      default:
        fail(i, s, "unknown layer kind");
    }
    if (out.size() == 0) fail(i, s, "produces an empty output");
    shapes_.push_back(out);
  }

  const Shape3& last = shapes_.back();
  if (last.channels != classes_ || last.height != 1 || last.width != 1)
    throw ConfigError("network output " + last.str() + " does not match " +
                      std::to_string(classes_) + " classes");
  for (int l : conv_layers_)
    if (output_activations(l) == 0 || weight_count(l) == 0)
      throw ConfigError("conv layer " + std::to_string(l) + " has no activations or weights");
}

}  // namespace vfa
