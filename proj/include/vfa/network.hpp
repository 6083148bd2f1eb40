// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string_view>
#include <vector>

#include "vfa/tensor.hpp"

namespace vfa {

/// On-disk kind tags; values are part of the model file format.
enum class LayerKind : std::uint32_t {
  Conv2d = 1,
  Relu = 2,
  MaxPool = 3,
  AvgPool = 4,
  GlobalAvgPool = 5,
  Linear = 6,
  BatchNorm = 7,
  ResidualAdd = 8,
  Flatten = 9,
};

std::string_view to_string(LayerKind kind);

/// Index used for "the network input" wherever a layer index is expected.
inline constexpr int kNetworkInput = -1;

/// One layer of the graph. Fields not used by a kind stay at their defaults.
///
/// Parameter layouts (row-major):
///   conv2d     weight [out, in/groups, k, k], bias [out]
///   linear     weight [out, in], bias [out]
///   batchnorm  gamma/beta/mean/var [channels]
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  float eps = 1e-5f;

  Eigen::ArrayXf weight;
  Eigen::ArrayXf bias;
  Eigen::ArrayXf gamma;
  Eigen::ArrayXf beta;
  Eigen::ArrayXf mean;
  Eigen::ArrayXf var;

  // Second operand of a residual-add (a layer index or kNetworkInput).
  int skip_from = kNetworkInput;

  static LayerSpec conv2d(int in, int out, int kernel, int stride, int padding,
                          Eigen::ArrayXf weight, Eigen::ArrayXf bias, int groups = 1);
  static LayerSpec linear(int in, int out, Eigen::ArrayXf weight, Eigen::ArrayXf bias);
  static LayerSpec batchnorm(int channels, Eigen::ArrayXf gamma, Eigen::ArrayXf beta,
                             Eigen::ArrayXf mean, Eigen::ArrayXf var, float eps = 1e-5f);
  static LayerSpec relu();
  static LayerSpec maxpool(int kernel, int stride, int padding = 0);
  static LayerSpec avgpool(int kernel, int stride, int padding = 0);
  static LayerSpec global_avgpool();
  static LayerSpec flatten();
  static LayerSpec residual_add(int skip_from);

  bool is_conv() const { return kind == LayerKind::Conv2d; }
  int group_in_channels() const { return in_channels / groups; }
  /// Weights feeding one output channel of a conv layer.
  int filter_size() const { return group_in_channels() * kernel * kernel; }
  /// First input channel read by output channel `oc` of a conv layer.
  int group_offset(int oc) const {
    return (oc / (out_channels / groups)) * group_in_channels();
  }
};

/// Immutable layer graph. Layer i reads the output of layer i-1 (the network
/// input for i = 0); a residual-add additionally reads `skip_from`.
///
/// The constructor shape-checks the whole graph and throws ConfigError with
/// the offending layer index on any inconsistency.
class Network {
 public:
  Network(Shape3 input, std::vector<LayerSpec> layers, int classes);

  const Shape3& input_shape() const { return input_; }
  int classes() const { return classes_; }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }

  const Shape3& output_shape(int i) const { return shapes_.at(static_cast<std::size_t>(i)); }
  /// Shape read by layer i through its primary input.
  const Shape3& input_shape_of(int i) const {
    return i == 0 ? input_ : output_shape(i - 1);
  }

  /// Indices of conv layers, the units of vulnerability analysis.
  const std::vector<int>& conv_layers() const { return conv_layers_; }

  /// Output activations of layer l (N_l).
  std::size_t output_activations(int l) const { return output_shape(l).size(); }
  /// Weights of layer l (W_l), excluding biases.
  std::size_t weight_count(int l) const {
    return static_cast<std::size_t>(layer(l).weight.size());
  }

 private:
  void validate();

  Shape3 input_;
  std::vector<LayerSpec> layers_;
  int classes_;
  std::vector<Shape3> shapes_;
  std::vector<int> conv_layers_;
};

}  // namespace vfa
