// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <compare>
#include <span>
#include <vector>

#include "vfa/kernels.hpp"
#include "vfa/network.hpp"
#include "vfa/tensor.hpp"

namespace vfa {

/// Raw logits, one row per image. No softmax is applied anywhere.
using Logits = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Where an additive error lands: one element of a layer output, or (y < 0)
/// every element of one output channel.
struct InjectionSite {
  int layer = 0;
  int channel = 0;
  int y = -1;
  int x = -1;

  static InjectionSite neuron(int layer, int channel, int y, int x) {
    return {layer, channel, y, x};
  }
  static InjectionSite whole_channel(int layer, int channel) { return {layer, channel, -1, -1}; }
  bool is_channel() const { return y < 0; }
  auto operator<=>(const InjectionSite&) const = default;
};

/// Additive error at a site. A delta of +/-infinity is a saturation sentinel,
/// realised as +/-2^rho_max times the largest clean magnitude in that layer output.
struct InjectionSpec {
  InjectionSite site;
  float delta = 0.0f;
};

/// Every layer output of one clean forward pass, kept so later passes can
/// restart from any layer.
template <typename S>
struct TraceT {
  TensorT<S> input;
  std::vector<TensorT<S>> outputs;

  const TensorT<S>& logits() const { return outputs.back(); }
};
using Trace = TraceT<float>;

/// Throws ConfigError unless `site` addresses an element or channel of a layer output.
void check_site(const Network& net, const InjectionSite& site);
void check_image(const Network& net, const Shape3& shape);

template <typename S>
const TensorT<S>& layer_input(const TraceT<S>& trace, int layer) {
  return layer == 0 ? trace.input : trace.outputs[static_cast<std::size_t>(layer - 1)];
}

template <typename S>
const TensorT<S>* skip_input(const Network& net, const TraceT<S>& trace, int layer) {
  const LayerSpec& s = net.layer(layer);
  if (s.kind != LayerKind::ResidualAdd) return nullptr;
  return s.skip_from == kNetworkInput ? &trace.input
                                      : &trace.outputs[static_cast<std::size_t>(s.skip_from)];
}

/// Clean forward pass. With `stop >= 0` only layers 0..stop are evaluated.
template <typename S>
TraceT<S> trace(const Network& net, const TensorT<S>& image, int stop = -1) {
  check_image(net, image.shape());
  TraceT<S> t;
  t.input = image;
  const int last = stop < 0 ? net.layer_count() - 1 : stop;
  t.outputs.reserve(static_cast<std::size_t>(last + 1));
  for (int i = 0; i <= last; ++i)
    t.outputs.push_back(kernels::layer_forward(net.layer(i), net.output_shape(i),
                                               layer_input(t, i), skip_input(net, t, i)));
  return t;
}

/// Logits obtained when layer `layer` outputs `replaced` instead of its traced
/// value; layers before it are read from the trace, later ones recomputed.
template <typename S>
TensorT<S> forward_from(const Network& net, const TraceT<S>& clean, int layer,
                        const TensorT<S>& replaced) {
  const int n = net.layer_count();
  if (layer == n - 1) return replaced;
  std::vector<TensorT<S>> fresh(static_cast<std::size_t>(n - layer - 1));
  auto output = [&](int i) -> const TensorT<S>& {
    if (i < 0) return clean.input;
    if (i < layer) return clean.outputs[static_cast<std::size_t>(i)];
    if (i == layer) return replaced;
    return fresh[static_cast<std::size_t>(i - layer - 1)];
  };
  for (int i = layer + 1; i < n; ++i) {
    const LayerSpec& s = net.layer(i);
    const TensorT<S>* skip = s.kind == LayerKind::ResidualAdd ? &output(s.skip_from) : nullptr;
    fresh[static_cast<std::size_t>(i - layer - 1)] =
        kernels::layer_forward(s, net.output_shape(i), output(i - 1), skip);
  }
  return std::move(fresh.back());
}

/// Adds an injection to a clean layer output in place (pre-activation when the
/// layer is a conv). Zero deltas leave the tensor untouched.
void apply_injection(Tensor& output, const InjectionSite& site, float delta, int rho_max = 10);

/// Batch forward; logits shape [batch, classes].
Logits forward(const Network& net, std::span<const Tensor> batch);

/// Batch forward with one additive injection applied to every image.
Logits forward_injected(const Network& net, std::span<const Tensor> batch,
                        const InjectionSpec& inj, int rho_max = 10);

/// Argmax with ties broken toward the lowest index.
int argmax(const float* logits, int n);
std::vector<int> golden_classify(const Network& net, std::span<const Tensor> batch);
std::vector<int> golden_classify(const Logits& logits);

/// True when the output departs from `golden`; any NaN logit counts as a departure.
bool is_misclassified(const Tensor& logits, int golden);

/// d(loss)/d(output of `layer`) for loss = sum_{j != golden} (E_j - E_golden),
/// evaluated at the traced (clean) state. ReLU subgradient at 0 is 0.
template <typename S>
TensorT<S> output_gradient(const Network& net, const TraceT<S>& clean, int golden, int layer) {
  const int n = net.layer_count();
  std::vector<TensorT<S>> grads;
  grads.reserve(static_cast<std::size_t>(n - layer));
  for (int i = layer; i < n; ++i) grads.emplace_back(net.output_shape(i));
  auto grad = [&](int i) -> TensorT<S>* {
    return i >= layer ? &grads[static_cast<std::size_t>(i - layer)] : nullptr;
  };

  TensorT<S>& top = *grad(n - 1);
  top.array().setConstant(S(1));
  top[golden] = -S(net.classes() - 1);

  for (int i = n - 1; i > layer; --i) {
    const LayerSpec& s = net.layer(i);
    TensorT<S>* skip = s.kind == LayerKind::ResidualAdd ? grad(s.skip_from) : nullptr;
    kernels::layer_backward(s, layer_input(clean, i), *grad(i), *grad(i - 1), skip);
  }
  return std::move(grads.front());
}

/// Gradient of the misclassification loss at an injection site: a 1x1x1
/// tensor for an element site, 1xHxW for a whole channel.
template <typename S>
TensorT<S> grad_wrt_activation(const Network& net, const TraceT<S>& clean, int golden,
                               const InjectionSite& site) {
  check_site(net, site);
  const TensorT<S> g = output_gradient(net, clean, golden, site.layer);
  if (!site.is_channel()) {
    TensorT<S> out(1, 1, 1);
    out[0] = g(site.channel, site.y, site.x);
    return out;
  }
  TensorT<S> out(1, g.height(), g.width());
  out.array() = g.channel(site.channel);
  return out;
}

/// Gradient-zero test: max-abs over the gradient tensor at most `tol`.
template <typename S>
bool gradient_is_zero(const TensorT<S>& g, double tol) {
  return g.size() == 0 || static_cast<double>(g.array().abs().maxCoeff()) <= tol;
}

}  // namespace vfa

namespace vfa {

template <typename S>
TensorT<S> grad_wrt_activation(const Network& net, const TensorT<S>& image, int golden,
                               const InjectionSite& site) {
  return grad_wrt_activation(net, trace(net, image), golden, site);
}

}  // namespace vfa

namespace vfa {

/// Clean traces and golden classes of a batch, computed once and shared by
/// every analysis and injection campaign on that batch.
class GoldenRun {
 public:
  GoldenRun(const Network& net, std::vector<Tensor> images);

  const Network& net() const { return *net_; }
  std::size_t size() const { return images_.size(); }
  const std::vector<Tensor>& images() const { return images_; }
  const Tensor& image(std::size_t i) const { return images_[i]; }
  const Trace& trace(std::size_t i) const { return traces_[i]; }
  int golden(std::size_t i) const { return golden_[i]; }
  const std::vector<int>& goldens() const { return golden_; }

 private:
  const Network* net_;
  std::vector<Tensor> images_;
  std::vector<Trace> traces_;
  std::vector<int> golden_;
};

/// One injected inference restarted from a clean trace: `delta` is added at
/// `site` and the result is compared with `golden`.
bool injection_misclassifies(const Network& net, const Trace& clean, int golden,
                             const InjectionSite& site, float delta, int rho_max = 10);

/// Same, with layer `layer` producing `replaced` in place of its clean output.
bool replacement_misclassifies(const Network& net, const Trace& clean, int golden, int layer,
                               const Tensor& replaced);

}  // namespace vfa
