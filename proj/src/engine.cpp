// SPDX-License-Identifier: Apache-2.0
#include "vfa/engine.hpp"

#include <cmath>
#include <string>

#include "vfa/error.hpp"

namespace vfa {

void check_site(const Network& net, const InjectionSite& site) {
  if (site.layer < 0 || site.layer >= net.layer_count())
    throw ConfigError("injection layer " + std::to_string(site.layer) + " out of range");
  const Shape3& s = net.output_shape(site.layer);
  if (site.channel < 0 || site.channel >= s.channels)
    throw ConfigError("injection channel " + std::to_string(site.channel) +
                      " out of range for layer output " + s.str());
  if (site.is_channel()) return;
  if (site.y >= s.height || site.x < 0 || site.x >= s.width)
    throw ConfigError("injection position (" + std::to_string(site.y) + ", " +
                      std::to_string(site.x) + ") out of range for " + s.str());
}

void check_image(const Network& net, const Shape3& shape) {
  if (!(shape == net.input_shape()))
    throw ConfigError("input shape " + shape.str() + " does not match network input " +
                      net.input_shape().str());
}

void apply_injection(Tensor& output, const InjectionSite& site, float delta, int rho_max) {
  if (delta == 0.0f) return;
  if (std::isinf(delta)) {
    const float peak = std::max(output.array().abs().maxCoeff(), 1.0f);
    delta = std::copysign(std::ldexp(peak, rho_max), delta);
  }
  if (site.is_channel())
    output.channel(site.channel) += delta;
  else
    output(site.channel, site.y, site.x) += delta;
}

Logits forward(const Network& net, std::span<const Tensor> batch) {
  Logits out(static_cast<Eigen::Index>(batch.size()), net.classes());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trace t = trace(net, batch[i]);
    out.row(static_cast<Eigen::Index>(i)) = t.logits().array().transpose();
  }
  return out;
}

Logits forward_injected(const Network& net, std::span<const Tensor> batch,
                        const InjectionSpec& inj, int rho_max) {
  check_site(net, inj.site);
  Logits out(static_cast<Eigen::Index>(batch.size()), net.classes());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trace t = trace(net, batch[i], inj.site.layer);
    Tensor injected = t.outputs.back();
    apply_injection(injected, inj.site, inj.delta, rho_max);
    const Tensor logits = forward_from(net, t, inj.site.layer, injected);
    out.row(static_cast<Eigen::Index>(i)) = logits.array().transpose();
  }
  return out;
}

int argmax(const float* logits, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (logits[j] > logits[best]) best = j;
  return best;
}

std::vector<int> golden_classify(const Logits& logits) {
  std::vector<int> classes(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    classes[static_cast<std::size_t>(i)] =
        argmax(logits.row(i).data(), static_cast<int>(logits.cols()));
  return classes;
}

std::vector<int> golden_classify(const Network& net, std::span<const Tensor> batch) {
  return golden_classify(forward(net, batch));
}

bool is_misclassified(const Tensor& logits, int golden) {
  if (logits.array().isNaN().any()) return true;
  return argmax(logits.data(), static_cast<int>(logits.size())) != golden;
}

}  // namespace vfa

namespace vfa {

GoldenRun::GoldenRun(const Network& net, std::vector<Tensor> images)
    : net_(&net), images_(std::move(images)) {
  traces_.reserve(images_.size());
  golden_.reserve(images_.size());
  for (const Tensor& img : images_) {
    traces_.push_back(vfa::trace(net, img));
    const Tensor& logits = traces_.back().logits();
    golden_.push_back(argmax(logits.data(), static_cast<int>(logits.size())));
  }
}

bool injection_misclassifies(const Network& net, const Trace& clean, int golden,
                             const InjectionSite& site, float delta, int rho_max) {
  Tensor out = clean.outputs[static_cast<std::size_t>(site.layer)];
  apply_injection(out, site, delta, rho_max);
  return replacement_misclassifies(net, clean, golden, site.layer, out);
}

bool replacement_misclassifies(const Network& net, const Trace& clean, int golden, int layer,
                               const Tensor& replaced) {
  return is_misclassified(forward_from(net, clean, layer, replaced), golden);
}

}  // namespace vfa
