// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <string>

#include "vfa/error.hpp"

namespace vfa {

/// Extent of a single feature map: channels x rows x cols.
struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool operator==(const Shape3&) const = default;
  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" +
           std::to_string(width);
  }
};

/// Dense C x H x W feature map stored row-major (channel, row, col).
///
/// Vectors (linear-layer outputs, logits) use the degenerate F x 1 x 1 form so
/// every layer output shares one type.
template <typename Scalar>
class TensorT {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  TensorT() = default;
  explicit TensorT(Shape3 shape)
      : shape_(shape), data_(Storage::Zero(static_cast<Eigen::Index>(shape.size()))) {}
  TensorT(int channels, int height, int width)
      : TensorT(Shape3{channels, height, width}) {}
  TensorT(Shape3 shape, Storage data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != shape_.size())
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_.str());
  }

  const Shape3& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  Eigen::Index size() const { return data_.size(); }

  Scalar& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  Scalar operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }
  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  Eigen::Index index(int c, int y, int x) const {
    return (static_cast<Eigen::Index>(c) * shape_.height + y) * shape_.width + x;
  }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  auto channel(int c) {
    return data_.segment(static_cast<Eigen::Index>(c) * shape_.plane(),
                         static_cast<Eigen::Index>(shape_.plane()));
  }
  auto channel(int c) const {
    return data_.segment(static_cast<Eigen::Index>(c) * shape_.plane(),
                         static_cast<Eigen::Index>(shape_.plane()));
  }

  template <typename Other>
  TensorT<Other> cast() const {
    return TensorT<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape3 shape_;
  Storage data_;
};

using Tensor = TensorT<float>;

}  // namespace vfa
