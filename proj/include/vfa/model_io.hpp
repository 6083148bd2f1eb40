// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vfa/network.hpp"
#include "vfa/tensor.hpp"

namespace vfa {

/// Model file (.vglm), little-endian:
///   "VGLM", u32 version (1), u32 layer count, u32 C, u32 H, u32 W
///   per layer: u32 kind tag, hyperparameters, parameter blobs
///     conv2d      u32 in, out, kernel, stride, padding, groups; blobs weight, bias
///     linear      u32 in, out; blobs weight, bias
///     batchnorm   u32 channels, f32 eps; blobs gamma, beta, mean, var
///     max/avgpool u32 kernel, stride, padding
///     others      nothing
///   blob: u32 rank, u32 dims[rank], f32 data[prod(dims)]
///   u32 skip-edge count, then (i32 from, u32 to) per residual-add
///   u32 class count
inline constexpr std::uint32_t kModelVersion = 1;

/// Batch file (.vglb): "VGLB", u32 count, u32 C, H, W, f32 pixels, u16 labels.
struct Batch {
  Shape3 shape;
  std::vector<Tensor> images;
  std::vector<std::uint16_t> labels;
};

/// Both loaders throw LoadError naming the file and the offending field.
Network load_model(const std::filesystem::path& path);
Network parse_model(std::string_view bytes, const std::string& origin = "model");
std::string serialize_model(const Network& net);
void save_model(const Network& net, const std::filesystem::path& path);

/// With classes >= 0, labels must be below it.
Batch load_batch(const std::filesystem::path& path, int classes = -1);
Batch parse_batch(std::string_view bytes, int classes = -1, const std::string& origin = "batch");
std::string serialize_batch(const Batch& batch);
void save_batch(const Batch& batch, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file. Throws std::runtime_error on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace vfa
