// SPDX-License-Identifier: Apache-2.0
#include "vfa/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include "vfa/error.hpp"

namespace vfa {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error(tmp.string() + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error(path.string() + ": " + ec.message());
  }
}

namespace {

class Reader {
 public:
  Reader(std::string_view bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw LoadError(origin_ + ": " + field + ": " + what);
  }

  void take(void* dst, std::size_t n, const std::string& field) {
    if (bytes_.size() - pos_ < n)
      fail(field, "unexpected end of file at byte " + std::to_string(pos_));
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const std::string& field) {
    std::uint32_t v;
    take(&v, sizeof v, field);
    return v;
  }
  std::int32_t i32(const std::string& field) {
    std::int32_t v;
    take(&v, sizeof v, field);
    return v;
  }
  std::uint16_t u16(const std::string& field) {
    std::uint16_t v;
    take(&v, sizeof v, field);
    return v;
  }
  float f32(const std::string& field) {
    float v;
    take(&v, sizeof v, field);
    return v;
  }
  /// A u32 that must fit a positive int (or non-negative with allow_zero).
  int dim(const std::string& field, bool allow_zero = false) {
    const std::uint32_t v = u32(field);
    if (v > (1u << 24) || (!allow_zero && v == 0))
      fail(field, "implausible value " + std::to_string(v));
    return static_cast<int>(v);
  }
  void magic(std::string_view expected) {
    char m[4];
    take(m, 4, "magic");
    if (std::string_view(m, 4) != expected)
      fail("magic", "expected \"" + std::string(expected) + "\"");
  }
  Eigen::ArrayXf blob(const std::string& field, const std::vector<int>& expected) {
    const std::uint32_t rank = u32(field + " rank");
    if (rank != expected.size())
      fail(field, "expected rank " + std::to_string(expected.size()) + ", got " +
                      std::to_string(rank));
    std::size_t count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::uint32_t v = u32(field + " dim " + std::to_string(d));
      if (v != static_cast<std::uint32_t>(expected[d]))
        fail(field, "dim " + std::to_string(d) + " is " + std::to_string(v) + ", expected " +
                        std::to_string(expected[d]));
      count *= v;
    }
    Eigen::ArrayXf out(static_cast<Eigen::Index>(count));
    take(out.data(), count * sizeof(float), field + " data");
    return out;
  }
  void finish() const {
    if (pos_ != bytes_.size())
      fail("trailer", std::to_string(bytes_.size() - pos_) + " unexpected trailing bytes");
  }

 private:
  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void blob(const Eigen::ArrayXf& data, const std::vector<int>& dims) {
    u32(static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) u32(static_cast<std::uint32_t>(d));
    raw(data.data(), static_cast<std::size_t>(data.size()) * sizeof(float));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

bool known_kind(std::uint32_t tag) { return tag >= 1 && tag <= 9; }

}  // namespace

Network parse_model(std::string_view bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.magic("VGLM");
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion)
    r.fail("version", "unsupported version " + std::to_string(version));
  const int count = r.dim("layer count");
  Shape3 input;
  input.channels = r.dim("input channels");
  input.height = r.dim("input height");
  input.width = r.dim("input width");

  std::vector<LayerSpec> layers;
  layers.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::string at = "layer " + std::to_string(i);
    const std::uint32_t tag = r.u32(at + " kind");
    if (!known_kind(tag)) r.fail(at + " kind", "unknown kind tag " + std::to_string(tag));
    LayerSpec s;
    s.kind = static_cast<LayerKind>(tag);
    const std::string name = at + " (" + std::string(to_string(s.kind)) + ")";
    switch (s.kind) {
      case LayerKind::Conv2d: {
        s.in_channels = r.dim(name + " in_channels");
        s.out_channels = r.dim(name + " out_channels");
        s.kernel = r.dim(name + " kernel");
        s.stride = r.dim(name + " stride");
        s.padding = r.dim(name + " padding", true);
        s.groups = r.dim(name + " groups");
        if (s.in_channels % s.groups != 0 || s.out_channels % s.groups != 0)
          r.fail(name + " groups", "does not divide the channel counts");
        s.weight = r.blob(name + " weight",
                          {s.out_channels, s.in_channels / s.groups, s.kernel, s.kernel});
        s.bias = r.blob(name + " bias", {s.out_channels});
        break;
      }
      case LayerKind::Linear:
        s.in_channels = r.dim(name + " in_features");
        s.out_channels = r.dim(name + " out_features");
        s.weight = r.blob(name + " weight", {s.out_channels, s.in_channels});
        s.bias = r.blob(name + " bias", {s.out_channels});
        break;
      case LayerKind::BatchNorm:
        s.in_channels = s.out_channels = r.dim(name + " channels");
        s.eps = r.f32(name + " eps");
        s.gamma = r.blob(name + " gamma", {s.in_channels});
        s.beta = r.blob(name + " beta", {s.in_channels});
        s.mean = r.blob(name + " mean", {s.in_channels});
        s.var = r.blob(name + " var", {s.in_channels});
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        s.kernel = r.dim(name + " kernel");
        s.stride = r.dim(name + " stride");
        s.padding = r.dim(name + " padding", true);
        break;
      default: break;
    }
    layers.push_back(std::move(s));
  }

  const std::uint32_t edges = r.u32("skip-edge count");
  if (edges > static_cast<std::uint32_t>(count)) r.fail("skip-edge count", "exceeds layer count");
  std::vector<bool> wired(static_cast<std::size_t>(count), false);
  for (std::uint32_t e = 0; e < edges; ++e) {
    const std::string at = "skip edge " + std::to_string(e);
    const std::int32_t from = r.i32(at + " from");
    const std::uint32_t to = r.u32(at + " to");
    if (to >= static_cast<std::uint32_t>(count) ||
        layers[to].kind != LayerKind::ResidualAdd)
      r.fail(at + " to", "layer " + std::to_string(to) + " is not a residual-add");
    if (wired[to]) r.fail(at + " to", "layer " + std::to_string(to) + " wired twice");
    if (from < kNetworkInput || from >= static_cast<std::int32_t>(to))
      r.fail(at + " from", "source " + std::to_string(from) + " does not precede layer " +
                               std::to_string(to));
    wired[to] = true;
    layers[to].skip_from = from;
  }
  for (int i = 0; i < count; ++i)
    if (layers[static_cast<std::size_t>(i)].kind == LayerKind::ResidualAdd && !wired[static_cast<std::size_t>(i)])
      r.fail("skip edges", "residual-add layer " + std::to_string(i) + " has no skip edge");
  const int classes = r.dim("class count");
  r.finish();
  try {
    return Network(input, std::move(layers), classes);
  } catch (const ConfigError& e) {
    throw LoadError(origin + ": " + e.what());
  }
}

Network load_model(const std::filesystem::path& path) {
  return parse_model(read_file(path), path.string());
}

std::string serialize_model(const Network& net) {
  Writer w;
  w.raw("VGLM", 4);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(net.layer_count()));
  const Shape3& in = net.input_shape();
  w.u32(static_cast<std::uint32_t>(in.channels));
  w.u32(static_cast<std::uint32_t>(in.height));
  w.u32(static_cast<std::uint32_t>(in.width));
  std::uint32_t edges = 0;
  for (const LayerSpec& s : net.layers()) {
    w.u32(static_cast<std::uint32_t>(s.kind));
    switch (s.kind) {
      case LayerKind::Conv2d:
        for (int v : {s.in_channels, s.out_channels, s.kernel, s.stride, s.padding, s.groups})
          w.u32(static_cast<std::uint32_t>(v));
        w.blob(s.weight, {s.out_channels, s.in_channels / s.groups, s.kernel, s.kernel});
        w.blob(s.bias, {s.out_channels});
        break;
      case LayerKind::Linear:
        w.u32(static_cast<std::uint32_t>(s.in_channels));
        w.u32(static_cast<std::uint32_t>(s.out_channels));
        w.blob(s.weight, {s.out_channels, s.in_channels});
        w.blob(s.bias, {s.out_channels});
        break;
      case LayerKind::BatchNorm:
        w.u32(static_cast<std::uint32_t>(s.in_channels));
        w.f32(s.eps);
        w.blob(s.gamma, {s.in_channels});
        w.blob(s.beta, {s.in_channels});
        w.blob(s.mean, {s.in_channels});
        w.blob(s.var, {s.in_channels});
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        for (int v : {s.kernel, s.stride, s.padding}) w.u32(static_cast<std::uint32_t>(v));
        break;
      case LayerKind::ResidualAdd: ++edges; break;
      default: break;
    }
  }
  w.u32(edges);
  for (int i = 0; i < net.layer_count(); ++i)
    if (net.layer(i).kind == LayerKind::ResidualAdd) {
      w.i32(net.layer(i).skip_from);
      w.u32(static_cast<std::uint32_t>(i));
    }
  w.u32(static_cast<std::uint32_t>(net.classes()));
  return w.take();
}

void save_model(const Network& net, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(net));
}

Batch parse_batch(std::string_view bytes, int classes, const std::string& origin) {
  Reader r(bytes, origin);
  r.magic("VGLB");
  Batch b;
  const int count = r.dim("image count", true);
  b.shape.channels = r.dim("channels");
  b.shape.height = r.dim("height");
  b.shape.width = r.dim("width");
  b.images.reserve(static_cast<std::size_t>(count));
  const auto n = static_cast<Eigen::Index>(b.shape.size());
  for (int i = 0; i < count; ++i) {
    Tensor t(b.shape);
    r.take(t.data(), static_cast<std::size_t>(n) * sizeof(float),
           "pixels of image " + std::to_string(i));
    if (!t.array().isFinite().all())
      r.fail("pixels of image " + std::to_string(i), "non-finite value");
    b.images.push_back(std::move(t));
  }
  b.labels.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::uint16_t label = r.u16("label " + std::to_string(i));
    if (classes >= 0 && label >= classes)
      r.fail("label " + std::to_string(i),
             "class " + std::to_string(label) + " >= class count " + std::to_string(classes));
    b.labels.push_back(label);
  }
  r.finish();
  return b;
}

Batch load_batch(const std::filesystem::path& path, int classes) {
  return parse_batch(read_file(path), classes, path.string());
}

std::string serialize_batch(const Batch& batch) {
  if (batch.images.size() != batch.labels.size())
    throw ConfigError("batch has " + std::to_string(batch.images.size()) + " images but " +
                      std::to_string(batch.labels.size()) + " labels");
  Writer w;
  w.raw("VGLB", 4);
  w.u32(static_cast<std::uint32_t>(batch.images.size()));
  w.u32(static_cast<std::uint32_t>(batch.shape.channels));
  w.u32(static_cast<std::uint32_t>(batch.shape.height));
  w.u32(static_cast<std::uint32_t>(batch.shape.width));
  for (const Tensor& t : batch.images) {
    if (!(t.shape() == batch.shape))
      throw ConfigError("image shape " + t.shape().str() + " differs from batch shape " +
                        batch.shape.str());
    w.raw(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  for (std::uint16_t l : batch.labels) w.u16(l);
  return w.take();
}

void save_batch(const Batch& batch, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_batch(batch));
}

}  // namespace vfa
