// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include "support/oracles.hpp"
#include "vfa/error.hpp"
#include "vfa/model_io.hpp"

using namespace vfa;

namespace {

/// Hand-rolled little-endian encoder, independent of the library writer.
struct Bytes {
  std::string s;
  Bytes& tag(const char* m) {
    s.append(m, 4);
    return *this;
  }
  Bytes& u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    return *this;
  }
  Bytes& f32(float f) { return u32(oracle::bits_of(f)); }
  Bytes& u16(std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xFF));
    s.push_back(static_cast<char>(v >> 8));
    return *this;
  }
};

/// Input 1x1x1, one conv to 2 channels with kernel 1, two classes.
Bytes minimal_model() {
  Bytes b;
  b.tag("VGLM").u32(1).u32(1).u32(1).u32(1).u32(1);
  b.u32(1).u32(1).u32(2).u32(1).u32(1).u32(0).u32(1);  // conv: in, out, k, stride, pad, groups
  b.u32(4).u32(2).u32(1).u32(1).u32(1).f32(0.5f).f32(-2.0f);
  b.u32(1).u32(2).f32(0.25f).f32(0.0f);
  b.u32(0).u32(2);
  return b;
}

std::string message_of(const std::string& bytes, bool model) {
  try {
    if (model)
      (void)parse_model(bytes, "m.vglm");
    else
      (void)parse_batch(bytes, 10, "b.vglb");
  } catch (const LoadError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("minimal one-layer model") {
  const Network net = parse_model(minimal_model().s);
  REQUIRE(net.layer_count() == 1);
  CHECK(net.layer(0).kind == LayerKind::Conv2d);
  CHECK(net.classes() == 2);
  CHECK(net.layer(0).weight[1] == -2.0f);
  CHECK(net.layer(0).bias[0] == 0.25f);
  CHECK(serialize_model(net) == minimal_model().s);
}

TEST_CASE("malformed models name the offending field") {
  const std::string good = minimal_model().s;
  // Cut inside the weight blob.
  CHECK(message_of(good.substr(0, 76), true).find("weight data") != std::string::npos);
  CHECK(message_of(good + "x", true).find("trailer") != std::string::npos);
  std::string bad = good;
  bad[0] = 'X';
  CHECK(message_of(bad, true).find("magic") != std::string::npos);
  bad = good;
  bad[4] = 2;
  CHECK(message_of(bad, true).find("version") != std::string::npos);
  bad = good;
  bad[24] = 42;  // first layer kind
  CHECK(message_of(bad, true).find("layer 0 kind") != std::string::npos);
  bad = good;
  bad[56] = 3;  // weight dim 0 should be 2
  CHECK(message_of(bad, true).find("weight") != std::string::npos);
  bad = good;
  bad[bad.size() - 4] = 3;  // class count disagrees with the output size
  CHECK(!message_of(bad, true).empty());
  CHECK(message_of("", true).find("magic") != std::string::npos);
}

TEST_CASE("models round-trip bitwise") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5; ++i) {
    const Network net = oracle::random_net(rng);
    const std::string bytes = serialize_model(net);
    const Network back = parse_model(bytes);
    REQUIRE(back.layer_count() == net.layer_count());
    for (int l = 0; l < net.layer_count(); ++l) {
      const LayerSpec &a = net.layer(l), &b = back.layer(l);
      CHECK(a.kind == b.kind);
      CHECK(a.skip_from == b.skip_from);
      REQUIRE(a.weight.size() == b.weight.size());
      CHECK(std::memcmp(a.weight.data(), b.weight.data(), sizeof(float) * a.weight.size()) == 0);
      CHECK(std::memcmp(a.bias.data(), b.bias.data(), sizeof(float) * a.bias.size()) == 0);
      CHECK(std::memcmp(a.gamma.data(), b.gamma.data(), sizeof(float) * a.gamma.size()) == 0);
      CHECK(std::memcmp(a.var.data(), b.var.data(), sizeof(float) * a.var.size()) == 0);
    }
    CHECK(serialize_model(back) == bytes);
  }
}

TEST_CASE("one-image batch") {
  Bytes b;
  b.tag("VGLB").u32(1).u32(2).u32(1).u32(2).f32(1.0f).f32(-0.0f).f32(3.5f).f32(1e-40f).u16(7);
  const Batch batch = parse_batch(b.s, 10);
  REQUIRE(batch.images.size() == 1);
  CHECK(batch.shape == Shape3{2, 1, 2});
  CHECK(batch.images[0].shape() == Shape3{2, 1, 2});
  CHECK(batch.labels[0] == 7);
  CHECK(oracle::bits_of(batch.images[0][1]) == 0x80000000u);
  CHECK(serialize_batch(batch) == b.s);
}

TEST_CASE("malformed batches name the offending field") {
  Bytes b;
  b.tag("VGLB").u32(1).u32(1).u32(1).u32(1).f32(0.5f).u16(12);
  CHECK(message_of(b.s, false).find("label 0") != std::string::npos);
  CHECK_NOTHROW(parse_batch(b.s, 13));
  Bytes nan;
  nan.tag("VGLB").u32(1).u32(1).u32(1).u32(1).f32(std::nanf("")).u16(1);
  CHECK(message_of(nan.s, false).find("pixels of image 0") != std::string::npos);
  CHECK(message_of(b.s.substr(0, 25), false).find("label 0") != std::string::npos);
  CHECK(message_of(b.s.substr(0, 22), false).find("pixels") != std::string::npos);
}

TEST_CASE("batches and files round-trip") {
  std::mt19937_64 rng(9);
  Batch b;
  b.shape = Shape3{3, 4, 5};
  for (int i = 0; i < 6; ++i) {
    b.images.push_back(oracle::random_tensor(b.shape, rng, -3.0f, 3.0f));
    b.labels.push_back(static_cast<std::uint16_t>(i % 4));
  }
  const auto dir = std::filesystem::temp_directory_path() / "vfa_model_io_test";
  std::filesystem::create_directories(dir);
  save_batch(b, dir / "b.vglb");
  const Batch back = load_batch(dir / "b.vglb", 4);
  REQUIRE(back.images.size() == b.images.size());
  for (std::size_t i = 0; i < b.images.size(); ++i)
    CHECK(std::memcmp(back.images[i].data(), b.images[i].data(), sizeof(float) * 60) == 0);
  CHECK(back.labels == b.labels);
  CHECK_THROWS_AS(load_batch(dir / "b.vglb", 3), LoadError);

  const Network net = oracle::random_two_conv_net(rng);
  save_model(net, dir / "m.vglm");
  CHECK(serialize_model(load_model(dir / "m.vglm")) == serialize_model(net));
  for (const auto& e : std::filesystem::directory_iterator(dir))
    CHECK(e.path().filename().string().find(".tmp") == std::string::npos);
  CHECK_THROWS_AS(load_model(dir / "missing.vglm"), LoadError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("committed desk artifacts load") {
  const Network net = load_model(VFA_DATA_DIR "/desk.vglm");
  CHECK(net.input_shape() == Shape3{3, 16, 16});
  CHECK(net.classes() == 10);
  CHECK(net.conv_layers() == std::vector<int>{0, 4, 8});
  const Batch b = load_batch(VFA_DATA_DIR "/desk.vglb", net.classes());
  CHECK(b.images.size() == 100);
  CHECK(b.shape == net.input_shape());
}
