#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "psim/checkpoint.hpp"
#include "psim/error.hpp"
#include "psim/vit.hpp"

using namespace psim;

namespace {

std::size_t census(const ViTConfig& c) {
  const std::size_t d = c.embed_dim, m = c.mlp_dim(), p = c.patch_dim(), t = c.tokens();
  const std::size_t block = 2 * d + 4 * (d * d + d) + 2 * d + (m * d + m) + (d * m + d);
  return (d * p + d) + t * d + d + c.depth * block + 2 * d;
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("config validation") {
  ViTConfig c;
  CHECK_NOTHROW(c.validate());
  c.patch_size = 7;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ViTConfig{};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("parameter census for the default toy config") {
  const ViTConfig c;
  CHECK(census(c) == 216640);
  CHECK(vit_parameter_count(c) == 216640);
  CHECK(init_weights(c, 1).parameter_count() == 216640);
  CHECK(vit_parameter_count(test::tiny_vit()) == census(test::tiny_vit()));
}

TEST_CASE("initialization is seeded") {
  const auto c = test::tiny_vit();
  const auto a = init_weights(c, 5);
  const auto b = init_weights(c, 5);
  const auto other = init_weights(c, 6);
  std::vector<TensorRef<const float>> ta, tb, to;
  a.for_each_tensor([&](TensorRef<const float> t) { ta.push_back(t); });
  b.for_each_tensor([&](TensorRef<const float> t) { tb.push_back(t); });
  other.for_each_tensor([&](TensorRef<const float> t) { to.push_back(t); });
  REQUIRE(ta.size() == to.size());
  for (std::size_t k = 0; k < ta.size(); ++k) {
    CHECK(std::equal(ta[k].data, ta[k].data + ta[k].size(), tb[k].data));
    const bool is_matrix = ta[k].rows > 1 && ta[k].name.find("ln") == std::string::npos;
    if (!is_matrix) continue;
    double diff = 0;
    for (std::size_t i = 0; i < ta[k].size(); ++i) diff = std::max(diff, std::abs(double(ta[k].data[i]) - to[k].data[i]));
    CHECK_MESSAGE(diff > 0.0, ta[k].name);
  }
  // Truncated at two sigma.
  for (Eigen::Index i = 0; i < a.patch.w.size(); ++i) CHECK(std::abs(a.patch.w.data()[i]) <= 0.04f + 1e-7f);
  CHECK(a.blocks[0].ln1_scale.isOnes());
  CHECK(a.blocks[0].q.b.isZero());
}

TEST_CASE("forward is pure and shaped by the config") {
  const auto c = test::tiny_vit();
  const auto w = init_weights(c, 3);
  Rng rng(8);
  const Image img = test::random_image(rng, 16);
  const auto e1 = forward_cls(w, img);
  const auto e2 = forward_cls(w, img);
  CHECK(e1.size() == c.embed_dim);
  CHECK(e1 == e2);
  CHECK_THROWS_WITH_AS(forward_cls(w, test::random_image(rng, 32)), doctest::Contains("16x16"), ValidationError);
}

TEST_CASE("cls source changes the embedding") {
  auto c = test::tiny_vit();
  auto post = init_weights(c, 3);
  auto pre = post;
  pre.config.cls_source = ClsSource::pre_norm;
  Rng rng(1);
  const Image img = test::random_image(rng, 16);
  CHECK(forward_cls(post, img) != forward_cls(pre, img));
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  const auto c = test::tiny_vit();
  const auto w = init_weights(c, 3).cast<double>();
  Rng rng(2);
  std::vector<double> px(16 * 16 * 3);
  for (auto& v : px) v = rng.uniform();
  ForwardCache<double> cache;
  forward_cls<double>(w, px, nullptr, {}, &cache);
  auto gw = w.zeros_like();
  std::vector<double> gp(px.size(), 0.0);
  backward<double>(w, nullptr, cache, Vec<double>::Zero(c.embed_dim), {&gw, nullptr, &gp});
  gw.for_each_tensor([](TensorRef<double> t) {
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.data[i] == 0.0);
  });
  for (double g : gp) CHECK(g == 0.0);
}

TEST_CASE("gradients of every tensor class match finite differences") {
  const auto r = test::gradient_suite(3, 21, true);
  CHECK(r.cases == 3);
  REQUIRE(!r.weight_classes.empty());
  for (const auto& c : r.weight_classes) {
    // Key biases shift every logit of a row equally, so their true gradient is
    // zero and only finite-difference noise is left to compare.
    if (c.name == "k.b") CHECK_MESSAGE(c.abs_error < 1e-8, c.name << " " << c.abs_error);
    else CHECK_MESSAGE(c.rel_error < 1e-4, c.name << " " << c.rel_error);
  }
  CHECK(r.pixel_rel_error < 1e-3);
}

TEST_CASE("pixel directional derivative matches finite differences") {
  ViTConfig c;
  c.image_size = 32;
  c.embed_dim = 32;
  c.heads = 2;
  c.depth = 2;
  const auto w = init_weights(c, 4).cast<double>();
  Rng rng(12);
  std::vector<double> px(32 * 32 * 3), dir(px.size());
  for (auto& v : px) v = rng.uniform();
  for (auto& v : dir) v = rng.normal();
  Vec<double> u(c.embed_dim);
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.normal();
  ForwardCache<double> cache;
  forward_cls<double>(w, px, nullptr, {}, &cache);
  std::vector<double> gp(px.size(), 0.0);
  backward<double>(w, nullptr, cache, u, {nullptr, nullptr, &gp});
  double analytic = 0;
  for (std::size_t i = 0; i < px.size(); ++i) analytic += gp[i] * dir[i];
  const double h = 1e-5;
  auto f = [&](double s) {
    std::vector<double> q(px);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += s * dir[i];
    return u.dot(forward_cls<double>(w, q));
  };
  const double fd = (f(h) - f(-h)) / (2 * h);
  CHECK(std::abs(fd - analytic) / std::abs(fd) < 1e-3);
}

TEST_CASE("backbone checkpoint round trip") {
  Backbone b{"b0", init_weights(test::tiny_vit(), 9), std::nullopt, std::nullopt};
  std::stringstream ss;
  write_backbone(ss, b);
  const Backbone back = read_backbone(ss);
  CHECK(back.weights.init_seed == 9);
  CHECK(back.weights.patch.w == b.weights.patch.w);
  CHECK(back.weights.blocks[1].fc2.b == b.weights.blocks[1].fc2.b);
  CHECK(base_weights_hash(back.weights) == base_weights_hash(b.weights));

  std::stringstream bad("PSIMWX garbage");
  CHECK_THROWS_AS(read_backbone(bad), IoError);
}

}  // TEST_SUITE
