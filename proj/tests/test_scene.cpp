#include <doctest.h>

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"
#include "psim/random.hpp"
#include "psim/scene.hpp"
#include "psim/triplets.hpp"

using namespace psim;

namespace {

SceneParams centered_circle() {
  SceneParams p;
  p.shape_kind = ShapeKind::circle;
  p.count = 1;
  p.scale = 0.25;
  p.fg_color = {1, 0, 0};
  p.bg_color = {0, 0, 1};
  return p;
}

}  // namespace

TEST_SUITE("scene") {

TEST_CASE("rendering is a pure function of params and size") {
  SceneParams p = centered_circle();
  p.shape_kind = ShapeKind::star;
  p.count = 5;
  p.rotation = 0.4;
  p.rng_seed = 77;
  const auto a = render_scene(p, 48);
  const auto b = render_scene(p, 48);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
}

TEST_CASE("centered disk covers pi r^2 of the frame") {
  const auto s = render_scene(centered_circle(), 64);
  const double area = static_cast<double>(s.mask.count()) / (64.0 * 64.0);
  const double expected = std::numbers::pi * 0.25 * 0.25;
  CHECK(std::abs(area - expected) / expected < 0.10);
  CHECK(s.category_area[0] == doctest::Approx(expected).epsilon(0.10));
  CHECK(s.category_area[1] == 0.0);
}

TEST_CASE("foreground and background pixels carry their colors") {
  auto p = centered_circle();
  const auto s = render_scene(p, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const Rgb c = s.image.pixel(y, x);
      if (s.mask.at(y, x)) {
        CHECK(c.r > c.b);
      } else {
        CHECK(c.b > c.r);
      }
    }
  }
  // Swapping the colors keeps the mask and swaps which region matches which color.
  std::swap(p.fg_color, p.bg_color);
  const auto t = render_scene(p, 64);
  CHECK(t.mask == s.mask);
  CHECK(t.image.pixel(32, 32).b > t.image.pixel(32, 32).r);
  CHECK(t.image.pixel(0, 0).r > t.image.pixel(0, 0).b);
}

TEST_CASE("invalid params are rejected naming the field") {
  auto p = centered_circle();
  p.count = 10;
  try {
    render_scene(p, 64);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("count") != std::string::npos);
  }
  p = centered_circle();
  p.bg_color = {0.98f, 0.0f, 0.0f};
  CHECK_THROWS_WITH_AS(render_scene(p, 64), doctest::Contains("fg_color"), ValidationError);
  p = centered_circle();
  p.scale = 0.6;
  CHECK_THROWS_WITH_AS(render_scene(p, 64), doctest::Contains("scale"), ValidationError);
  CHECK_THROWS_AS(render_scene(centered_circle(), 16), ValidationError);
}

TEST_CASE("oracle label follows the weighted norm") {
  TripletSpec spec;
  spec.reference = centered_circle();
  spec.reference.fg_color = {0.5f, 0.2f, 0.2f};
  spec.delta_a.rotation_delta = 0.3;
  spec.delta_b.fg_shift = {0.3f, 0.0f, 0.0f};
  // 0.2 * 0.3 = 0.06 for A against 1.0 * 0.3 = 0.30 for B.
  CHECK(weighted_norm(spec.delta_a, spec.salience_weights) == doctest::Approx(0.06));
  CHECK(weighted_norm(spec.delta_b, spec.salience_weights) == doctest::Approx(0.30).epsilon(1e-6));
  CHECK(oracle_label(spec) == 0);
  std::swap(spec.delta_a, spec.delta_b);
  CHECK(oracle_label(spec) == 1);

  TripletSpec zero = spec;
  zero.delta_a = {};
  CHECK(generate_triplet(zero, 32).oracle_label == 0);

  TripletSpec tie = spec;
  tie.delta_b = tie.delta_a;
  CHECK_THROWS_AS(oracle_label(tie), ValidationError);
}

TEST_CASE("sampler honours the oracle margin and stays balanced") {
  SamplerConfig config;
  Rng rng(11);
  int ones = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_triplet(config, rng);
    const double na = weighted_norm(s.spec.delta_a, s.spec.salience_weights);
    const double nb = weighted_norm(s.spec.delta_b, s.spec.salience_weights);
    CHECK(std::abs(na - nb) >= config.min_margin);
    CHECK_NOTHROW(apply_perturbation(s.spec.reference, s.spec.delta_a));
    ones += oracle_label(s.spec);
  }
  CHECK(ones / static_cast<double>(n) >= 0.45);
  CHECK(ones / static_cast<double>(n) <= 0.55);
}

TEST_CASE("synthetic items are regenerable by index") {
  SamplerConfig config;
  const auto a = synthesize_one(config, 32, 5, 17);
  const auto b = synthesize_one(config, 32, 5, 17);
  CHECK(a.sample.spec == b.sample.spec);
  CHECK(a.rendered.scenes[2].image == b.rendered.scenes[2].image);
  const auto set = synthesize_triplets(20, 32, config, 5);
  CHECK(set[17].images[1] == a.rendered.scenes[1].image);
  CHECK(set[17].label == a.rendered.oracle_label);
}

TEST_CASE("scene json round trip") {
  TripletSpec spec;
  spec.reference = centered_circle();
  spec.reference.rng_seed = 0xfeedfacecafebeefULL;
  spec.delta_a.count_delta = 2;
  spec.delta_b.center_du = -0.1;
  nlohmann::json j = spec;
  CHECK(j.get<TripletSpec>() == spec);
  SamplerConfig c;
  c.min_margin = 0.2;
  nlohmann::json cj = c;
  CHECK(cj.get<SamplerConfig>() == c);
}

}  // TEST_SUITE
