#include "psim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psim/error.hpp"

namespace psim {

namespace {

constexpr int kSupersample = 4;

struct Point {
  double x;
  double y;
};

double color_l1(Rgb a, Rgb b) {
  return std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b);
}

double color_l2(Rgb d) {
  return std::sqrt(static_cast<double>(d.r) * d.r + static_cast<double>(d.g) * d.g +
                   static_cast<double>(d.b) * d.b);
}

bool in_unit(Rgb c) {
  auto ok = [](float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; };
  return ok(c.r) && ok(c.g) && ok(c.b);
}

Rgb add(Rgb a, Rgb b) { return {a.r + b.r, a.g + b.g, a.b + b.b}; }

[[noreturn]] void reject(const std::string& field, const std::string& why) {
  throw ValidationError("SceneParams." + field + ": " + why);
}

// One rendered item: a shape centered at (cx, cy) in pixel units.
struct Item {
  ShapeKind kind;
  double cx;
  double cy;
  double radius;
  double reach;                // distance of the farthest boundary point
  std::vector<Point> polygon;  // empty for circles; vertices relative to center
};

std::vector<Point> make_polygon(ShapeKind kind, double r, double rotation) {
  std::vector<Point> pts;
  auto push = [&](double radius, double angle) {
    pts.push_back({radius * std::cos(angle), radius * std::sin(angle)});
  };
  const double pi = std::numbers::pi;
  switch (kind) {
    case ShapeKind::circle:
      break;
    case ShapeKind::square:
      // Half-side 0.8 r: corners sit at 0.8*sqrt(2) r.
      for (int i = 0; i < 4; ++i) push(0.8 * std::numbers::sqrt2 * r, rotation + pi / 4 + i * pi / 2);
      break;
    case ShapeKind::triangle:
      for (int i = 0; i < 3; ++i) push(r, rotation - pi / 2 + i * 2 * pi / 3);
      break;
    case ShapeKind::star:
      for (int i = 0; i < 10; ++i) push(i % 2 == 0 ? r : 0.45 * r, rotation - pi / 2 + i * pi / 5);
      break;
  }
  return pts;
}

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double xc = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

bool covers(const Item& item, double x, double y) {
  const double dx = x - item.cx;
  const double dy = y - item.cy;
  const double d2 = dx * dx + dy * dy;
  if (item.kind == ShapeKind::circle) return d2 <= item.radius * item.radius;
  if (d2 > item.reach * item.reach) return false;
  return inside_polygon(item.polygon, dx, dy);
}

std::vector<Item> layout(const SceneParams& p, int size) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p.count))));
  const int rows = (p.count + cols - 1) / cols;
  const double radius = p.scale * size / cols;
  const double pitch = 2.2 * radius;
  Rng jitter(p.rng_seed);
  std::vector<Item> items;
  items.reserve(p.count);
  for (int i = 0; i < p.count; ++i) {
    const int gx = i % cols;
    const int gy = i / cols;
    const double jx = p.count > 1 ? jitter.uniform(-0.1, 0.1) * radius : 0.0;
    const double jy = p.count > 1 ? jitter.uniform(-0.1, 0.1) * radius : 0.0;
    Item item;
    item.kind = p.shape_kind;
    item.cx = p.center_u * size + (gx - (cols - 1) / 2.0) * pitch + jx;
    item.cy = p.center_v * size + (gy - (rows - 1) / 2.0) * pitch + jy;
    item.radius = radius;
    item.polygon = make_polygon(p.shape_kind, radius, p.rotation);
    item.reach = radius;
    for (const Point& v : item.polygon) item.reach = std::max(item.reach, std::hypot(v.x, v.y));
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::star: return "star";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(std::string_view name) {
  for (int i = 0; i < kShapeKindCount; ++i) {
    const auto kind = static_cast<ShapeKind>(i);
    if (to_string(kind) == name) return kind;
  }
  throw ValidationError("unknown shape_kind '" + std::string(name) + "'");
}

std::string_view to_string(PerturbDim dim) {
  switch (dim) {
    case PerturbDim::fg_color: return "fg_color";
    case PerturbDim::shape_kind: return "shape_kind";
    case PerturbDim::count: return "count";
    case PerturbDim::scale: return "scale";
    case PerturbDim::bg_color: return "bg_color";
    case PerturbDim::center: return "center";
    case PerturbDim::rotation: return "rotation";
  }
  return "unknown";
}

void SceneParams::validate() const {
  const int kind = static_cast<int>(shape_kind);
  if (kind < 0 || kind >= kShapeKindCount) reject("shape_kind", "not a known shape");
  if (count < 1 || count > kMaxCount) reject("count", "must be in [1, 9], got " + std::to_string(count));
  if (!in_unit(fg_color)) reject("fg_color", "channels must be in [0,1]");
  if (!in_unit(bg_color)) reject("bg_color", "channels must be in [0,1]");
  if (color_l1(fg_color, bg_color) < kMinColorGap) {
    reject("fg_color", "L1 gap to bg_color below 0.1");
  }
  if (!(center_u >= 0.0 && center_u <= 1.0)) reject("center", "u must be in [0,1]");
  if (!(center_v >= 0.0 && center_v <= 1.0)) reject("center", "v must be in [0,1]");
  if (!(scale > 0.0 && scale <= kMaxScale)) reject("scale", "must be in (0, 0.5]");
  if (!std::isfinite(rotation)) reject("rotation", "must be finite");
}

double weighted_norm(const Perturbation& d, const SalienceWeights& w) {
  const double terms[] = {
      w.fg_color * color_l2(d.fg_shift),
      w.shape_kind * (d.shape_step % kShapeKindCount != 0 ? 1.0 : 0.0),
      w.count * std::abs(d.count_delta),
      w.scale * std::abs(d.scale_delta),
      w.bg_color * color_l2(d.bg_shift),
      w.center * std::hypot(d.center_du, d.center_dv),
      w.rotation * std::abs(d.rotation_delta),
  };
  double sum = 0.0;
  for (double t : terms) sum += t * t;
  return std::sqrt(sum);
}

SceneParams apply_perturbation(const SceneParams& reference, const Perturbation& d) {
  SceneParams p = reference;
  p.fg_color = add(reference.fg_color, d.fg_shift);
  p.bg_color = add(reference.bg_color, d.bg_shift);
  const int kind = ((static_cast<int>(reference.shape_kind) + d.shape_step) % kShapeKindCount +
                    kShapeKindCount) % kShapeKindCount;
  p.shape_kind = static_cast<ShapeKind>(kind);
  p.count = reference.count + d.count_delta;
  p.scale = reference.scale + d.scale_delta;
  p.center_u = reference.center_u + d.center_du;
  p.center_v = reference.center_v + d.center_dv;
  p.rotation = reference.rotation + d.rotation_delta;
  p.validate();
  return p;
}

RenderedScene render_scene(const SceneParams& params, int size) {
  if (size < kMinRenderSize) {
    throw ValidationError("render size " + std::to_string(size) + " below minimum " +
                          std::to_string(kMinRenderSize));
  }
  params.validate();
  const auto items = layout(params, size);

  RenderedScene out{Image(size, size, params.bg_color), Mask(size, size), {}};
  const Rgb fg = params.fg_color;
  const Rgb bg = params.bg_color;
  constexpr double kSamples = kSupersample * kSupersample;
  double covered_total = 0.0;

  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      // Skip the subsample loop for pixels far from every item.
      bool near = false;
      for (const Item& item : items) {
        const double dx = px + 0.5 - item.cx;
        const double dy = py + 0.5 - item.cy;
        const double reach = item.reach + 1.0;
        if (dx * dx + dy * dy <= reach * reach) {
          near = true;
          break;
        }
      }
      if (!near) continue;
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double x = px + (sx + 0.5) / kSupersample;
          const double y = py + (sy + 0.5) / kSupersample;
          for (const Item& item : items) {
            if (covers(item, x, y)) {
              ++hits;
              break;
            }
          }
        }
      }
      if (hits == 0) continue;
      const auto cov = static_cast<float>(hits / kSamples);
      out.image.set_pixel(py, px, {bg.r + cov * (fg.r - bg.r), bg.g + cov * (fg.g - bg.g),
                                   bg.b + cov * (fg.b - bg.b)});
      out.mask.set(py, px, hits * 2 >= kSamples);
      covered_total += cov;
    }
  }
  out.category_area[static_cast<int>(params.shape_kind)] =
      covered_total / (static_cast<double>(size) * size);
  return out;
}

int oracle_label(const TripletSpec& spec) {
  const double na = weighted_norm(spec.delta_a, spec.salience_weights);
  const double nb = weighted_norm(spec.delta_b, spec.salience_weights);
  if (std::abs(na - nb) <= kAmbiguityTolerance) {
    throw ValidationError("ambiguous triplet: weighted norms equal within 1e-9");
  }
  return nb < na ? 1 : 0;
}

GeneratedTriplet generate_triplet(const TripletSpec& spec, int size) {
  GeneratedTriplet out;
  out.oracle_label = oracle_label(spec);
  out.norm_a = weighted_norm(spec.delta_a, spec.salience_weights);
  out.norm_b = weighted_norm(spec.delta_b, spec.salience_weights);
  out.scenes[0] = render_scene(spec.reference, size);
  out.scenes[1] = render_scene(apply_perturbation(spec.reference, spec.delta_a), size);
  out.scenes[2] = render_scene(apply_perturbation(spec.reference, spec.delta_b), size);
  return out;
}

void SamplerConfig::validate() const {
  double total = 0.0;
  for (double f : dim_frequency) {
    if (!(f >= 0.0)) throw ValidationError("SamplerConfig.dim_frequency: negative entry");
    total += f;
  }
  if (total <= 0.0) throw ValidationError("SamplerConfig.dim_frequency: all zero");
  int active = 0;
  for (double f : dim_frequency) active += f > 0.0 ? 1 : 0;
  if (dims_per_distortion < 1 || dims_per_distortion > active) {
    throw ValidationError("SamplerConfig.dims_per_distortion: must be in [1, active dims]");
  }
  if (!(min_margin >= 0.05)) throw ValidationError("SamplerConfig.min_margin: must be >= 0.05");
  if (!(reference_scale_min > 0.0 && reference_scale_min <= reference_scale_max &&
        reference_scale_max <= kMaxScale)) {
    throw ValidationError("SamplerConfig.reference_scale: invalid range");
  }
  if (reference_count_max < 1 || reference_count_max > kMaxCount) {
    throw ValidationError("SamplerConfig.reference_count_max: must be in [1, 9]");
  }
}

namespace {

Rgb random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
          static_cast<float>(rng.uniform())};
}

SceneParams sample_reference(const SamplerConfig& c, Rng& rng) {
  SceneParams p;
  p.shape_kind = static_cast<ShapeKind>(rng.uniform_int(0, kShapeKindCount - 1));
  p.count = static_cast<int>(rng.uniform_int(1, c.reference_count_max));
  do {
    p.fg_color = random_color(rng);
    p.bg_color = random_color(rng);
  } while (color_l1(p.fg_color, p.bg_color) < c.reference_min_color_gap);
  p.center_u = rng.uniform(0.35, 0.65);
  p.center_v = rng.uniform(0.35, 0.65);
  p.scale = rng.uniform(c.reference_scale_min, c.reference_scale_max);
  p.rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.rng_seed = rng.next_u64();
  return p;
}

PerturbDim pick_dim(const SamplerConfig& c, Rng& rng, const std::array<bool, kPerturbDimCount>& used) {
  double total = 0.0;
  for (int i = 0; i < kPerturbDimCount; ++i) total += used[i] ? 0.0 : c.dim_frequency[i];
  double r = rng.uniform() * total;
  for (int i = 0; i < kPerturbDimCount; ++i) {
    if (used[i]) continue;
    r -= c.dim_frequency[i];
    if (r < 0.0 && c.dim_frequency[i] > 0.0) return static_cast<PerturbDim>(i);
  }
  for (int i = kPerturbDimCount - 1; i >= 0; --i) {
    if (!used[i] && c.dim_frequency[i] > 0.0) return static_cast<PerturbDim>(i);
  }
  return PerturbDim::fg_color;
}

Rgb gaussian_shift(Rng& rng, double sigma) {
  return {static_cast<float>(rng.normal(0.0, sigma)), static_cast<float>(rng.normal(0.0, sigma)),
          static_cast<float>(rng.normal(0.0, sigma))};
}

// Draws until the perturbed scene is valid; returns the first dimension used.
PerturbDim sample_perturbation(const SamplerConfig& c, const SceneParams& ref, Rng& rng,
                               Perturbation& out) {
  for (;;) {
    Perturbation d;
    std::array<bool, kPerturbDimCount> used{};
    PerturbDim first = PerturbDim::fg_color;
    for (int k = 0; k < c.dims_per_distortion; ++k) {
      const PerturbDim dim = pick_dim(c, rng, used);
      used[static_cast<int>(dim)] = true;
      if (k == 0) first = dim;
      switch (dim) {
        case PerturbDim::fg_color: d.fg_shift = gaussian_shift(rng, c.color_sigma); break;
        case PerturbDim::bg_color: d.bg_shift = gaussian_shift(rng, c.color_sigma); break;
        case PerturbDim::shape_kind:
          d.shape_step = static_cast<int>(rng.uniform_int(1, kShapeKindCount - 1));
          break;
        case PerturbDim::count: {
          const double z = rng.normal(0.0, c.count_sigma);
          const int mag = std::max(1, static_cast<int>(std::lround(std::abs(z))));
          d.count_delta = z < 0.0 ? -mag : mag;
          break;
        }
        case PerturbDim::scale: d.scale_delta = rng.normal(0.0, c.scale_sigma); break;
        case PerturbDim::center:
          d.center_du = rng.normal(0.0, c.center_sigma);
          d.center_dv = rng.normal(0.0, c.center_sigma);
          break;
        case PerturbDim::rotation: d.rotation_delta = rng.normal(0.0, c.rotation_sigma); break;
      }
    }
    try {
      (void)apply_perturbation(ref, d);
    } catch (const ValidationError&) {
      continue;
    }
    out = d;
    return first;
  }
}

}  // namespace

SampledTriplet sample_triplet(const SamplerConfig& config, Rng& rng) {
  config.validate();
  SampledTriplet t;
  t.spec.reference = sample_reference(config, rng);
  t.spec.salience_weights = config.weights;
  for (;;) {
    t.dim_a = sample_perturbation(config, t.spec.reference, rng, t.spec.delta_a);
    t.dim_b = sample_perturbation(config, t.spec.reference, rng, t.spec.delta_b);
    const double na = weighted_norm(t.spec.delta_a, config.weights);
    const double nb = weighted_norm(t.spec.delta_b, config.weights);
    if (std::abs(na - nb) >= config.min_margin) return t;
  }
}

// ---- JSON ----------------------------------------------------------------

namespace {

nlohmann::json rgb_json(Rgb c) { return nlohmann::json::array({c.r, c.g, c.b}); }

Rgb rgb_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("color must be a 3-element array");
  return {j[0].get<float>(), j[1].get<float>(), j[2].get<float>()};
}

}  // namespace

void to_json(nlohmann::json& j, const SceneParams& p) {
  j = nlohmann::json{{"shape_kind", to_string(p.shape_kind)},
                     {"count", p.count},
                     {"fg_color", rgb_json(p.fg_color)},
                     {"bg_color", rgb_json(p.bg_color)},
                     {"center", {p.center_u, p.center_v}},
                     {"scale", p.scale},
                     {"rotation", p.rotation},
                     {"rng_seed", p.rng_seed}};
}

void from_json(const nlohmann::json& j, SceneParams& p) {
  p.shape_kind = shape_kind_from_string(j.at("shape_kind").get<std::string>());
  p.count = j.at("count").get<int>();
  p.fg_color = rgb_from(j.at("fg_color"));
  p.bg_color = rgb_from(j.at("bg_color"));
  p.center_u = j.at("center").at(0).get<double>();
  p.center_v = j.at("center").at(1).get<double>();
  p.scale = j.at("scale").get<double>();
  p.rotation = j.at("rotation").get<double>();
  p.rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const Perturbation& p) {
  j = nlohmann::json{{"fg_shift", rgb_json(p.fg_shift)},
                     {"bg_shift", rgb_json(p.bg_shift)},
                     {"shape_step", p.shape_step},
                     {"count_delta", p.count_delta},
                     {"scale_delta", p.scale_delta},
                     {"center_delta", {p.center_du, p.center_dv}},
                     {"rotation_delta", p.rotation_delta}};
}

void from_json(const nlohmann::json& j, Perturbation& p) {
  p = Perturbation{};
  if (j.contains("fg_shift")) p.fg_shift = rgb_from(j["fg_shift"]);
  if (j.contains("bg_shift")) p.bg_shift = rgb_from(j["bg_shift"]);
  p.shape_step = j.value("shape_step", 0);
  p.count_delta = j.value("count_delta", 0);
  p.scale_delta = j.value("scale_delta", 0.0);
  if (j.contains("center_delta")) {
    p.center_du = j["center_delta"].at(0).get<double>();
    p.center_dv = j["center_delta"].at(1).get<double>();
  }
  p.rotation_delta = j.value("rotation_delta", 0.0);
}

void to_json(nlohmann::json& j, const SalienceWeights& w) {
  j = nlohmann::json{{"fg_color", w.fg_color}, {"shape_kind", w.shape_kind}, {"count", w.count},
                     {"scale", w.scale},       {"bg_color", w.bg_color},     {"center", w.center},
                     {"rotation", w.rotation}};
}

void from_json(const nlohmann::json& j, SalienceWeights& w) {
  w = SalienceWeights{};
  w.fg_color = j.value("fg_color", w.fg_color);
  w.shape_kind = j.value("shape_kind", w.shape_kind);
  w.count = j.value("count", w.count);
  w.scale = j.value("scale", w.scale);
  w.bg_color = j.value("bg_color", w.bg_color);
  w.center = j.value("center", w.center);
  w.rotation = j.value("rotation", w.rotation);
}

void to_json(nlohmann::json& j, const TripletSpec& s) {
  j = nlohmann::json{{"reference", s.reference},
                     {"delta_a", s.delta_a},
                     {"delta_b", s.delta_b},
                     {"salience_weights", s.salience_weights}};
}

void from_json(const nlohmann::json& j, TripletSpec& s) {
  s.reference = j.at("reference").get<SceneParams>();
  s.delta_a = j.at("delta_a").get<Perturbation>();
  s.delta_b = j.at("delta_b").get<Perturbation>();
  s.salience_weights = j.contains("salience_weights")
                           ? j["salience_weights"].get<SalienceWeights>()
                           : SalienceWeights{};
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = nlohmann::json{{"weights", c.weights},
                     {"dim_frequency", c.dim_frequency},
                     {"dims_per_distortion", c.dims_per_distortion},
                     {"color_sigma", c.color_sigma},
                     {"count_sigma", c.count_sigma},
                     {"scale_sigma", c.scale_sigma},
                     {"center_sigma", c.center_sigma},
                     {"rotation_sigma", c.rotation_sigma},
                     {"min_margin", c.min_margin},
                     {"reference_scale_min", c.reference_scale_min},
                     {"reference_scale_max", c.reference_scale_max},
                     {"reference_count_max", c.reference_count_max},
                     {"reference_min_color_gap", c.reference_min_color_gap}};
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
  c = SamplerConfig{};
  if (j.contains("weights")) c.weights = j["weights"].get<SalienceWeights>();
  if (j.contains("dim_frequency")) {
    c.dim_frequency = j["dim_frequency"].get<std::array<double, kPerturbDimCount>>();
  }
  c.dims_per_distortion = j.value("dims_per_distortion", c.dims_per_distortion);
  c.color_sigma = j.value("color_sigma", c.color_sigma);
  c.count_sigma = j.value("count_sigma", c.count_sigma);
  c.scale_sigma = j.value("scale_sigma", c.scale_sigma);
  c.center_sigma = j.value("center_sigma", c.center_sigma);
  c.rotation_sigma = j.value("rotation_sigma", c.rotation_sigma);
  c.min_margin = j.value("min_margin", c.min_margin);
  c.reference_scale_min = j.value("reference_scale_min", c.reference_scale_min);
  c.reference_scale_max = j.value("reference_scale_max", c.reference_scale_max);
  c.reference_count_max = j.value("reference_count_max", c.reference_count_max);
  c.reference_min_color_gap = j.value("reference_min_color_gap", c.reference_min_color_gap);
}

}  // namespace psim
