#include "psim/triplets.hpp"

#include <cstdio>

#include "psim/error.hpp"
#include "psim/parallel.hpp"
#include "psim/png_io.hpp"
#include "psim/random.hpp"

namespace psim {

TripletSet load_triplets(const Dataset& dataset, const std::filesystem::path& base_dir, int size,
                         bool require_label, int jobs) {
  TripletSet out(dataset.records.size());
  parallel_for(dataset.records.size(), jobs, [&](std::size_t i) {
    const TripletRecord& r = dataset.records[i];
    LoadedTriplet t;
    t.id = r.id;
    t.category = r.category;
    if (r.label) {
      t.label = *r.label;
    } else if (!require_label && r.oracle_y) {
      t.label = *r.oracle_y;
    } else if (require_label) {
      throw ValidationError("triplet " + r.id + " has no label");
    }
    const std::array<std::string, 3> paths{r.ref_path, r.a_path, r.b_path};
    for (int k = 0; k < 3; ++k) {
      Image img = read_png(base_dir / paths[k]);
      if (size > 0 && (img.height() != size || img.width() != size)) img = resize_bilinear(img, size, size);
      t.images[k] = std::move(img);
    }
    if (r.mask_paths) {
      std::array<Mask, 3> masks;
      for (int k = 0; k < 3; ++k) {
        masks[k] = read_mask_png(base_dir / (*r.mask_paths)[k]);
        if (!masks[k].matches(t.images[k])) {
          // Masks follow the image through nearest-neighbour resampling.
          Mask m(t.images[k].height(), t.images[k].width());
          for (int y = 0; y < m.height(); ++y) {
            for (int x = 0; x < m.width(); ++x) {
              m.set(y, x, masks[k].at(y * masks[k].height() / m.height(), x * masks[k].width() / m.width()));
            }
          }
          masks[k] = std::move(m);
        }
      }
      t.masks = std::move(masks);
    }
    t.category_area = r.category_area;
    out[i] = std::move(t);
  });
  return out;
}

std::string triplet_category(const SampledTriplet& sample) {
  return std::string(to_string(sample.dim_a)) + "|" + std::string(to_string(sample.dim_b));
}

SyntheticItem synthesize_one(const SamplerConfig& config, int size, std::uint64_t seed, std::size_t index) {
  Rng rng(hash_combine(seed, static_cast<std::uint64_t>(index)));
  SyntheticItem item;
  item.sample = sample_triplet(config, rng);
  item.rendered = generate_triplet(item.sample.spec, size);
  return item;
}

TripletSet synthesize_triplets(std::size_t n, int size, const SamplerConfig& config,
                               std::uint64_t seed, int jobs) {
  config.validate();
  TripletSet out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    SyntheticItem item = synthesize_one(config, size, seed, i);
    LoadedTriplet t;
    char id[32];
    std::snprintf(id, sizeof id, "t%06zu", i);
    t.id = id;
    t.label = item.rendered.oracle_label;
    t.category = triplet_category(item.sample);
    std::array<Mask, 3> masks;
    std::array<std::array<double, kShapeKindCount>, 3> area{};
    for (int k = 0; k < 3; ++k) {
      t.images[k] = std::move(item.rendered.scenes[k].image);
      masks[k] = std::move(item.rendered.scenes[k].mask);
      area[k] = item.rendered.scenes[k].category_area;
    }
    t.masks = std::move(masks);
    t.category_area = area;
    out[i] = std::move(t);
  });
  return out;
}

Dataset write_synthetic(const std::filesystem::path& out_dir, std::size_t n, int size,
                        const SamplerConfig& config, std::uint64_t seed, int jobs) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  Dataset ds;
  ds.records.resize(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    SyntheticItem item = synthesize_one(config, size, seed, i);
    char id[32];
    std::snprintf(id, sizeof id, "t%06zu", i);
    TripletRecord r;
    r.id = id;
    r.category = triplet_category(item.sample);
    r.oracle_y = item.rendered.oracle_label;
    r.spec = item.sample.spec;
    static constexpr const char* kSuffix[3] = {"ref", "a", "b"};
    std::array<std::string, 3> images, masks;
    std::array<std::array<double, kShapeKindCount>, 3> area{};
    for (int k = 0; k < 3; ++k) {
      images[k] = "images/" + r.id + "_" + kSuffix[k] + ".png";
      masks[k] = "images/" + r.id + "_" + kSuffix[k] + "_mask.png";
      write_png(out_dir / images[k], item.rendered.scenes[k].image);
      write_mask_png(out_dir / masks[k], item.rendered.scenes[k].mask);
      area[k] = item.rendered.scenes[k].category_area;
    }
    r.ref_path = images[0];
    r.a_path = images[1];
    r.b_path = images[2];
    r.mask_paths = masks;
    r.category_area = area;
    ds.records[i] = std::move(r);
  });
  return ds;
}

}  // namespace psim
