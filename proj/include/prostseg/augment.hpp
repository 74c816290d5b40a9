#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "prostseg/error.hpp"
#include "prostseg/image.hpp"
#include "prostseg/ingest.hpp"
#include "prostseg/rng.hpp"

namespace prostseg {

enum class TransformKind { ROTATE, ZOOM, TRANSLATE, FLIP, SHEAR, ROTATE_ZOOM };

/// 2x3 affine map (x,y) -> (a*x + b*y + c, d*x + e*y + f).
struct Affine {
  double a = 1, b = 0, c = 0;
  double d = 0, e = 1, f = 0;

  static Affine identity() { return {}; }

  Affine then(const Affine& o) const {  // o applied after *this
    return {o.a * a + o.b * d, o.a * b + o.b * e, o.a * c + o.b * f + o.c,
            o.d * a + o.e * d, o.d * b + o.e * e, o.d * c + o.e * f + o.f};
  }

  Affine inverse() const {
    double det = a * e - b * d;
    double ia = e / det, ib = -b / det;
    double id = -d / det, ie = a / det;
    return {ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)};
  }

  std::pair<double, double> map(double x, double y) const {
    return {a * x + b * y + c, d * x + e * y + f};
  }
};

/// One deterministic geometric transformation. Rotation, zoom and shear are
/// anchored at the grid center; translation offsets are whole pixels.
struct GeometricTransform {
  int transform_id = 0;  // 1..16
  TransformKind kind = TransformKind::ROTATE;
  double angle_deg = 0;  // |angle| <= 25
  double scale = 1;      // in [0.85, 1.15]
  int dx = 0, dy = 0;    // |offset| <= 20
  int axis = 0;          // FLIP/SHEAR: 0 horizontal(x), 1 vertical(y)
  double shear = 0;      // |shear| <= 0.15

  Affine forward() const {
    const double cx = (kGridSize - 1) / 2.0, cy = (kGridSize - 1) / 2.0;
    const Affine to_origin{1, 0, -cx, 0, 1, -cy};
    const Affine from_origin{1, 0, cx, 0, 1, cy};
    auto centered = [&](const Affine& m) { return to_origin.then(m).then(from_origin); };

    switch (kind) {
      case TransformKind::ROTATE: {
        double r = angle_deg * 3.14159265358979323846 / 180.0;
        return centered({std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0});
      }
      case TransformKind::ZOOM:
        return centered({scale, 0, 0, 0, scale, 0});
      case TransformKind::TRANSLATE:
        return {1, 0, static_cast<double>(dx), 0, 1, static_cast<double>(dy)};
      case TransformKind::FLIP:
        return axis == 0 ? Affine{-1, 0, kGridSize - 1.0, 0, 1, 0}
                         : Affine{1, 0, 0, 0, -1, kGridSize - 1.0};
      case TransformKind::SHEAR:
        return axis == 0 ? centered({1, shear, 0, 0, 1, 0}) : centered({1, 0, 0, shear, 1, 0});
      case TransformKind::ROTATE_ZOOM: {
        double r = angle_deg * 3.14159265358979323846 / 180.0;
        Affine rot{std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0};
        Affine zoom{scale, 0, 0, 0, scale, 0};
        return centered(rot.then(zoom));
      }
    }
    return Affine::identity();
  }
};

/// Exactly 16 transforms: 4 rotations, 3 zooms, 3 translations, 2 flips,
/// 2 shears, 2 rotate+zoom compositions; parameters drawn from `seed`.
struct AugmentationPlan {
  std::vector<GeometricTransform> transforms;
  std::uint64_t seed = 0;
};

inline AugmentationPlan make_plan(std::uint64_t seed) {
  Rng rng(splitmix64(seed) ^ 0xa0537ULL);
  AugmentationPlan plan;
  plan.seed = seed;
  auto sign = [&] { return rng.bernoulli(0.5) ? 1.0 : -1.0; };

  int id = 1;
  for (int i = 0; i < 4; ++i) {
    GeometricTransform t;
    t.transform_id = id++;
    t.kind = TransformKind::ROTATE;
    t.angle_deg = sign() * rng.uniform(5.0, 25.0);
    plan.transforms.push_back(t);
  }
  for (int i = 0; i < 3; ++i) {
    GeometricTransform t;
    t.transform_id = id++;
    t.kind = TransformKind::ZOOM;
    t.scale = 1.0 + sign() * rng.uniform(0.05, 0.15);
    plan.transforms.push_back(t);
  }
  for (int i = 0; i < 3; ++i) {
    GeometricTransform t;
    t.transform_id = id++;
    t.kind = TransformKind::TRANSLATE;
    t.dx = static_cast<int>(sign()) * rng.range_int(4, 20);
    t.dy = static_cast<int>(sign()) * rng.range_int(4, 20);
    plan.transforms.push_back(t);
  }
  for (int axis = 0; axis < 2; ++axis) {
    GeometricTransform t;
    t.transform_id = id++;
    t.kind = TransformKind::FLIP;
    t.axis = axis;
    plan.transforms.push_back(t);
  }
  for (int axis = 0; axis < 2; ++axis) {
    GeometricTransform t;
    t.transform_id = id++;
    t.kind = TransformKind::SHEAR;
    t.axis = axis;
    t.shear = sign() * rng.uniform(0.05, 0.15);
    plan.transforms.push_back(t);
  }
  for (int i = 0; i < 2; ++i) {
    GeometricTransform t;
    t.transform_id = id++;
    t.kind = TransformKind::ROTATE_ZOOM;
    t.angle_deg = sign() * rng.uniform(5.0, 25.0);
    t.scale = 1.0 + sign() * rng.uniform(0.05, 0.15);
    plan.transforms.push_back(t);
  }
  return plan;
}

/// Applies one transform jointly to image and mask through a single shared
/// coordinate map: bilinear resampling for intensities, nearest-neighbor for
/// labels, zero intensity / BG label outside the source frame.
inline Sample apply(const GeometricTransform& t, const Sample& s) {
  if (s.image.width != kGridSize || s.image.height != kGridSize || s.mask.width != kGridSize ||
      s.mask.height != kGridSize)
    throw ShapeError("augmentation requires the 256x256 grid");

  const Affine inv = t.forward().inverse();
  Sample out;
  out.image.patient_id = s.image.patient_id;
  out.image.slice_index = s.image.slice_index;
  out.image.pixels.resize(s.image.pixels.size());
  out.mask.patient_id = s.mask.patient_id;
  out.mask.slice_index = s.mask.slice_index;

  auto pixel_or_zero = [&](int x, int y) -> double {
    if (x < 0 || x >= kGridSize || y < 0 || y >= kGridSize) return 0.0;
    return s.image.at(x, y);
  };

  for (int oy = 0; oy < kGridSize; ++oy) {
    for (int ox = 0; ox < kGridSize; ++ox) {
      auto [sx, sy] = inv.map(ox, oy);

      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      double fx = sx - x0, fy = sy - y0;
      double v = (1 - fy) * ((1 - fx) * pixel_or_zero(x0, y0) + fx * pixel_or_zero(x0 + 1, y0)) +
                 fy * ((1 - fx) * pixel_or_zero(x0, y0 + 1) + fx * pixel_or_zero(x0 + 1, y0 + 1));
      out.image.pixels[static_cast<std::size_t>(oy) * kGridSize + ox] = static_cast<float>(v);

      int nx = static_cast<int>(std::lround(sx));
      int ny = static_cast<int>(std::lround(sy));
      out.mask.at(ox, oy) = (nx < 0 || nx >= kGridSize || ny < 0 || ny >= kGridSize)
                                ? static_cast<std::uint8_t>(ZoneLabel::BG)
                                : s.mask.at(nx, ny);
    }
  }
  return out;
}

/// Expands an ORIGINAL-only manifest 17x: each entry is copied to `out_dir`
/// and accompanied by one augmented pair per plan transform, written with
/// the `_aug<transform_id>` suffix.
inline DatasetManifest expand(const DatasetManifest& manifest, const AugmentationPlan& plan,
                              const std::filesystem::path& out_dir) {
  for (const auto& e : manifest.entries)
    if (e.provenance != Provenance::ORIGINAL)
      throw DataError("manifest already contains augmented entries; refusing to augment twice");
  if (plan.transforms.size() != 16) throw ConfigError("augmentation plan must hold exactly 16 transforms");

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");

  DatasetManifest out;
  out.root = out_dir;
  out.seed = manifest.seed;
  for (const auto& e : manifest.entries) {
    const std::string base = e.patient_id + "_" + std::to_string(e.slice_index);
    for (const char* sub : {"images", "masks"}) {
      auto src = manifest.root / (sub == std::string("images") ? e.image_path : e.mask_path);
      auto dst = out_dir / sub / (base + ".png");
      if (!std::filesystem::exists(dst) || !std::filesystem::equivalent(src, dst))
        std::filesystem::copy_file(src, dst, std::filesystem::copy_options::overwrite_existing);
    }
    out.entries.push_back({e.patient_id, e.slice_index, "images/" + base + ".png",
                           "masks/" + base + ".png", Provenance::ORIGINAL, 0});

    Sample original = load_sample(manifest, e);
    for (const auto& t : plan.transforms) {
      Sample aug = apply(t, original);
      const std::string name = base + "_aug" + std::to_string(t.transform_id) + ".png";
      write_png_gray8((out_dir / "images" / name).string(), slice_to_image8(aug.image));
      write_png_gray8((out_dir / "masks" / name).string(), mask_to_image8(aug.mask));
      out.entries.push_back({e.patient_id, e.slice_index, "images/" + name, "masks/" + name,
                             Provenance::AUGMENTED, t.transform_id});
    }
  }
  validate_manifest(out);
  write_manifest(out, out_dir / "manifest.csv");
  return out;
}

}  // namespace prostseg
