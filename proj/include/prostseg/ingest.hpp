#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "prostseg/csv.hpp"
#include "prostseg/dicom.hpp"
#include "prostseg/error.hpp"
#include "prostseg/image.hpp"
#include "prostseg/rng.hpp"

namespace prostseg {

inline constexpr int kGridSize = 256;
inline constexpr int kNumClasses = 5;

enum class ZoneLabel : std::uint8_t { BG = 0, CZ = 1, PZ = 2, TZ = 3, TUM = 4 };

inline const char* zone_name(ZoneLabel z) {
  switch (z) {
    case ZoneLabel::BG: return "BG";
    case ZoneLabel::CZ: return "CZ";
    case ZoneLabel::PZ: return "PZ";
    case ZoneLabel::TZ: return "TZ";
    case ZoneLabel::TUM: return "TUM";
  }
  return "?";
}

inline std::optional<ZoneLabel> zone_from_token(const std::string& s) {
  if (s == "CZ") return ZoneLabel::CZ;
  if (s == "PZ") return ZoneLabel::PZ;
  if (s == "TZ") return ZoneLabel::TZ;
  if (s == "TUM") return ZoneLabel::TUM;
  return std::nullopt;
}

/// One normalized grayscale slice on the 256x256 working grid.
struct SliceImage {
  std::string patient_id;
  int slice_index = 0;
  int height = kGridSize;
  int width = kGridSize;
  std::vector<float> pixels;  // row-major, intensities in [0,1]

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct Contour {
  ZoneLabel zone = ZoneLabel::CZ;
  std::vector<std::pair<int, int>> vertices;  // (x, y), implicitly closed
};

/// All annotated contours of one slice.
struct ContourSet {
  std::string patient_id;
  int slice_index = 0;
  std::vector<Contour> contours;
};

/// Per-pixel class assignment over the working grid.
struct LabelMap {
  std::string patient_id;
  int slice_index = 0;
  int height = kGridSize;
  int width = kGridSize;
  std::vector<std::uint8_t> classes;  // ZoneLabel values

  LabelMap() : classes(static_cast<std::size_t>(kGridSize) * kGridSize, 0) {}
  LabelMap(int w, int h) : height(h), width(w), classes(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t at(int x, int y) const { return classes[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return classes[static_cast<std::size_t>(y) * width + x]; }

  /// Binary channel stack (H*W*5). Exactly one channel set per pixel.
  std::vector<std::uint8_t> one_hot() const {
    std::vector<std::uint8_t> oh(classes.size() * kNumClasses, 0);
    for (std::size_t i = 0; i < classes.size(); ++i) oh[i * kNumClasses + classes[i]] = 1;
    return oh;
  }
};

/// Image + mask pair sharing the working grid and patient/slice identity.
struct Sample {
  SliceImage image;
  LabelMap mask;
};

enum class Provenance { ORIGINAL, AUGMENTED };

struct ManifestEntry {
  std::string patient_id;
  int slice_index = 0;
  std::string image_path;  // relative to DatasetManifest::root
  std::string mask_path;
  Provenance provenance = Provenance::ORIGINAL;
  int transform_id = 0;  // 0 for ORIGINAL, 1..16 for AUGMENTED
};

struct DatasetManifest {
  std::filesystem::path root;  // directory the relative paths resolve against
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;

  std::filesystem::path image_file(const ManifestEntry& e) const { return root / e.image_path; }
  std::filesystem::path mask_file(const ManifestEntry& e) const { return root / e.mask_path; }

  std::vector<std::string> patient_ids() const {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.patient_id);
    return {s.begin(), s.end()};
  }
};

// ---------------------------------------------------------------------------
// rasterize

namespace geom {

// Exact integer point-in-polygon. Vertices and query points are lattice
// points, so parity and boundary tests are computed without rounding.

inline bool on_polygon_boundary(long px, long py, const std::vector<std::pair<int, int>>& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    long ax = poly[i].first, ay = poly[i].second;
    long bx = poly[(i + 1) % n].first, by = poly[(i + 1) % n].second;
    long cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    if (cross != 0) continue;
    if (px < std::min(ax, bx) || px > std::max(ax, bx)) continue;
    if (py < std::min(ay, by) || py > std::max(ay, by)) continue;
    return true;
  }
  return false;
}

/// Even-odd (parity) test, exclusive of the boundary; combine with
/// on_polygon_boundary for boundary-inclusive fill.
inline bool parity_inside(long px, long py, const std::vector<std::pair<int, int>>& poly) {
  const std::size_t n = poly.size();
  bool inside = false;
  for (std::size_t i = 0; i < n; ++i) {
    long ax = poly[i].first, ay = poly[i].second;
    long bx = poly[(i + 1) % n].first, by = poly[(i + 1) % n].second;
    if ((ay > py) == (by > py)) continue;  // edge does not straddle the scan row
    // ray to +x crosses the edge iff px < ax + (py-ay)*(bx-ax)/(by-ay)
    long dy = by - ay;
    long lhs = (px - ax) * dy;
    long rhs = (py - ay) * (bx - ax);
    if (dy > 0 ? (lhs < rhs) : (lhs > rhs)) inside = !inside;
  }
  return inside;
}

}  // namespace geom

/// Fills each contour polygon (even-odd rule, boundary pixels included)
/// into a label map; overlaps resolve by fixed precedence
/// TUM > TZ > PZ > CZ > BG.
inline LabelMap rasterize(const ContourSet& contours) {
  LabelMap map;
  map.patient_id = contours.patient_id;
  map.slice_index = contours.slice_index;

  // paint in increasing precedence so later zones overwrite earlier ones
  for (ZoneLabel zone : {ZoneLabel::CZ, ZoneLabel::PZ, ZoneLabel::TZ, ZoneLabel::TUM}) {
    for (const Contour& c : contours.contours) {
      if (c.zone != zone) continue;
      int x0 = kGridSize - 1, y0 = kGridSize - 1, x1 = 0, y1 = 0;
      for (auto [vx, vy] : c.vertices) {
        x0 = std::min(x0, vx), x1 = std::max(x1, vx);
        y0 = std::min(y0, vy), y1 = std::max(y1, vy);
      }
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (geom::parity_inside(x, y, c.vertices) || geom::on_polygon_boundary(x, y, c.vertices))
            map.at(x, y) = static_cast<std::uint8_t>(zone);
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// parse_contours

/// Contour CSV schema: header `patient_id,slice_index,zone,contour_id,vertex_index,x,y`,
/// one row per vertex, zone in {CZ,PZ,TZ,TUM}, integer pixel coordinates.
inline const char* kContourCsvHeader = "patient_id,slice_index,zone,contour_id,vertex_index,x,y";

inline std::vector<ContourSet> parse_contours(const std::filesystem::path& csv_file) {
  if (!std::filesystem::exists(csv_file))
    throw DataError("contour CSV does not exist: " + csv_file.string());
  auto rows = read_csv(csv_file.string());
  if (rows.empty()) throw DataError("contour CSV is empty: " + csv_file.string());
  {
    std::string header;
    for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
    if (header != kContourCsvHeader)
      throw DataError("contour CSV header mismatch, expected '" + std::string(kContourCsvHeader) +
                      "', got '" + header + "'");
  }

  // (patient, slice) -> contour_id -> contour, preserving first-appearance order
  std::map<std::pair<std::string, int>, std::vector<std::pair<long, Contour>>> grouped;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = "row " + std::to_string(r + 1);
    if (row.size() != 7)
      throw DataError("contour CSV " + where + ": expected 7 fields, got " + std::to_string(row.size()));
    const std::string& patient = row[0];
    int slice = static_cast<int>(parse_long(row[1], where + " slice_index"));
    auto zone = zone_from_token(row[2]);
    if (!zone) throw DataError("contour CSV " + where + ": unknown zone token '" + row[2] + "'");
    long contour_id = parse_long(row[3], where + " contour_id");
    parse_long(row[4], where + " vertex_index");  // validated, order is file order
    long x = parse_long(row[5], where + " x");
    long y = parse_long(row[6], where + " y");
    if (x < 0 || x >= kGridSize || y < 0 || y >= kGridSize)
      throw DataError("contour CSV " + where + ": coordinate (" + std::to_string(x) + "," +
                      std::to_string(y) + ") outside the 256x256 grid");

    auto& contours = grouped[{patient, slice}];
    auto it = std::find_if(contours.begin(), contours.end(),
                           [&](const auto& p) { return p.first == contour_id; });
    if (it == contours.end()) {
      contours.push_back({contour_id, Contour{*zone, {}}});
      it = std::prev(contours.end());
    } else if (it->second.zone != *zone) {
      throw DataError("contour CSV " + where + ": contour " + std::to_string(contour_id) +
                      " changes zone mid-file");
    }
    it->second.vertices.emplace_back(static_cast<int>(x), static_cast<int>(y));
  }

  std::vector<ContourSet> out;
  for (auto& [key, contours] : grouped) {
    ContourSet cs;
    cs.patient_id = key.first;
    cs.slice_index = key.second;
    for (auto& [id, c] : contours) {
      if (c.vertices.size() < 3)
        throw DataError("contour " + std::to_string(id) + " of " + key.first + " slice " +
                        std::to_string(key.second) + " has fewer than 3 vertices");
      cs.contours.push_back(std::move(c));
    }
    out.push_back(std::move(cs));
  }
  return out;  // std::map iteration is already (patient_id, slice_index) sorted
}

// ---------------------------------------------------------------------------
// load_slices

namespace detail {

inline bool has_png_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8];
  if (!in.read(reinterpret_cast<char*>(sig), 8)) return false;
  return png_sig_cmp(sig, 0, 8) == 0;
}

/// Parses `<patient>_<slice>` stems, e.g. "P03_12" -> ("P03", 12).
inline bool parse_stem_identity(const std::string& stem, std::string& patient, int& slice) {
  auto pos = stem.rfind('_');
  if (pos == std::string::npos || pos == 0 || pos + 1 >= stem.size()) return false;
  const std::string tail = stem.substr(pos + 1);
  for (char c : tail)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  patient = stem.substr(0, pos);
  slice = std::stoi(tail);
  return true;
}

inline SliceImage normalize_to_grid(std::vector<float> raw, int w, int h, std::string patient, int slice) {
  if (w != kGridSize || h != kGridSize) raw = resize_bilinear(raw, w, h, kGridSize, kGridSize);
  float lo = raw[0], hi = raw[0];
  for (float v : raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  SliceImage s;
  s.patient_id = std::move(patient);
  s.slice_index = slice;
  s.pixels.resize(raw.size());
  if (hi > lo) {
    const float inv = 1.0f / (hi - lo);
    for (std::size_t i = 0; i < raw.size(); ++i) s.pixels[i] = (raw[i] - lo) * inv;
  }
  // constant-intensity slice: min-max is degenerate, maps to all zeros
  return s;
}

}  // namespace detail

/// Loads every slice file in `directory` (PNG or uncompressed DICOM),
/// resizes to 256x256 and min-max normalizes intensities to [0,1].
/// Result is sorted by (patient_id, slice_index).
inline std::vector<SliceImage> load_slices(const std::filesystem::path& directory) {
  if (!std::filesystem::is_directory(directory))
    throw DataError("slice directory does not exist: " + directory.string());

  std::vector<std::string> files;
  for (const auto& de : std::filesystem::directory_iterator(directory))
    if (de.is_regular_file()) files.push_back(de.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("slice directory is empty: " + directory.string());

  std::vector<SliceImage> slices;
  std::vector<std::string> bad;
  for (const auto& f : files) {
    try {
      const std::string stem = std::filesystem::path(f).stem().string();
      if (has_dicom_magic(f)) {
        DicomSlice d = read_dicom(f);
        std::string patient = d.patient_id;
        int slice = static_cast<int>(d.instance_number);
        if (patient.empty() || d.instance_number < 0) {
          if (!detail::parse_stem_identity(stem, patient, slice)) {
            patient = patient.empty() ? stem : patient;
            slice = std::max(0, slice);
          }
        }
        slices.push_back(detail::normalize_to_grid(std::move(d.pixels), d.cols, d.rows, patient, slice));
      } else if (detail::has_png_magic(f)) {
        std::string patient;
        int slice = 0;
        if (!detail::parse_stem_identity(stem, patient, slice))
          throw DataError("cannot derive (patient, slice) from filename: " + f);
        Image8 img = read_png_gray8(f);
        std::vector<float> raw(img.pixels.begin(), img.pixels.end());
        slices.push_back(detail::normalize_to_grid(std::move(raw), img.width, img.height, patient, slice));
      } else {
        throw DataError("unrecognized slice format: " + f);
      }
    } catch (const Error& e) {
      bad.push_back(e.what());
    }
  }
  if (!bad.empty()) {
    std::string msg = "failed to decode " + std::to_string(bad.size()) + " slice file(s):";
    for (const auto& b : bad) msg += "\n  " + b;
    throw DataError(msg);
  }

  std::sort(slices.begin(), slices.end(), [](const SliceImage& a, const SliceImage& b) {
    return std::tie(a.patient_id, a.slice_index) < std::tie(b.patient_id, b.slice_index);
  });
  return slices;
}

// ---------------------------------------------------------------------------
// manifest persistence

inline const char* kManifestCsvHeader = "patient_id,slice_index,image_path,mask_path,provenance,transform_id";

inline void validate_manifest(const DatasetManifest& m) {
  std::set<std::tuple<std::string, int, int>> keys;  // transform_id 0 == ORIGINAL
  std::set<std::pair<std::string, int>> originals;
  for (const auto& e : m.entries)
    if (e.provenance == Provenance::ORIGINAL) originals.insert({e.patient_id, e.slice_index});
  for (const auto& e : m.entries) {
    auto key = std::make_tuple(e.patient_id, e.slice_index, e.transform_id);
    if (!keys.insert(key).second)
      throw DataError("duplicate manifest entry: " + e.patient_id + " slice " +
                      std::to_string(e.slice_index) + " transform " + std::to_string(e.transform_id));
    if (e.provenance == Provenance::AUGMENTED && !originals.count({e.patient_id, e.slice_index}))
      throw DataError("augmented manifest entry without original: " + e.patient_id + " slice " +
                      std::to_string(e.slice_index));
  }
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << kManifestCsvHeader << "\n";
  for (const auto& e : m.entries) {
    out << e.patient_id << ',' << e.slice_index << ',' << e.image_path << ',' << e.mask_path << ','
        << (e.provenance == Provenance::ORIGINAL ? "ORIGINAL" : "AUGMENTED") << ',';
    if (e.provenance == Provenance::AUGMENTED) out << e.transform_id;
    out << "\n";
  }
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  auto rows = read_csv(path.string());
  if (rows.empty()) throw DataError("manifest is empty: " + path.string());
  {
    std::string header;
    for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
    if (header != kManifestCsvHeader)
      throw DataError("manifest header mismatch in " + path.string());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 5) throw DataError("manifest row " + std::to_string(r + 1) + " is malformed");
    ManifestEntry e;
    e.patient_id = row[0];
    e.slice_index = static_cast<int>(parse_long(row[1], "manifest slice_index"));
    e.image_path = row[2];
    e.mask_path = row[3];
    if (row[4] == "ORIGINAL") {
      e.provenance = Provenance::ORIGINAL;
    } else if (row[4] == "AUGMENTED") {
      e.provenance = Provenance::AUGMENTED;
      if (row.size() < 6 || row[5].empty())
        throw DataError("manifest row " + std::to_string(r + 1) + ": AUGMENTED entry lacks transform_id");
      e.transform_id = static_cast<int>(parse_long(row[5], "manifest transform_id"));
    } else {
      throw DataError("manifest row " + std::to_string(r + 1) + ": unknown provenance '" + row[4] + "'");
    }
    m.entries.push_back(std::move(e));
  }
  validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------
// build_dataset

inline Image8 slice_to_image8(const SliceImage& s) {
  Image8 img(s.width, s.height);
  for (std::size_t i = 0; i < s.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.pixels[i], 0.0f, 1.0f) * 255.0f));
  return img;
}

inline Image8 mask_to_image8(const LabelMap& m) {
  Image8 img(m.width, m.height);
  img.pixels.assign(m.classes.begin(), m.classes.end());
  return img;
}

inline LabelMap mask_from_image8(const Image8& img, std::string patient = "", int slice = 0) {
  LabelMap m(img.width, img.height);
  m.patient_id = std::move(patient);
  m.slice_index = slice;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (img.pixels[i] >= kNumClasses)
      throw DataError("mask pixel value " + std::to_string(img.pixels[i]) + " is not a zone label");
    m.classes[i] = img.pixels[i];
  }
  return m;
}

/// Persists aligned (slice, mask) pairs under `out_dir` in the standard
/// layout (images/, masks/, manifest.csv) and returns the ORIGINAL manifest.
inline DatasetManifest build_dataset(const std::vector<SliceImage>& slices,
                                     const std::vector<LabelMap>& masks,
                                     const std::filesystem::path& out_dir) {
  std::map<std::pair<std::string, int>, const LabelMap*> mask_by_key;
  for (const auto& m : masks) mask_by_key[{m.patient_id, m.slice_index}] = &m;

  std::vector<std::string> orphans;
  std::set<std::pair<std::string, int>> slice_keys;
  for (const auto& s : slices) {
    slice_keys.insert({s.patient_id, s.slice_index});
    if (!mask_by_key.count({s.patient_id, s.slice_index}))
      orphans.push_back("slice without mask: " + s.patient_id + "/" + std::to_string(s.slice_index));
  }
  for (const auto& m : masks)
    if (!slice_keys.count({m.patient_id, m.slice_index}))
      orphans.push_back("mask without slice: " + m.patient_id + "/" + std::to_string(m.slice_index));
  if (!orphans.empty()) {
    std::string msg = "slice/mask pairing failed:";
    for (const auto& o : orphans) msg += "\n  " + o;
    throw DataError(msg);
  }

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");
  DatasetManifest manifest;
  manifest.root = out_dir;
  for (const auto& s : slices) {
    const std::string name = s.patient_id + "_" + std::to_string(s.slice_index) + ".png";
    write_png_gray8((out_dir / "images" / name).string(), slice_to_image8(s));
    write_png_gray8((out_dir / "masks" / name).string(),
                    mask_to_image8(*mask_by_key[{s.patient_id, s.slice_index}]));
    manifest.entries.push_back(
        {s.patient_id, s.slice_index, "images/" + name, "masks/" + name, Provenance::ORIGINAL, 0});
  }
  validate_manifest(manifest);
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

/// Loads the (image, mask) pair behind one manifest entry. Dataset images
/// are stored already normalized; intensities are mapped back by /255.
inline Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& e) {
  Sample s;
  Image8 img = read_png_gray8(manifest.image_file(e).string());
  if (img.width != kGridSize || img.height != kGridSize)
    throw DataError("dataset image is not 256x256: " + manifest.image_file(e).string());
  s.image.patient_id = e.patient_id;
  s.image.slice_index = e.slice_index;
  s.image.pixels.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    s.image.pixels[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  s.mask = mask_from_image8(read_png_gray8(manifest.mask_file(e).string()), e.patient_id, e.slice_index);
  return s;
}

// ---------------------------------------------------------------------------
// split_by_patient

/// Shuffles patients deterministically by `seed` and assigns the smallest
/// patient prefix whose image count reaches `train_fraction` of the total to
/// the train split (capped so at least one patient is always held out).
/// Augmented entries follow their original's patient.
inline std::pair<DatasetManifest, DatasetManifest> split_by_patient(const DatasetManifest& manifest,
                                                                    double train_fraction,
                                                                    std::uint64_t seed) {
  if (manifest.entries.empty()) throw DataError("cannot split an empty manifest");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0,1)");

  std::vector<std::string> patients = manifest.patient_ids();
  if (patients.size() < 2)
    throw DataError("cannot isolate a test patient: dataset has " +
                    std::to_string(patients.size()) + " patient(s)");

  std::map<std::string, std::size_t> count;
  for (const auto& e : manifest.entries) ++count[e.patient_id];

  Rng rng(seed);
  rng.shuffle(patients);

  const double want = train_fraction * static_cast<double>(manifest.entries.size());
  std::set<std::string> train_patients;
  std::size_t acc = 0;
  for (std::size_t i = 0; i < patients.size() - 1; ++i) {  // always hold out >= 1 patient
    if (static_cast<double>(acc) >= want) break;
    train_patients.insert(patients[i]);
    acc += count[patients[i]];
  }
  if (train_patients.empty()) train_patients.insert(patients[0]);

  DatasetManifest train, test;
  train.root = test.root = manifest.root;
  train.seed = test.seed = manifest.seed;
  for (const auto& e : manifest.entries)
    (train_patients.count(e.patient_id) ? train : test).entries.push_back(e);
  return {train, test};
}

// ---------------------------------------------------------------------------
// synth_generate

namespace detail {

inline std::vector<std::pair<int, int>> noisy_ellipse_polygon(Rng& rng, double cx, double cy,
                                                              double rx, double ry,
                                                              double noise, int n_vertices) {
  std::vector<std::pair<int, int>> poly;
  for (int k = 0; k < n_vertices; ++k) {
    double theta = 2.0 * 3.14159265358979323846 * k / n_vertices;
    double wobble = 1.0 + noise * (2.0 * rng.uniform() - 1.0);
    int x = static_cast<int>(std::lround(cx + rx * wobble * std::cos(theta)));
    int y = static_cast<int>(std::lround(cy + ry * wobble * std::sin(theta)));
    x = std::clamp(x, 0, kGridSize - 1);
    y = std::clamp(y, 0, kGridSize - 1);
    if (poly.empty() || poly.back() != std::make_pair(x, y)) poly.emplace_back(x, y);
  }
  while (poly.size() > 1 && poly.front() == poly.back()) poly.pop_back();
  return poly;
}

inline ContourSet synth_contours(std::uint64_t seed, const std::string& patient, int slice) {
  Rng rng(splitmix64(seed) ^ splitmix64(fnv1a(patient) + static_cast<std::uint64_t>(slice) * 0x9e37ULL));
  ContourSet cs;
  cs.patient_id = patient;
  cs.slice_index = slice;

  const double cx = 128 + rng.range_int(-8, 8);
  const double cy = 128 + rng.range_int(-8, 8);

  // CZ is the outer gland ellipse; PZ sits concentrically inside it and wins
  // on precedence, leaving a CZ rim. TZ is a smaller offset ellipse, TUM an
  // occasional small blob; both override the zones beneath them.
  Contour cz{ZoneLabel::CZ,
             noisy_ellipse_polygon(rng, cx, cy, 68 + rng.range_int(-6, 6), 56 + rng.range_int(-6, 6), 0.05, 24)};
  Contour pz{ZoneLabel::PZ,
             noisy_ellipse_polygon(rng, cx + rng.range_int(-6, 6), cy + rng.range_int(-6, 6),
                                   40 + rng.range_int(-4, 4), 32 + rng.range_int(-4, 4), 0.07, 24)};
  int tz_dx = (rng.bernoulli(0.5) ? 1 : -1) * rng.range_int(22, 30);
  int tz_dy = (rng.bernoulli(0.5) ? 1 : -1) * rng.range_int(10, 18);
  Contour tz{ZoneLabel::TZ,
             noisy_ellipse_polygon(rng, cx + tz_dx, cy + tz_dy, 20 + rng.range_int(-3, 3),
                                   15 + rng.range_int(-3, 3), 0.08, 20)};
  cs.contours = {cz, pz, tz};

  if (rng.bernoulli(0.4)) {  // sporadic tumor
    int tum_dx = (rng.bernoulli(0.5) ? 1 : -1) * rng.range_int(18, 34);
    int tum_dy = (rng.bernoulli(0.5) ? 1 : -1) * rng.range_int(8, 22);
    cs.contours.push_back({ZoneLabel::TUM,
                           noisy_ellipse_polygon(rng, cx + tum_dx, cy + tum_dy, 8 + rng.range_int(0, 4),
                                                 7 + rng.range_int(0, 3), 0.10, 12)});
  }
  return cs;
}

inline Image8 synth_render(std::uint64_t seed, const std::string& patient, int slice, const LabelMap& mask) {
  Rng rng(splitmix64(seed ^ 0x5161u) ^
          splitmix64(fnv1a(patient) + static_cast<std::uint64_t>(slice) * 0x7f4aULL));
  static const int base[kNumClasses] = {30, 115, 165, 205, 245};
  Image8 img(kGridSize, kGridSize);
  for (int y = 0; y < kGridSize; ++y) {
    for (int x = 0; x < kGridSize; ++x) {
      int v = base[mask.at(x, y)] + rng.range_int(-14, 14) + (x + y) / 64;
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }
  }
  return img;
}

}  // namespace detail

/// Writes a deterministic synthetic dataset (images/, masks/, contours.csv,
/// manifest.csv) under `out_dir`. Re-ingesting the emitted CSV through
/// parse_contours + rasterize reproduces the emitted masks exactly.
inline DatasetManifest synth_generate(int n_patients, int slices_per_patient, std::uint64_t seed,
                                      const std::filesystem::path& out_dir) {
  if (n_patients < 2)
    throw DataError("synthetic generator needs at least 2 patients (downstream split holds one out)");
  if (slices_per_patient < 1) throw DataError("slices_per_patient must be >= 1");

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");

  std::ofstream csv(out_dir / "contours.csv");
  if (!csv) throw DataError("cannot write contours CSV under " + out_dir.string());
  csv << kContourCsvHeader << "\n";

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.seed = seed;
  for (int p = 0; p < n_patients; ++p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "P%02d", p + 1);
    const std::string patient = buf;
    for (int s = 0; s < slices_per_patient; ++s) {
      ContourSet cs = detail::synth_contours(seed, patient, s);
      for (std::size_t ci = 0; ci < cs.contours.size(); ++ci)
        for (std::size_t vi = 0; vi < cs.contours[ci].vertices.size(); ++vi)
          csv << patient << ',' << s << ',' << zone_name(cs.contours[ci].zone) << ',' << ci << ','
              << vi << ',' << cs.contours[ci].vertices[vi].first << ','
              << cs.contours[ci].vertices[vi].second << "\n";

      LabelMap mask = rasterize(cs);
      Image8 img = detail::synth_render(seed, patient, s, mask);
      const std::string name = patient + "_" + std::to_string(s) + ".png";
      write_png_gray8((out_dir / "images" / name).string(), img);
      write_png_gray8((out_dir / "masks" / name).string(), mask_to_image8(mask));
      manifest.entries.push_back({patient, s, "images/" + name, "masks/" + name, Provenance::ORIGINAL, 0});
    }
  }
  validate_manifest(manifest);
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace prostseg
