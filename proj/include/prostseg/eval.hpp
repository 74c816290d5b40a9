#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prostseg/csv.hpp"
#include "prostseg/error.hpp"
#include "prostseg/ingest.hpp"
#include "prostseg/models.hpp"
#include "prostseg/nn/tensor.hpp"

namespace prostseg {

using ImageKey = std::pair<std::string, int>;  // (patient_id, slice_index)

// ---------------------------------------------------------------------------
// per-class overlap metrics

struct ClassMetrics {
  std::optional<double> dsc;  // empty == ABSENT (class in neither map)
  std::optional<double> jac;
};

/// Dice coefficient of class `c`: 2|P∩G| / (|P|+|G|). ABSENT when the class
/// occurs in neither prediction nor ground truth.
inline std::optional<double> dice(const LabelMap& pred, const LabelMap& gt, ZoneLabel c) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ShapeError("dice: label map shapes differ");
  const auto v = static_cast<std::uint8_t>(c);
  std::size_t p = 0, g = 0, i = 0;
  for (std::size_t k = 0; k < pred.classes.size(); ++k) {
    const bool in_p = pred.classes[k] == v, in_g = gt.classes[k] == v;
    p += in_p;
    g += in_g;
    i += in_p && in_g;
  }
  if (p == 0 && g == 0) return std::nullopt;
  return 2.0 * static_cast<double>(i) / static_cast<double>(p + g);
}

/// Jaccard index (IoU) of class `c`: |P∩G| / |P∪G|, ABSENT when both empty.
inline std::optional<double> jaccard(const LabelMap& pred, const LabelMap& gt, ZoneLabel c) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ShapeError("jaccard: label map shapes differ");
  const auto v = static_cast<std::uint8_t>(c);
  std::size_t p = 0, g = 0, i = 0;
  for (std::size_t k = 0; k < pred.classes.size(); ++k) {
    const bool in_p = pred.classes[k] == v, in_g = gt.classes[k] == v;
    p += in_p;
    g += in_g;
    i += in_p && in_g;
  }
  if (p == 0 && g == 0) return std::nullopt;
  return static_cast<double>(i) / static_cast<double>(p + g - i);
}

/// Mean over all pixels and channels of squared differences; symmetric in
/// its arguments. Computed on predicted probabilities vs one-hot truth.
template <typename T>
double mse(const nn::Tensor<T>& pred, const nn::Tensor<T>& gt) {
  nn::check_same_shape(pred, gt, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// per-image records

struct MetricsRecord {
  std::string model_name;
  ImageKey image_key;
  std::array<ClassMetrics, kNumClasses> per_class;  // indexed by ZoneLabel, BG included
  double mse = 0.0;
  double mean_dsc = std::numeric_limits<double>::quiet_NaN();  // over present prostate zones
  double mean_jac = std::numeric_limits<double>::quiet_NaN();
};

inline const std::array<ZoneLabel, 4> kProstateZones = {ZoneLabel::CZ, ZoneLabel::PZ, ZoneLabel::TZ,
                                                        ZoneLabel::TUM};

inline MetricsRecord make_metrics_record(std::string model_name, const LabelMap& pred,
                                         const LabelMap& gt, double image_mse) {
  MetricsRecord rec;
  rec.model_name = std::move(model_name);
  rec.image_key = {gt.patient_id, gt.slice_index};
  rec.mse = image_mse;
  for (int c = 0; c < kNumClasses; ++c) {
    rec.per_class[c].dsc = dice(pred, gt, static_cast<ZoneLabel>(c));
    rec.per_class[c].jac = jaccard(pred, gt, static_cast<ZoneLabel>(c));
  }
  double dsum = 0, jsum = 0;
  int present = 0;
  for (ZoneLabel z : kProstateZones) {
    const auto& cm = rec.per_class[static_cast<int>(z)];
    if (cm.dsc) {
      dsum += *cm.dsc;
      jsum += *cm.jac;
      ++present;
    }
  }
  if (present > 0) {
    rec.mean_dsc = dsum / present;
    rec.mean_jac = jsum / present;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// model evaluation

/// Per-pixel argmax with deterministic tie-break toward the lowest class.
template <typename T>
LabelMap argmax_labelmap(const nn::Tensor<T>& probs, int batch_index, std::string patient_id,
                         int slice_index) {
  LabelMap m(probs.w, probs.h);
  m.patient_id = std::move(patient_id);
  m.slice_index = slice_index;
  for (int y = 0; y < probs.h; ++y)
    for (int x = 0; x < probs.w; ++x) {
      const T* row = &probs.at(batch_index, y, x, 0);
      int best = 0;
      for (int c = 1; c < probs.c; ++c)
        if (row[c] > row[best]) best = c;
      m.at(x, y) = static_cast<std::uint8_t>(best);
    }
  return m;
}

template <typename T>
nn::Tensor<T> one_hot_tensor(const LabelMap& mask) {
  nn::Tensor<T> t(1, mask.height, mask.width, kNumClasses);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) t.at(0, y, x, mask.at(x, y)) = T{1};
  return t;
}

struct EvalResult {
  std::vector<MetricsRecord> records;
  std::map<ImageKey, LabelMap> predictions;
};

/// Evaluates any forward function (batch of images -> batch of per-pixel
/// probabilities) over a test manifest: per-class DSC/JAC on argmax label
/// maps, MSE on the probability maps.
template <typename T, typename ForwardFn>
EvalResult evaluate_forward(ForwardFn&& forward, const DatasetManifest& test,
                            const std::string& model_name, int eval_batch = 4) {
  if (test.entries.empty()) throw DataError("cannot evaluate on an empty test set");
  EvalResult result;
  for (std::size_t start = 0; start < test.entries.size();
       start += static_cast<std::size_t>(eval_batch)) {
    const std::size_t n = std::min<std::size_t>(eval_batch, test.entries.size() - start);
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < n; ++i) samples.push_back(load_sample(test, test.entries[start + i]));

    const int H = samples[0].mask.height, W = samples[0].mask.width;
    nn::Tensor<T> batch(static_cast<int>(n), H, W, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          batch.at(static_cast<int>(i), y, x, 0) = static_cast<T>(samples[i].image.at(x, y));

    nn::Tensor<T> probs = forward(batch);
    if (probs.n != static_cast<int>(n) || probs.h != H || probs.w != W || probs.c != kNumClasses)
      throw ShapeError("evaluate: forward returned " + probs.shape_str());

    for (std::size_t i = 0; i < n; ++i) {
      const Sample& s = samples[i];
      LabelMap pred = argmax_labelmap(probs, static_cast<int>(i), s.mask.patient_id, s.mask.slice_index);
      nn::Tensor<T> probs_i(1, H, W, kNumClasses);
      std::copy_n(probs.data.begin() + static_cast<std::ptrdiff_t>(i) * H * W * kNumClasses,
                  static_cast<std::ptrdiff_t>(H) * W * kNumClasses, probs_i.data.begin());
      const double image_mse = mse(probs_i, one_hot_tensor<T>(s.mask));
      result.records.push_back(make_metrics_record(model_name, pred, s.mask, image_mse));
      result.predictions.emplace(ImageKey{s.mask.patient_id, s.mask.slice_index}, std::move(pred));
    }
  }
  return result;
}

template <typename T>
EvalResult evaluate_model(const Model<T>& model, const DatasetManifest& test,
                          std::string model_name = {}) {
  if (model_name.empty()) model_name = architecture_name(model.config().architecture);
  return evaluate_forward<T>([&](const nn::Tensor<T>& batch) { return model.forward(batch); }, test,
                             model_name);
}

// ---------------------------------------------------------------------------
// summary table

struct SummaryRow {
  std::string model;
  double mean_dsc = 0, mean_jac = 0, mean_mse = 0;
  bool best_dsc = false, best_jac = false, best_mse = false;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;            // fixed model order
  std::vector<std::string> tie_notes;      // human-readable tie annotations
};

/// Canonical row order: the six architectures in their declared order, then
/// anything else alphabetically.
inline std::pair<int, std::string> model_order_key(const std::string& name) {
  for (std::size_t i = 0; i < kAllArchitectures.size(); ++i)
    if (name == architecture_name(kAllArchitectures[i])) return {static_cast<int>(i), name};
  return {static_cast<int>(kAllArchitectures.size()), name};
}

inline SummaryTable summarize(const std::vector<std::vector<MetricsRecord>>& per_model) {
  if (per_model.empty()) throw EvalError("summarize: no model records");

  auto key_set = [](const std::vector<MetricsRecord>& recs) {
    std::vector<ImageKey> keys;
    for (const auto& r : recs) keys.push_back(r.image_key);
    std::sort(keys.begin(), keys.end());
    return keys;
  };
  const auto reference_keys = key_set(per_model[0]);
  for (const auto& recs : per_model) {
    if (recs.empty()) throw EvalError("summarize: a model has no records");
    if (key_set(recs) != reference_keys)
      throw EvalError("summarize: models were evaluated on different test sets");
  }

  SummaryTable table;
  for (const auto& recs : per_model) {
    SummaryRow row;
    row.model = recs[0].model_name;
    double dsum = 0, jsum = 0, msum = 0;
    std::size_t dn = 0;
    for (const auto& r : recs) {
      if (!std::isnan(r.mean_dsc)) {
        dsum += r.mean_dsc;
        jsum += r.mean_jac;
        ++dn;
      }
      msum += r.mse;
    }
    row.mean_dsc = dn ? dsum / static_cast<double>(dn) : 0.0;
    row.mean_jac = dn ? jsum / static_cast<double>(dn) : 0.0;
    row.mean_mse = msum / static_cast<double>(recs.size());
    table.rows.push_back(row);
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return model_order_key(a.model) < model_order_key(b.model);
  });

  auto flag_best = [&](auto member, bool maximize, bool SummaryRow::* flag, const char* what) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < table.rows.size(); ++i) {
      const double v = table.rows[i].*member, bv = table.rows[best].*member;
      if (maximize ? v > bv : v < bv) best = i;
    }
    table.rows[best].*flag = true;  // ties keep the earlier row in fixed order
    for (std::size_t i = 0; i < table.rows.size(); ++i)
      if (i != best && table.rows[i].*member == table.rows[best].*member)
        table.tie_notes.push_back(std::string(what) + " tie between " + table.rows[best].model +
                                  " and " + table.rows[i].model + "; flag on " +
                                  table.rows[best].model);
  };
  flag_best(&SummaryRow::mean_dsc, true, &SummaryRow::best_dsc, "DSC");
  flag_best(&SummaryRow::mean_jac, true, &SummaryRow::best_jac, "JAC");
  flag_best(&SummaryRow::mean_mse, false, &SummaryRow::best_mse, "MSE");
  return table;
}

inline std::string render_summary_text(const SummaryTable& table) {
  std::string out;
  out += "Model                   DSC (up)   JAC (up)   MSE (down)\n";
  out += "-------------------------------------------------------\n";
  for (const auto& r : table.rows) {
    std::string display = r.model;
    if (auto a = architecture_from_name(r.model)) display = architecture_display_name(*a);
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %8.3f%s %8.3f%s %10.4f%s\n", display.c_str(),
                  r.mean_dsc, r.best_dsc ? "*" : " ", r.mean_jac, r.best_jac ? "*" : " ",
                  r.mean_mse, r.best_mse ? "*" : " ");
    out += line;
  }
  out += "(* best per column)\n";
  for (const auto& note : table.tie_notes) out += "note: " + note + "\n";
  return out;
}

inline void write_summary_csv(const SummaryTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write summary CSV: " + path.string());
  out << "model,mean_dsc,mean_jac,mean_mse,best_dsc,best_jac,best_mse\n";
  for (const auto& r : table.rows)
    out << r.model << ',' << format_fixed(r.mean_dsc) << ',' << format_fixed(r.mean_jac) << ','
        << format_fixed(r.mean_mse) << ',' << (r.best_dsc ? 1 : 0) << ',' << (r.best_jac ? 1 : 0)
        << ',' << (r.best_mse ? 1 : 0) << "\n";
}

// ---------------------------------------------------------------------------
// box-plot export

struct Quartiles {
  double q1 = 0, median = 0, q3 = 0;
};

/// Midpoint (Tukey hinge) convention: the median halves include the middle
/// element when the count is odd; e.g. {0.2,0.4,0.6} -> (0.3, 0.4, 0.5).
inline Quartiles quartiles_midpoint(std::vector<double> v) {
  if (v.empty()) throw EvalError("quartiles of an empty set");
  std::sort(v.begin(), v.end());
  auto median_of = [&](std::size_t lo, std::size_t hi) {  // half-open [lo, hi)
    const std::size_t n = hi - lo;
    return n % 2 == 1 ? v[lo + n / 2] : 0.5 * (v[lo + n / 2 - 1] + v[lo + n / 2]);
  };
  const std::size_t n = v.size();
  Quartiles q;
  q.median = median_of(0, n);
  if (n == 1) {
    q.q1 = q.q3 = v[0];
  } else {
    q.q1 = median_of(0, (n + 1) / 2);  // lower half, middle element included when odd
    q.q3 = median_of(n / 2, n);
  }
  return q;
}

/// Long-format Jaccard export: one dot row per (model, class, image) with a
/// present value, plus one quartile summary row per (model, class).
inline void boxplot_export(const std::vector<std::vector<MetricsRecord>>& per_model,
                           const std::filesystem::path& path) {
  std::size_t total = 0;
  for (const auto& g : per_model) total += g.size();
  if (total == 0) throw EvalError("boxplot export needs at least one record");

  std::vector<const std::vector<MetricsRecord>*> groups;
  for (const auto& g : per_model) groups.push_back(&g);
  std::sort(groups.begin(), groups.end(), [](const auto* a, const auto* b) {
    return model_order_key(a->empty() ? "" : (*a)[0].model_name) <
           model_order_key(b->empty() ? "" : (*b)[0].model_name);
  });

  std::ofstream out(path);
  if (!out) throw EvalError("cannot write boxplot CSV: " + path.string());
  out << "# quartile_convention: midpoint (Tukey hinges)\n";
  out << "kind,model,class,patient_id,slice_index,jac,q1,median,q3\n";

  for (const auto* g : groups) {
    std::vector<MetricsRecord> recs = *g;
    std::sort(recs.begin(), recs.end(),
              [](const MetricsRecord& a, const MetricsRecord& b) { return a.image_key < b.image_key; });
    for (int c = 0; c < kNumClasses; ++c)
      for (const auto& r : recs)
        if (r.per_class[c].jac)
          out << "dot," << r.model_name << ',' << zone_name(static_cast<ZoneLabel>(c)) << ','
              << r.image_key.first << ',' << r.image_key.second << ','
              << format_fixed(*r.per_class[c].jac) << ",,,\n";
  }
  for (const auto* g : groups) {
    for (int c = 0; c < kNumClasses; ++c) {
      std::vector<double> values;
      for (const auto& r : *g)
        if (r.per_class[c].jac) values.push_back(*r.per_class[c].jac);
      if (values.empty()) continue;
      const Quartiles q = quartiles_midpoint(values);
      out << "summary," << (*g)[0].model_name << ',' << zone_name(static_cast<ZoneLabel>(c))
          << ",,,," << format_fixed(q.q1) << ',' << format_fixed(q.median) << ','
          << format_fixed(q.q3) << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// qualitative triptych

struct TriptychSelection {
  ImageKey worst, average, best;
};

/// Worst / average / best test images by the reference model's per-image
/// mean Jaccard. Average = closest to the dataset mean. Ties resolve by
/// lexicographic image key, and the three picks are always distinct.
inline TriptychSelection select_triptych(const std::vector<MetricsRecord>& records) {
  if (records.size() < 3)
    throw EvalError("triptych selection needs at least 3 records, got " +
                    std::to_string(records.size()));
  std::vector<const MetricsRecord*> pool;
  for (const auto& r : records) pool.push_back(&r);

  double mean = 0;
  for (const auto* r : pool) mean += r->mean_jac;
  mean /= static_cast<double>(pool.size());

  auto take = [&pool](auto&& less) {
    auto it = std::min_element(pool.begin(), pool.end(), less);
    const MetricsRecord* r = *it;
    pool.erase(it);
    return r->image_key;
  };

  TriptychSelection sel;
  sel.worst = take([](const MetricsRecord* a, const MetricsRecord* b) {
    return std::tie(a->mean_jac, a->image_key) < std::tie(b->mean_jac, b->image_key);
  });
  sel.best = take([](const MetricsRecord* a, const MetricsRecord* b) {
    if (a->mean_jac != b->mean_jac) return a->mean_jac > b->mean_jac;
    return a->image_key < b->image_key;
  });
  sel.average = take([mean](const MetricsRecord* a, const MetricsRecord* b) {
    const double da = std::abs(a->mean_jac - mean), db = std::abs(b->mean_jac - mean);
    return std::tie(da, a->image_key) < std::tie(db, b->image_key);
  });
  return sel;
}

/// Fixed color legend: BG black, CZ blue, PZ green, TZ yellow, TUM red.
inline std::array<std::uint8_t, 3> zone_color(ZoneLabel z) {
  switch (z) {
    case ZoneLabel::BG: return {0, 0, 0};
    case ZoneLabel::CZ: return {0, 0, 255};
    case ZoneLabel::PZ: return {0, 255, 0};
    case ZoneLabel::TZ: return {255, 255, 0};
    case ZoneLabel::TUM: return {255, 0, 0};
  }
  return {255, 255, 255};
}

inline ImageRGB8 colorize_mask(const LabelMap& mask) {
  ImageRGB8 img(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      auto rgb = zone_color(static_cast<ZoneLabel>(mask.at(x, y)));
      img.set(x, y, rgb[0], rgb[1], rgb[2]);
    }
  return img;
}

/// Side-by-side panels for one image: input, ground-truth mask, one
/// prediction per model (in the given order), separated by white gutters.
inline ImageRGB8 compose_panels(const SliceImage& input, const LabelMap& gt,
                                const std::vector<const LabelMap*>& predictions) {
  const int gutter = 2;
  const int panels = 2 + static_cast<int>(predictions.size());
  ImageRGB8 out(panels * input.width + (panels - 1) * gutter, input.height);
  std::fill(out.pixels.begin(), out.pixels.end(), std::uint8_t{255});

  auto blit_mask = [&](const LabelMap& m, int x_off) {
    ImageRGB8 p = colorize_mask(m);
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) {
        const std::uint8_t* src = &p.pixels[(static_cast<std::size_t>(y) * p.width + x) * 3];
        out.set(x_off + x, y, src[0], src[1], src[2]);
      }
  };
  for (int y = 0; y < input.height; ++y)
    for (int x = 0; x < input.width; ++x) {
      const auto v =
          static_cast<std::uint8_t>(std::lround(std::clamp(input.at(x, y), 0.0f, 1.0f) * 255.0f));
      out.set(x, y, v, v, v);
    }
  blit_mask(gt, input.width + gutter);
  for (std::size_t i = 0; i < predictions.size(); ++i)
    blit_mask(*predictions[i], (static_cast<int>(i) + 2) * (input.width + gutter));
  return out;
}

/// Writes triptych_{worst,average,best}.png plus triptych.json under
/// `out_dir`. `per_model_predictions` must be given in the desired panel
/// order.
inline void render_triptych(const DatasetManifest& test,
                            const std::vector<std::pair<std::string, const std::map<ImageKey, LabelMap>*>>&
                                per_model_predictions,
                            const TriptychSelection& sel, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json manifest_json;
  manifest_json["legend"] = {{"BG", "black"}, {"CZ", "blue"}, {"PZ", "green"},
                             {"TZ", "yellow"}, {"TUM", "red"}};
  std::vector<std::string> model_names;
  for (const auto& [name, _] : per_model_predictions) model_names.push_back(name);
  manifest_json["models"] = model_names;

  const std::array<std::pair<const char*, const ImageKey*>, 3> picks = {
      std::make_pair("worst", &sel.worst), std::make_pair("average", &sel.average),
      std::make_pair("best", &sel.best)};
  for (const auto& [label, key] : picks) {
    const ManifestEntry* entry = nullptr;
    for (const auto& e : test.entries)
      if (e.provenance == Provenance::ORIGINAL && e.patient_id == key->first &&
          e.slice_index == key->second)
        entry = &e;
    if (!entry)
      throw EvalError("triptych image " + key->first + "/" + std::to_string(key->second) +
                      " is not in the test manifest");
    Sample s = load_sample(test, *entry);
    std::vector<const LabelMap*> preds;
    for (const auto& [name, pred_map] : per_model_predictions) {
      auto it = pred_map->find(*key);
      if (it == pred_map->end())
        throw EvalError("model " + name + " has no prediction for triptych image " + key->first +
                        "/" + std::to_string(key->second));
      preds.push_back(&it->second);
    }
    const std::string file = std::string("triptych_") + label + ".png";
    write_png_rgb8((out_dir / file).string(), compose_panels(s.image, s.mask, preds));
    manifest_json[label] = {{"patient_id", key->first}, {"slice_index", key->second}, {"file", file}};
  }
  std::ofstream out(out_dir / "triptych.json");
  out << manifest_json.dump(2) << "\n";
}

}  // namespace prostseg
