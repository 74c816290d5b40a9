#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "prostseg/checkpoint.hpp"
#include "prostseg/error.hpp"
#include "prostseg/eval.hpp"
#include "prostseg/ingest.hpp"
#include "prostseg/models.hpp"
#include "prostseg/rng.hpp"

namespace prostseg {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 6;
  double learning_rate = 1e-4;
  double train_fraction = 0.9;
  std::uint64_t shuffle_seed = 0;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (!(train_fraction > 0 && train_fraction < 1))
      throw ConfigError("train_fraction must lie in (0,1)");
  }
};

struct EpochRecord {
  int epoch = 0;                // 1-based
  double mean_train_loss = 0;
  double mean_train_dsc = 0;
  double seconds = 0;
};

struct TrainingHistory {
  std::vector<EpochRecord> records;
  std::string optimizer = "adam(beta1=0.9,beta2=0.999,eps=1e-8)";
};

inline void write_history_csv(const TrainingHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write history CSV: " + path.string());
  out << "epoch,mean_train_loss,mean_train_dsc,seconds\n";
  for (const auto& r : history.records)
    out << r.epoch << ',' << format_fixed(r.mean_train_loss) << ','
        << format_fixed(r.mean_train_dsc) << ',' << format_fixed(r.seconds, 3) << "\n";
}

/// Adaptive per-parameter moment estimation (decay 0.9/0.999, eps 1e-8).
template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate) : lr_(learning_rate) {}

  void step(const std::vector<std::pair<std::string, nn::NodeRef<T>>>& params) {
    if (m_.empty()) {
      for (const auto& [name, p] : params) {
        m_.emplace_back(p->value.n, p->value.h, p->value.w, p->value.c);
        v_.emplace_back(p->value.n, p->value.h, p->value.w, p->value.c);
      }
    }
    ++t_;
    const double correction = std::sqrt(1.0 - std::pow(kBeta2, t_)) / (1.0 - std::pow(kBeta1, t_));
    const double lr_t = lr_ * correction;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].second;
      T* w = p->value.data.data();
      const T* g = p->grad.data.data();
      T* m = m_[i].data.data();
      T* v = v_[i].data.data();
      for (std::size_t j = 0; j < p->value.size(); ++j) {
        const double gj = g[j];
        const double mj = kBeta1 * m[j] + (1 - kBeta1) * gj;
        const double vj = kBeta2 * v[j] + (1 - kBeta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        w[j] = static_cast<T>(w[j] - lr_t * mj / (std::sqrt(vj) + kEps));
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double lr_;
  long t_ = 0;
  std::vector<nn::Tensor<T>> m_, v_;
};

namespace detail {

template <typename T>
nn::Tensor<T> image_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                          std::size_t start, std::size_t count) {
  const int H = samples[idx[start]].mask.height, W = samples[idx[start]].mask.width;
  nn::Tensor<T> x(static_cast<int>(count), H, W, 1);
  for (std::size_t i = 0; i < count; ++i) {
    const Sample& s = samples[idx[start + i]];
    if (s.mask.height != H || s.mask.width != W)
      throw ShapeError("training samples must share one grid size");
    for (int y = 0; y < H; ++y)
      for (int x_ = 0; x_ < W; ++x_)
        x.at(static_cast<int>(i), y, x_, 0) = static_cast<T>(s.image.at(x_, y));
  }
  return x;
}

template <typename T>
nn::Tensor<T> target_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                           std::size_t start, std::size_t count) {
  const int H = samples[idx[start]].mask.height, W = samples[idx[start]].mask.width;
  nn::Tensor<T> t(static_cast<int>(count), H, W, kNumClasses);
  for (std::size_t i = 0; i < count; ++i) {
    const Sample& s = samples[idx[start + i]];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) t.at(static_cast<int>(i), y, x, s.mask.at(x, y)) = T{1};
  }
  return t;
}

/// Mean DSC over the prostate zones present in either map; empty optional
/// when the sample holds background only.
inline std::optional<double> sample_mean_dsc(const LabelMap& pred, const LabelMap& gt) {
  double sum = 0;
  int present = 0;
  for (ZoneLabel z : kProstateZones)
    if (auto d = dice(pred, gt, z)) {
      sum += *d;
      ++present;
    }
  if (present == 0) return std::nullopt;
  return sum / present;
}

}  // namespace detail

/// Trains `model` in place with categorical cross-entropy over the given
/// samples: per-epoch deterministic shuffling, Adam updates, best-loss and
/// final checkpoints, per-epoch loss/DSC history.
template <typename T>
TrainingHistory train_on_samples(Model<T>& model, const std::vector<Sample>& samples,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw DataError("training set is empty");

  const std::string arch = architecture_name(model.config().architecture);
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  AdamOptimizer<T> adam(cfg.learning_rate);
  TrainingHistory history;
  double best_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.shuffle_seed ^ splitmix64(static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_acc = 0;
    double dsc_acc = 0;
    std::size_t dsc_n = 0;
    int step = 0;
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(cfg.batch_size), ++step) {
      const std::size_t count =
          std::min<std::size_t>(cfg.batch_size, samples.size() - start);
      auto x = nn::make_leaf(detail::image_batch<T>(samples, order, start, count), false);
      nn::Tensor<T> target = detail::target_batch<T>(samples, order, start, count);

      auto probs = model.forward_node(x, /*training=*/true);
      auto loss = nn::cce_loss(probs, target);
      const double loss_value = static_cast<double>(loss->value.data[0]);
      if (!std::isfinite(loss_value))
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(step));
      nn::backward(loss);
      adam.step(model.parameters());

      loss_acc += loss_value * static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) {
        const Sample& s = samples[order[start + i]];
        LabelMap pred =
            argmax_labelmap(probs->value, static_cast<int>(i), s.mask.patient_id, s.mask.slice_index);
        if (auto d = detail::sample_mean_dsc(pred, s.mask)) {
          dsc_acc += *d;
          ++dsc_n;
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_train_loss = loss_acc / static_cast<double>(samples.size());
    rec.mean_train_dsc = dsc_n ? dsc_acc / static_cast<double>(dsc_n) : 0.0;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.records.push_back(rec);

    if (!cfg.checkpoint_dir.empty() && rec.mean_train_loss < best_loss) {
      best_loss = rec.mean_train_loss;
      save_checkpoint(model, cfg.checkpoint_dir / (arch + "_best.ckpt"));
    }
  }
  if (!cfg.checkpoint_dir.empty())
    save_checkpoint(model, cfg.checkpoint_dir / (arch + "_final.ckpt"));
  return history;
}

/// Manifest flavor: loads every entry of `train_set` into memory first.
template <typename T>
TrainingHistory train(Model<T>& model, const DatasetManifest& train_set, const TrainConfig& cfg) {
  if (train_set.entries.empty()) throw DataError("training manifest is empty");
  std::vector<Sample> samples;
  samples.reserve(train_set.entries.size());
  for (const auto& e : train_set.entries) samples.push_back(load_sample(train_set, e));
  return train_on_samples(model, samples, cfg);
}

/// Per-pixel argmax segmentation of each input slice (inference mode).
template <typename T>
std::vector<LabelMap> predict(const Model<T>& model, const std::vector<SliceImage>& images,
                              int batch_size = 4) {
  std::vector<LabelMap> out;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(batch_size, images.size() - start);
    const int H = images[start].height, W = images[start].width;
    nn::Tensor<T> x(static_cast<int>(count), H, W, 1);
    for (std::size_t i = 0; i < count; ++i)
      for (int y = 0; y < H; ++y)
        for (int x_ = 0; x_ < W; ++x_)
          x.at(static_cast<int>(i), y, x_, 0) = static_cast<T>(images[start + i].at(x_, y));
    nn::Tensor<T> probs = model.forward(x);
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(argmax_labelmap(probs, static_cast<int>(i), images[start + i].patient_id,
                                    images[start + i].slice_index));
  }
  return out;
}

}  // namespace prostseg
