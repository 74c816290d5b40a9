#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prostseg/error.hpp"
#include "prostseg/nn/graph.hpp"
#include "prostseg/nn/ops.hpp"
#include "prostseg/rng.hpp"

namespace prostseg {

enum class Architecture { UNET, ATT_UNET, DENSE_UNET, ATT_DENSE_UNET, R2U_NET, ATT_R2U_NET };

inline constexpr std::array<Architecture, 6> kAllArchitectures = {
    Architecture::UNET,          Architecture::ATT_UNET,  Architecture::DENSE_UNET,
    Architecture::ATT_DENSE_UNET, Architecture::R2U_NET,  Architecture::ATT_R2U_NET};

inline const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::UNET: return "UNET";
    case Architecture::ATT_UNET: return "ATT_UNET";
    case Architecture::DENSE_UNET: return "DENSE_UNET";
    case Architecture::ATT_DENSE_UNET: return "ATT_DENSE_UNET";
    case Architecture::R2U_NET: return "R2U_NET";
    case Architecture::ATT_R2U_NET: return "ATT_R2U_NET";
  }
  return "?";
}

/// Table-style display name, used in the plain-text summary.
inline const char* architecture_display_name(Architecture a) {
  switch (a) {
    case Architecture::UNET: return "U-Net";
    case Architecture::ATT_UNET: return "Attention U-Net";
    case Architecture::DENSE_UNET: return "Dense-UNet";
    case Architecture::ATT_DENSE_UNET: return "Attention Dense-UNet";
    case Architecture::R2U_NET: return "R2U-Net";
    case Architecture::ATT_R2U_NET: return "Attention R2U-Net";
  }
  return "?";
}

inline std::optional<Architecture> architecture_from_name(const std::string& s) {
  for (Architecture a : kAllArchitectures)
    if (s == architecture_name(a)) return a;
  return std::nullopt;
}

inline bool has_attention_gates(Architecture a) {
  return a == Architecture::ATT_UNET || a == Architecture::ATT_DENSE_UNET ||
         a == Architecture::ATT_R2U_NET;
}

struct ModelConfig {
  Architecture architecture = Architecture::UNET;
  int base_filters = 64;
  int depth = 4;
  int recurrence_steps = 2;       // R2U variants
  int dense_layers_per_block = 4;  // Dense variants
  int dense_growth_rate = 16;      // Dense variants
  int num_classes = 5;
  int input_channels = 1;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (depth < 1) throw ConfigError("model depth must be >= 1");
    if (base_filters < 1) throw ConfigError("base_filters must be >= 1");
    if (recurrence_steps < 1) throw ConfigError("recurrence_steps must be >= 1");
    if (dense_layers_per_block < 1) throw ConfigError("dense_layers_per_block must be >= 1");
    if (dense_growth_rate < 1) throw ConfigError("dense_growth_rate must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  }
};

namespace nn_detail {

using nn::NodeRef;
using nn::Tensor;

/// Creates parameters and registers every trainable array / running
/// statistic under a stable dotted name. Each parameter's initial values are
/// drawn from a stream seeded by (init_seed, name), so initialization does
/// not depend on construction order.
template <typename T>
struct ParamRegistry {
  std::uint64_t init_seed = 0;
  std::vector<std::pair<std::string, NodeRef<T>>> trainable;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>> state;

  NodeRef<T> fan_in_uniform(const std::string& name, int d0, int d1, int d2, int d3, int fan_in) {
    Tensor<T> t(d0, d1, d2, d3);
    Rng rng(splitmix64(init_seed) ^ fnv1a(name));
    const double limit = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
    auto node = nn::make_leaf(std::move(t), true);
    trainable.emplace_back(name, node);
    return node;
  }

  NodeRef<T> constant(const std::string& name, int channels, T value) {
    Tensor<T> t(1, 1, 1, channels);
    t.fill(value);
    auto node = nn::make_leaf(std::move(t), true);
    trainable.emplace_back(name, node);
    return node;
  }

  std::shared_ptr<Tensor<T>> stat(const std::string& name, int channels, T value) {
    auto t = std::make_shared<Tensor<T>>(1, 1, 1, channels);
    t->fill(value);
    state.emplace_back(name, t);
    return t;
  }
};

template <typename T>
struct Conv2dLayer {
  NodeRef<T> w, b;
  Conv2dLayer() = default;
  Conv2dLayer(ParamRegistry<T>& reg, const std::string& name, int k, int cin, int cout)
      : w(reg.fan_in_uniform(name + ".w", k, k, cin, cout, k * k * cin)),
        b(reg.constant(name + ".b", cout, T{0})) {}
  NodeRef<T> operator()(const NodeRef<T>& x) const { return nn::conv2d(x, w, b); }
};

template <typename T>
struct BatchNormLayer {
  NodeRef<T> gamma, beta;
  std::shared_ptr<Tensor<T>> run_mean, run_var;
  BatchNormLayer() = default;
  BatchNormLayer(ParamRegistry<T>& reg, const std::string& name, int c)
      : gamma(reg.constant(name + ".gamma", c, T{1})),
        beta(reg.constant(name + ".beta", c, T{0})),
        run_mean(reg.stat(name + ".running_mean", c, T{0})),
        run_var(reg.stat(name + ".running_var", c, T{1})) {}
  NodeRef<T> operator()(const NodeRef<T>& x, bool training) const {
    return nn::batch_norm(x, gamma, beta, run_mean.get(), run_var.get(), training);
  }
};

template <typename T>
struct ConvBnRelu {
  Conv2dLayer<T> conv;
  BatchNormLayer<T> bn;
  ConvBnRelu() = default;
  ConvBnRelu(ParamRegistry<T>& reg, const std::string& name, int k, int cin, int cout)
      : conv(reg, name + ".conv", k, cin, cout), bn(reg, name + ".bn", cout) {}
  NodeRef<T> operator()(const NodeRef<T>& x, bool training) const {
    return nn::relu(bn(conv(x), training));
  }
};

template <typename T>
struct Block {
  virtual ~Block() = default;
  virtual NodeRef<T> forward(const NodeRef<T>& x, bool training) const = 0;
};

/// Two 3x3 conv+BN+ReLU stages (classic U-Net block).
template <typename T>
struct DoubleConvBlock final : Block<T> {
  ConvBnRelu<T> c1, c2;
  DoubleConvBlock(ParamRegistry<T>& reg, const std::string& name, int cin, int cout)
      : c1(reg, name + ".conv1", 3, cin, cout), c2(reg, name + ".conv2", 3, cout, cout) {}
  NodeRef<T> forward(const NodeRef<T>& x, bool training) const override {
    return c2(c1(x, training), training);
  }
};

/// Dense block: each layer consumes the concatenation of the block input and
/// all previous layer outputs and emits `growth` channels; a 1x1 transition
/// brings the stack back to the block's nominal output width.
template <typename T>
struct DenseBlock final : Block<T> {
  std::vector<ConvBnRelu<T>> layers;
  ConvBnRelu<T> transition;
  DenseBlock(ParamRegistry<T>& reg, const std::string& name, int cin, int cout, int n_layers,
             int growth) {
    for (int i = 0; i < n_layers; ++i)
      layers.emplace_back(reg, name + ".layer" + std::to_string(i), 3, cin + i * growth, growth);
    transition = ConvBnRelu<T>(reg, name + ".transition", 1, cin + n_layers * growth, cout);
  }
  NodeRef<T> forward(const NodeRef<T>& x, bool training) const override {
    std::vector<NodeRef<T>> features{x};
    for (const auto& layer : layers) {
      NodeRef<T> input = features.size() == 1 ? features[0] : nn::concat_channels(features);
      features.push_back(layer(input, training));
    }
    return transition(nn::concat_channels(features), training);
  }
};

/// Recurrent-residual block: a 1x1 projection to the output width, one
/// recurrent 3x3 convolution (weights shared across steps) unrolled
/// `steps` times with the projected input re-added at every step, wrapped
/// in an additive residual connection.
template <typename T>
struct RecurrentResidualBlock final : Block<T> {
  Conv2dLayer<T> proj;
  Conv2dLayer<T> rconv;
  BatchNormLayer<T> bn;
  int steps;
  RecurrentResidualBlock(ParamRegistry<T>& reg, const std::string& name, int cin, int cout,
                         int steps_)
      : proj(reg, name + ".proj", 1, cin, cout),
        rconv(reg, name + ".rconv", 3, cout, cout),
        bn(reg, name + ".bn", cout),
        steps(steps_) {}
  NodeRef<T> forward(const NodeRef<T>& x, bool training) const override {
    NodeRef<T> base = proj(x);
    NodeRef<T> z;
    for (int t = 0; t < steps; ++t) {
      NodeRef<T> input = z ? nn::add(base, z) : base;
      z = nn::relu(bn(rconv(input), training));
    }
    return nn::add(base, z);
  }
};

/// Additive attention gate. The gating signal arrives at half the skip's
/// spatial resolution and is upsampled before fusion; the per-pixel sigmoid
/// coefficient scales the skip across all channels.
template <typename T>
struct AttentionGate {
  Conv2dLayer<T> wx, wg, psi;
  AttentionGate() = default;
  AttentionGate(ParamRegistry<T>& reg, const std::string& name, int c_skip, int c_gate) {
    const int c_int = std::max(c_skip / 2, 1);
    wx = Conv2dLayer<T>(reg, name + ".wx", 1, c_skip, c_int);
    wg = Conv2dLayer<T>(reg, name + ".wg", 1, c_gate, c_int);
    psi = Conv2dLayer<T>(reg, name + ".psi", 1, c_int, 1);
  }
  NodeRef<T> operator()(const NodeRef<T>& skip, const NodeRef<T>& gate) const {
    NodeRef<T> g_up = nn::upsample2(gate);
    if (g_up->value.h != skip->value.h || g_up->value.w != skip->value.w)
      throw ShapeError("attention gate: " + gate->value.shape_str() +
                       " cannot be matched to skip " + skip->value.shape_str() +
                       " by factor-2 up-sampling");
    NodeRef<T> alpha = nn::sigmoid(psi(nn::relu(nn::add(wx(skip), wg(g_up)))));
    return nn::mul_channel_broadcast(skip, alpha);
  }
};

}  // namespace nn_detail

/// A built computation graph of one of the six architectures: encoder of
/// `depth` levels, bottleneck, mirrored decoder with skip concatenation,
/// 1x1 head and per-pixel softmax. Filters double per level.
template <typename T = float>
class Model {
 public:
  using Tensor = nn::Tensor<T>;
  using NodeRef = nn::NodeRef<T>;

  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    reg_.init_seed = cfg_.init_seed;

    std::vector<int> enc_c(cfg_.depth);
    for (int i = 0; i < cfg_.depth; ++i) enc_c[i] = cfg_.base_filters << i;
    const int bottleneck_c = cfg_.base_filters << cfg_.depth;

    int cin = cfg_.input_channels;
    for (int i = 0; i < cfg_.depth; ++i) {
      encoder_.push_back(make_block("enc" + std::to_string(i), cin, enc_c[i]));
      cin = enc_c[i];
    }
    bottleneck_ = make_block("bottleneck", cin, bottleneck_c);

    int c_above = bottleneck_c;
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      DecoderStage stage;
      stage.up = nn_detail::ConvBnRelu<T>(reg_, "dec" + std::to_string(i) + ".up", 3, c_above, enc_c[i]);
      if (has_attention_gates(cfg_.architecture))
        stage.gate = nn_detail::AttentionGate<T>(reg_, "dec" + std::to_string(i) + ".gate",
                                                 enc_c[i], c_above);
      stage.block = make_block("dec" + std::to_string(i) + ".block", 2 * enc_c[i], enc_c[i]);
      decoder_.push_back(std::move(stage));
      c_above = enc_c[i];
    }

    head_ = nn_detail::Conv2dLayer<T>(reg_, "head", 1, enc_c[0], cfg_.num_classes);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }

  /// Graph-building forward; the caller controls gradient recording.
  NodeRef forward_node(const NodeRef& x, bool training) const {
    check_input_shape(x->value);
    std::vector<NodeRef> skips;
    NodeRef h = x;
    for (const auto& block : encoder_) {
      h = block->forward(h, training);
      skips.push_back(h);
      h = nn::max_pool2(h);
    }
    h = bottleneck_->forward(h, training);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const DecoderStage& stage = decoder_[i];
      NodeRef skip = skips[skips.size() - 1 - i];
      if (stage.gate) skip = (*stage.gate)(skip, h);
      NodeRef up = stage.up(nn::upsample2(h), training);
      h = stage.block->forward(nn::concat_channels<T>({up, skip}), training);
    }
    return nn::softmax_channels(head_(h));
  }

  /// Inference: per-pixel class probabilities, no gradient bookkeeping.
  Tensor forward(const Tensor& images) const {
    nn::NoGradGuard guard;
    return forward_node(nn::make_leaf(images, false), false)->value;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : reg_.trainable) n += p->value.size();
    return n;
  }

  const std::vector<std::pair<std::string, NodeRef>>& parameters() const { return reg_.trainable; }
  const std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>& state_arrays() const {
    return reg_.state;
  }

 private:
  struct DecoderStage {
    nn_detail::ConvBnRelu<T> up;
    std::optional<nn_detail::AttentionGate<T>> gate;
    std::unique_ptr<nn_detail::Block<T>> block;
  };

  std::unique_ptr<nn_detail::Block<T>> make_block(const std::string& name, int cin, int cout) {
    switch (cfg_.architecture) {
      case Architecture::UNET:
      case Architecture::ATT_UNET:
        return std::make_unique<nn_detail::DoubleConvBlock<T>>(reg_, name, cin, cout);
      case Architecture::DENSE_UNET:
      case Architecture::ATT_DENSE_UNET:
        return std::make_unique<nn_detail::DenseBlock<T>>(reg_, name, cin, cout,
                                                          cfg_.dense_layers_per_block,
                                                          cfg_.dense_growth_rate);
      case Architecture::R2U_NET:
      case Architecture::ATT_R2U_NET:
        return std::make_unique<nn_detail::RecurrentResidualBlock<T>>(reg_, name, cin, cout,
                                                                      cfg_.recurrence_steps);
    }
    throw ConfigError("unknown architecture tag");
  }

  void check_input_shape(const nn::Tensor<T>& x) const {
    if (x.c != cfg_.input_channels)
      throw ShapeError("model expects " + std::to_string(cfg_.input_channels) +
                       " input channel(s), got " + x.shape_str());
    const int div = 1 << cfg_.depth;
    if (x.h < div || x.w < div || x.h % div != 0 || x.w % div != 0)
      throw ShapeError("input spatial dims must be positive multiples of " + std::to_string(div) +
                       ", got " + x.shape_str());
  }

  ModelConfig cfg_;
  nn_detail::ParamRegistry<T> reg_;
  std::vector<std::unique_ptr<nn_detail::Block<T>>> encoder_;
  std::unique_ptr<nn_detail::Block<T>> bottleneck_;
  std::vector<DecoderStage> decoder_;
  nn_detail::Conv2dLayer<T> head_;
};

}  // namespace prostseg
