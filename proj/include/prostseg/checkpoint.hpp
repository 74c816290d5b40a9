#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "prostseg/error.hpp"
#include "prostseg/models.hpp"

namespace prostseg {

// Checkpoint container, version 1:
//   "PSCK" | u32 version | u8 scalar_size | u32 config_len | config text
//   | u32 array_count | arrays
// array: u16 name_len | name | u8 kind (0 trainable, 1 running stat)
//        | 4x u32 dims | raw little-endian scalars
static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "architecture=" << architecture_name(c.architecture) << "\n"
     << "base_filters=" << c.base_filters << "\n"
     << "depth=" << c.depth << "\n"
     << "recurrence_steps=" << c.recurrence_steps << "\n"
     << "dense_layers_per_block=" << c.dense_layers_per_block << "\n"
     << "dense_growth_rate=" << c.dense_growth_rate << "\n"
     << "num_classes=" << c.num_classes << "\n"
     << "input_channels=" << c.input_channels << "\n"
     << "init_seed=" << c.init_seed << "\n";
  return os.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed config echo line: " + line);
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "architecture") {
      auto a = architecture_from_name(value);
      if (!a) throw CheckpointError("unknown architecture in checkpoint: " + value);
      c.architecture = *a;
    } else if (key == "base_filters") c.base_filters = std::stoi(value);
    else if (key == "depth") c.depth = std::stoi(value);
    else if (key == "recurrence_steps") c.recurrence_steps = std::stoi(value);
    else if (key == "dense_layers_per_block") c.dense_layers_per_block = std::stoi(value);
    else if (key == "dense_growth_rate") c.dense_growth_rate = std::stoi(value);
    else if (key == "num_classes") c.num_classes = std::stoi(value);
    else if (key == "input_channels") c.input_channels = std::stoi(value);
    else if (key == "init_seed") c.init_seed = std::stoull(value);
    else throw CheckpointError("unknown config echo key: " + key);
  }
  return c;
}

namespace detail {

template <typename T>
void write_array(std::ofstream& out, const std::string& name, std::uint8_t kind,
                 const nn::Tensor<T>& t) {
  std::uint16_t name_len = static_cast<std::uint16_t>(name.size());
  out.write(reinterpret_cast<const char*>(&name_len), 2);
  out.write(name.data(), name_len);
  out.write(reinterpret_cast<const char*>(&kind), 1);
  std::uint32_t dims[4] = {static_cast<std::uint32_t>(t.n), static_cast<std::uint32_t>(t.h),
                           static_cast<std::uint32_t>(t.w), static_cast<std::uint32_t>(t.c)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(t.data.data()), sizeof(T) * t.data.size());
}

struct Reader {
  std::ifstream in;
  std::string path;
  void read(void* dst, std::size_t n) {
    if (!in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
      throw CheckpointError("truncated checkpoint file: " + path);
  }
  template <typename V>
  V get() {
    V v;
    read(&v, sizeof(V));
    return v;
  }
};

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, 4);
  std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  std::uint8_t scalar_size = sizeof(T);
  out.write(reinterpret_cast<const char*>(&scalar_size), 1);

  const std::string cfg = serialize_model_config(model.config());
  std::uint32_t cfg_len = static_cast<std::uint32_t>(cfg.size());
  out.write(reinterpret_cast<const char*>(&cfg_len), 4);
  out.write(cfg.data(), cfg_len);

  std::uint32_t count =
      static_cast<std::uint32_t>(model.parameters().size() + model.state_arrays().size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, p] : model.parameters()) detail::write_array(out, name, 0, p->value);
  for (const auto& [name, t] : model.state_arrays()) detail::write_array(out, name, 1, *t);
  if (!out) throw CheckpointError("checkpoint write failed: " + path.string());
}

template <typename T = float>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  detail::Reader r{std::ifstream(path, std::ios::binary), path.string()};
  if (!r.in) throw CheckpointError("cannot open checkpoint: " + path.string());

  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path.string());
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path.string());
  auto scalar_size = r.get<std::uint8_t>();
  if (scalar_size != 4 && scalar_size != 8)
    throw CheckpointError("unsupported scalar width in " + path.string());

  auto cfg_len = r.get<std::uint32_t>();
  std::string cfg_text(cfg_len, '\0');
  r.read(cfg_text.data(), cfg_len);
  Model<T> model(parse_model_config(cfg_text));

  std::map<std::string, nn::Tensor<T>*> arrays;
  for (const auto& [name, p] : model.parameters()) arrays[name] = &p->value;
  for (const auto& [name, t] : model.state_arrays()) arrays[name] = t.get();

  auto count = r.get<std::uint32_t>();
  if (count != arrays.size())
    throw CheckpointError("checkpoint " + path.string() + " holds " + std::to_string(count) +
                          " arrays, model expects " + std::to_string(arrays.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = r.get<std::uint16_t>();
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    r.get<std::uint8_t>();  // kind, implied by the name
    std::uint32_t dims[4];
    r.read(dims, sizeof(dims));

    auto it = arrays.find(name);
    if (it == arrays.end())
      throw CheckpointError("checkpoint " + path.string() + " names unknown array '" + name + "'");
    nn::Tensor<T>* dst = it->second;
    if (dst->n != static_cast<int>(dims[0]) || dst->h != static_cast<int>(dims[1]) ||
        dst->w != static_cast<int>(dims[2]) || dst->c != static_cast<int>(dims[3]))
      throw CheckpointError("checkpoint array '" + name + "' shape mismatch in " + path.string());

    if (scalar_size == sizeof(T)) {
      r.read(dst->data.data(), sizeof(T) * dst->data.size());
    } else if (scalar_size == 4) {
      std::vector<float> tmp(dst->data.size());
      r.read(tmp.data(), 4 * tmp.size());
      for (std::size_t j = 0; j < tmp.size(); ++j) dst->data[j] = static_cast<T>(tmp[j]);
    } else {
      std::vector<double> tmp(dst->data.size());
      r.read(tmp.data(), 8 * tmp.size());
      for (std::size_t j = 0; j < tmp.size(); ++j) dst->data[j] = static_cast<T>(tmp[j]);
    }
  }
  return model;
}

}  // namespace prostseg
