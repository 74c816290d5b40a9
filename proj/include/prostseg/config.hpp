#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prostseg/error.hpp"
#include "prostseg/models.hpp"
#include "prostseg/rng.hpp"
#include "prostseg/train.hpp"

namespace prostseg {

/// Declarative description of one full benchmark run.
struct RunConfig {
  std::filesystem::path data_root;
  std::filesystem::path output_root;
  std::uint64_t seed = 0;          // patient split
  std::uint64_t augment_seed = 0;  // augmentation plan
  TrainConfig train;
  ModelConfig model_defaults;  // architecture field unused; per-model tags below
  std::vector<Architecture> models;
  Architecture reference_model = Architecture::R2U_NET;

  ModelConfig config_for(Architecture a) const {
    ModelConfig c = model_defaults;
    c.architecture = a;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  std::size_t e = s.find_last_not_of(" \t");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline long long config_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double config_real(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

}  // namespace detail

/// Flat `key = value` format with dotted sections, '#' comments and blank
/// lines. Unknown keys are errors.
inline RunConfig parse_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());

  RunConfig rc;
  bool have_data_root = false, have_output_root = false, have_models = false,
       have_reference = false;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string where = "' (line " + std::to_string(line_no) + ")";

    if (key == "data_root") {
      rc.data_root = value;
      have_data_root = true;
    } else if (key == "output_root") {
      rc.output_root = value;
      have_output_root = true;
    } else if (key == "seed") {
      rc.seed = static_cast<std::uint64_t>(detail::config_int(value, key));
    } else if (key == "augment.seed") {
      rc.augment_seed = static_cast<std::uint64_t>(detail::config_int(value, key));
    } else if (key == "models") {
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok = detail::trim(tok);
        if (tok.empty()) continue;
        auto a = architecture_from_name(tok);
        if (!a) throw ConfigError("unknown architecture '" + tok + where);
        rc.models.push_back(*a);
      }
      have_models = true;
    } else if (key == "reference_model") {
      auto a = architecture_from_name(value);
      if (!a) throw ConfigError("unknown architecture '" + value + where);
      rc.reference_model = *a;
      have_reference = true;
    } else if (key == "train.epochs") {
      rc.train.epochs = static_cast<int>(detail::config_int(value, key));
    } else if (key == "train.batch_size") {
      rc.train.batch_size = static_cast<int>(detail::config_int(value, key));
    } else if (key == "train.learning_rate") {
      rc.train.learning_rate = detail::config_real(value, key);
    } else if (key == "train.train_fraction") {
      rc.train.train_fraction = detail::config_real(value, key);
    } else if (key == "train.shuffle_seed") {
      rc.train.shuffle_seed = static_cast<std::uint64_t>(detail::config_int(value, key));
    } else if (key == "model.base_filters") {
      rc.model_defaults.base_filters = static_cast<int>(detail::config_int(value, key));
    } else if (key == "model.depth") {
      rc.model_defaults.depth = static_cast<int>(detail::config_int(value, key));
    } else if (key == "model.recurrence_steps") {
      rc.model_defaults.recurrence_steps = static_cast<int>(detail::config_int(value, key));
    } else if (key == "model.dense_layers_per_block") {
      rc.model_defaults.dense_layers_per_block = static_cast<int>(detail::config_int(value, key));
    } else if (key == "model.dense_growth_rate") {
      rc.model_defaults.dense_growth_rate = static_cast<int>(detail::config_int(value, key));
    } else if (key == "model.init_seed") {
      rc.model_defaults.init_seed = static_cast<std::uint64_t>(detail::config_int(value, key));
    } else {
      throw ConfigError("unknown config key '" + key + where);
    }
  }

  if (!have_data_root) throw ConfigError("config is missing data_root");
  if (!have_output_root) throw ConfigError("config is missing output_root");
  if (!have_models || rc.models.empty()) throw ConfigError("config lists no models");

  auto in_models = [&](Architecture a) {
    return std::find(rc.models.begin(), rc.models.end(), a) != rc.models.end();
  };
  if (have_reference) {
    if (!in_models(rc.reference_model))
      throw ConfigError(std::string("reference_model ") + architecture_name(rc.reference_model) +
                        " is not among the configured models");
  } else {
    rc.reference_model = in_models(Architecture::R2U_NET) ? Architecture::R2U_NET : rc.models[0];
  }

  rc.train.validate();
  rc.model_defaults.validate();
  return rc;
}

/// Canonical serialization: drives the config hash and the run manifest echo.
inline std::string canonical_config_text(const RunConfig& rc) {
  std::ostringstream os;
  os << "data_root = " << rc.data_root.string() << "\n"
     << "output_root = " << rc.output_root.string() << "\n"
     << "seed = " << rc.seed << "\n"
     << "augment.seed = " << rc.augment_seed << "\n"
     << "models = ";
  for (std::size_t i = 0; i < rc.models.size(); ++i)
    os << (i ? "," : "") << architecture_name(rc.models[i]);
  os << "\n"
     << "reference_model = " << architecture_name(rc.reference_model) << "\n"
     << "train.epochs = " << rc.train.epochs << "\n"
     << "train.batch_size = " << rc.train.batch_size << "\n"
     << "train.learning_rate = " << format_fixed(rc.train.learning_rate, 9) << "\n"
     << "train.train_fraction = " << format_fixed(rc.train.train_fraction, 9) << "\n"
     << "train.shuffle_seed = " << rc.train.shuffle_seed << "\n"
     << "model.base_filters = " << rc.model_defaults.base_filters << "\n"
     << "model.depth = " << rc.model_defaults.depth << "\n"
     << "model.recurrence_steps = " << rc.model_defaults.recurrence_steps << "\n"
     << "model.dense_layers_per_block = " << rc.model_defaults.dense_layers_per_block << "\n"
     << "model.dense_growth_rate = " << rc.model_defaults.dense_growth_rate << "\n"
     << "model.init_seed = " << rc.model_defaults.init_seed << "\n";
  return os.str();
}

inline std::string config_hash_hex(const RunConfig& rc) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08x",
                static_cast<std::uint32_t>(fnv1a(canonical_config_text(rc)) & 0xffffffffULL));
  return buf;
}

}  // namespace prostseg
