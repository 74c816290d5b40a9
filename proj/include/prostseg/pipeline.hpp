#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prostseg/augment.hpp"
#include "prostseg/checkpoint.hpp"
#include "prostseg/config.hpp"
#include "prostseg/error.hpp"
#include "prostseg/eval.hpp"
#include "prostseg/ingest.hpp"
#include "prostseg/models.hpp"
#include "prostseg/nn/gemm.hpp"
#include "prostseg/train.hpp"
#include "prostseg/version.hpp"

namespace prostseg {

// Exit codes: 0 success, 2 config error, 3 data error, 4 training
// divergence, 5 evaluation error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitEval = 5;

inline bool deterministic_mode() {
  const char* v = std::getenv(kDeterministicEnvVar);
  return v && *v && std::string(v) != "0";
}

/// In deterministic mode every nondeterminism source is serialized; the
/// only runtime one is BLAS threading.
inline void apply_determinism() {
  if (deterministic_mode()) nn::set_blas_threads(1);
}

namespace detail {

inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  if (dynamic_cast<const EvalError*>(&e) || dynamic_cast<const CheckpointError*>(&e))
    return kExitEval;
  return kExitData;
}

inline void write_failed_marker(const std::filesystem::path& output_root, const std::string& stage,
                                const std::string& message) {
  if (output_root.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(output_root, ec);
  std::ofstream out(output_root / "FAILED");
  out << "stage: " << stage << "\n" << message << "\n";
}

}  // namespace detail

/// `synth` subcommand: deterministic synthetic dataset generation.
inline int cmd_synth(int n_patients, int slices_per_patient, std::uint64_t seed,
                     const std::filesystem::path& out_dir) {
  try {
    apply_determinism();
    DatasetManifest m = synth_generate(n_patients, slices_per_patient, seed, out_dir);
    std::cout << "wrote " << m.entries.size() << " synthetic slice(s) under " << out_dir.string()
              << "\n";
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error [synth]: " << e.what() << "\n";
    return detail::exit_code_for(e);
  }
}

/// `pipeline` subcommand: ingest -> split -> augment(train) -> train each
/// model -> evaluate on the shared test set -> reports.
inline int cmd_pipeline(const std::filesystem::path& config_file) {
  RunConfig rc;
  try {
    rc = parse_run_config(config_file);
  } catch (const Error& e) {
    std::cerr << "error [config]: " << e.what() << "\n";
    return kExitConfig;
  }
  apply_determinism();

  const std::string hash = config_hash_hex(rc);
  const std::filesystem::path dataset_dir = rc.output_root / ("dataset_" + hash);
  const std::filesystem::path checkpoints_dir = rc.output_root / ("checkpoints_" + hash);
  const std::filesystem::path reports_dir = rc.output_root / "reports";

  std::string stage = "ingest";
  try {
    std::filesystem::create_directories(rc.output_root);
    std::error_code ec;
    std::filesystem::remove(rc.output_root / "FAILED", ec);  // stale marker from earlier runs

    // ingest
    std::vector<SliceImage> slices = load_slices(rc.data_root / "images");
    std::vector<ContourSet> contours = parse_contours(rc.data_root / "contours.csv");
    std::vector<LabelMap> masks;
    masks.reserve(contours.size());
    for (const auto& cs : contours) masks.push_back(rasterize(cs));
    DatasetManifest dataset = build_dataset(slices, masks, dataset_dir);

    stage = "split";
    auto [train_manifest, test_manifest] = split_by_patient(dataset, rc.train.train_fraction, rc.seed);
    write_manifest(train_manifest, dataset_dir / "train_manifest.csv");
    write_manifest(test_manifest, dataset_dir / "test_manifest.csv");

    stage = "augment";
    AugmentationPlan plan = make_plan(rc.augment_seed);
    DatasetManifest train_aug = expand(train_manifest, plan, dataset_dir / "train_aug");

    stage = "train";
    std::filesystem::create_directories(reports_dir);
    std::vector<Model<float>> trained;
    for (Architecture arch : rc.models) {
      Model<float> model(rc.config_for(arch));
      TrainConfig tc = rc.train;
      tc.checkpoint_dir = checkpoints_dir;
      TrainingHistory history = train(model, train_aug, tc);
      write_history_csv(history,
                        reports_dir / ("history_" + std::string(architecture_name(arch)) + ".csv"));
      trained.push_back(std::move(model));
    }

    stage = "evaluate";
    std::vector<std::vector<MetricsRecord>> all_records;
    std::map<Architecture, EvalResult> results;
    for (std::size_t i = 0; i < trained.size(); ++i) {
      EvalResult res = evaluate_model(trained[i], test_manifest);
      all_records.push_back(res.records);
      results.emplace(rc.models[i], std::move(res));
    }
    SummaryTable table = summarize(all_records);
    write_summary_csv(table, reports_dir / "summary.csv");
    {
      std::ofstream txt(reports_dir / "summary.txt");
      txt << render_summary_text(table);
    }
    boxplot_export(all_records, reports_dir / "boxplot_jaccard.csv");

    TriptychSelection sel = select_triptych(results.at(rc.reference_model).records);
    std::vector<std::pair<std::string, const std::map<ImageKey, LabelMap>*>> panel_preds;
    for (Architecture arch : rc.models)
      panel_preds.emplace_back(architecture_name(arch), &results.at(arch).predictions);
    std::sort(panel_preds.begin(), panel_preds.end(), [](const auto& a, const auto& b) {
      return model_order_key(a.first) < model_order_key(b.first);
    });
    render_triptych(test_manifest, panel_preds, sel, reports_dir);

    stage = "manifest";
    nlohmann::json run;
    run["version"] = version();
    run["config_hash"] = hash;
    run["deterministic"] = deterministic_mode();
    run["config"] = canonical_config_text(rc);
    run["seeds"] = {{"split", rc.seed},
                    {"augment", rc.augment_seed},
                    {"shuffle", rc.train.shuffle_seed},
                    {"init", rc.model_defaults.init_seed}};
    run["artifacts"] = {{"dataset", dataset_dir.string()},
                        {"checkpoints", checkpoints_dir.string()},
                        {"reports", reports_dir.string()}};
    run["status"] = "ok";
    std::ofstream rm(rc.output_root / "run_manifest.json");
    rm << run.dump(2) << "\n";
    return kExitOk;
  } catch (const Error& e) {
    detail::write_failed_marker(rc.output_root, stage, e.what());
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return detail::exit_code_for(e);
  }
}

/// `evaluate` subcommand: reports from saved checkpoints, no retraining.
inline int cmd_evaluate(const std::vector<std::filesystem::path>& checkpoints,
                        const std::filesystem::path& test_root,
                        const std::filesystem::path& out_dir) {
  if (checkpoints.empty()) {
    std::cerr << "error [evaluate]: no checkpoints given\n";
    return kExitConfig;
  }
  apply_determinism();
  std::string stage = "load";
  try {
    const std::filesystem::path manifest_path =
        std::filesystem::is_directory(test_root) ? test_root / "manifest.csv" : test_root;
    DatasetManifest test = read_manifest(manifest_path);

    std::vector<std::pair<std::string, Model<float>>> models;
    std::map<std::string, int> name_uses;
    for (const auto& ck : checkpoints) {
      Model<float> m = load_checkpoint<float>(ck);
      std::string name = architecture_name(m.config().architecture);
      if (int n = name_uses[name]++; n > 0) name += "#" + std::to_string(n + 1);
      models.emplace_back(name, std::move(m));
    }

    stage = "evaluate";
    std::filesystem::create_directories(out_dir);
    std::vector<std::vector<MetricsRecord>> all_records;
    std::vector<std::pair<std::string, EvalResult>> results;
    for (auto& [name, model] : models) {
      EvalResult res = evaluate_model(model, test, name);
      all_records.push_back(res.records);
      results.emplace_back(name, std::move(res));
    }
    SummaryTable table = summarize(all_records);
    write_summary_csv(table, out_dir / "summary.csv");
    {
      std::ofstream txt(out_dir / "summary.txt");
      txt << render_summary_text(table);
    }
    boxplot_export(all_records, out_dir / "boxplot_jaccard.csv");

    // reference: R2U_NET when evaluated, otherwise the first in fixed order
    const std::string reference =
        std::min_element(results.begin(), results.end(), [](const auto& a, const auto& b) {
          auto rank = [](const std::string& n) {
            auto k = model_order_key(n);
            if (n == architecture_name(Architecture::R2U_NET)) k.first = -1;
            return k;
          };
          return rank(a.first) < rank(b.first);
        })->first;
    const EvalResult* ref_result = nullptr;
    for (const auto& [name, res] : results)
      if (name == reference) ref_result = &res;
    TriptychSelection sel = select_triptych(ref_result->records);
    std::vector<std::pair<std::string, const std::map<ImageKey, LabelMap>*>> panel_preds;
    for (const auto& [name, res] : results) panel_preds.emplace_back(name, &res.predictions);
    std::sort(panel_preds.begin(), panel_preds.end(), [](const auto& a, const auto& b) {
      return model_order_key(a.first) < model_order_key(b.first);
    });
    render_triptych(test, panel_preds, sel, out_dir);
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return detail::exit_code_for(e);
  }
}

}  // namespace prostseg
