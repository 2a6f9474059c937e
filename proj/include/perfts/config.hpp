#pragma once

// Run configuration: where the data comes from plus everything the harness
// needs. The JSON form is what runs echo into config.json, so feeding that
// file back reproduces the run.

#include "perfts/align.hpp"
#include "perfts/data.hpp"
#include "perfts/error.hpp"
#include "perfts/fps.hpp"
#include "perfts/harness.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace perfts::config {

struct RunConfig {
    std::string data;                               // CSV path (or a directory holding data.csv)
    std::string dataset_config;                     // dataset JSON; defaults to dataset.json next to the CSV
    std::optional<data::SyntheticSpec> synthetic;   // used instead of `data` when present
    std::string output;
    harness::ExperimentConfig experiment;
    bool window_from_dataset = false;  // L and H not given: take them from the dataset config
};

inline nlohmann::json to_json(const RunConfig& rc) {
    const auto& e = rc.experiment;
    nlohmann::json j{{"methods", e.methods},
                     {"L", e.L},
                     {"H", e.H},
                     {"train_ratio", e.train_ratio},
                     {"val_ratio", e.val_ratio},
                     {"metric", align::to_string(e.metric)},
                     {"ensemble", e.ensemble},
                     {"seed", e.train.seed},
                     {"train", fps::to_json(e.train)},
                     {"grid", harness::to_json(e.grid)},
                     {"protocol", harness::to_json(e.protocol)},
                     {"output", rc.output}};
    j["train"].erase("seed");
    if (rc.synthetic) {
        j["synthetic"] = data::synthetic_spec_to_json(*rc.synthetic);
    } else {
        j["data"] = rc.data;
        j["dataset_config"] = rc.dataset_config;
    }
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    data::check_known_keys(j,
                           {"data", "dataset_config", "synthetic", "methods", "L", "H", "train_ratio", "val_ratio",
                            "metric", "ensemble", "seed", "train", "grid", "protocol", "output"},
                           "run config");
    RunConfig rc;
    auto& e = rc.experiment;
    try {
        rc.data = j.value("data", rc.data);
        rc.dataset_config = j.value("dataset_config", rc.dataset_config);
        rc.output = j.value("output", rc.output);
        if (j.contains("synthetic")) rc.synthetic = data::synthetic_spec_from_json(j.at("synthetic"));
        e.methods = j.value("methods", e.methods);
        rc.window_from_dataset = !j.contains("L") && !j.contains("H");
        e.L = j.value("L", e.L);
        e.H = j.value("H", e.H);
        e.train_ratio = j.value("train_ratio", e.train_ratio);
        e.val_ratio = j.value("val_ratio", e.val_ratio);
        if (j.contains("metric")) e.metric = align::metric_from_string(j.at("metric").get<std::string>());
        e.ensemble = j.value("ensemble", e.ensemble);
        if (j.contains("train")) e.train = fps::train_config_from_json(j.at("train"));
        e.train.seed = j.value("seed", e.train.seed);
        if (j.contains("grid")) e.grid = harness::grid_from_json(j.at("grid"));
        if (j.contains("protocol")) e.protocol = harness::protocol_from_json(j.at("protocol"));
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::usage, std::string("run config: ") + ex.what());
    }
    if (rc.synthetic && !rc.data.empty()) fail(ErrorKind::usage, "run config: give either data or synthetic, not both");
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(data::read_json_file(path));
}

// CSV path and dataset-config path for a `data` entry that may name a
// directory produced by `synth`.
inline std::pair<std::filesystem::path, std::filesystem::path> resolve_data_paths(const std::string& data,
                                                                                  const std::string& dataset_config) {
    if (data.empty()) fail(ErrorKind::usage, "no dataset given");
    std::filesystem::path csv = data;
    if (std::filesystem::is_directory(csv)) csv /= "data.csv";
    std::filesystem::path cfg = dataset_config.empty() ? csv.parent_path() / "dataset.json" : std::filesystem::path(dataset_config);
    return {csv, cfg};
}

// Loads (or generates) the dataset. Window sizes and split ratios come from
// the dataset config when the run config leaves L and H unset; otherwise the
// run config wins so the length check matches the experiment.
inline data::Dataset load_dataset(RunConfig& rc) {
    if (rc.synthetic) return data::generate_synthetic(*rc.synthetic);
    auto [csv, cfg_path] = resolve_data_paths(rc.data, rc.dataset_config);
    data::DatasetConfig dc = data::load_dataset_config(cfg_path);
    if (rc.window_from_dataset) {
        rc.experiment.L = dc.lookback;
        rc.experiment.H = dc.horizon;
        rc.experiment.train_ratio = dc.train_ratio;
        rc.experiment.val_ratio = dc.val_ratio;
        rc.window_from_dataset = false;
    }
    dc.lookback = rc.experiment.L;
    dc.horizon = rc.experiment.H;
    return data::load_csv(csv, dc);
}

}  // namespace perfts::config
