#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "volcon/trainer.hpp"

namespace volcon {

// Shipped defaults per variant: lr0 0.07, weight decay 1e-10, batch 32,
// 100 epochs, temperature 0.5; baseline/ps at D=224, ps omega 0.1 with
// fallback threshold 5; ds at D=128, omega 0.5, K=3, MLP set head.
TrainConfig preset_config(Variant v);

// Applies a JSON document of snake_case TrainConfig keys onto base.
// Unknown keys are rejected by name; augmentation settings live in a
// nested "augment" object.
TrainConfig apply_config_json(const TrainConfig& base, const nlohmann::json& doc);

// Reads the file and applies it onto base.
TrainConfig load_train_config(const std::string& path, const TrainConfig& base);

// Parses a JSON file; IoError when unreadable, ContractError when malformed.
nlohmann::json read_json_file(const std::string& path);

nlohmann::ordered_json augment_spec_to_json(const AugmentSpec& spec);

// Run manifest: what was trained, with what settings, and where the
// artifacts live. Window parameters that the variant does not use are null.
void write_manifest(const RunRecord& rec, const ScanDataset& data, const std::string& path);

// Rebuilds the model configuration from a manifest, enough to load the
// checkpoint next to it for evaluation.
ModelConfig model_config_from_manifest(const nlohmann::json& doc);
ModelConfig load_manifest_model_config(const std::string& path);

// A sweep: one base config, a list of key-override deltas, replicated over
// seeds, trained on one dataset and probed on a train/test split.
struct SweepSpec {
    TrainConfig base;
    std::vector<nlohmann::json> deltas;
    std::vector<std::uint64_t> seeds;
    std::string pretrain_data;
    std::string probe_train_data;
    std::string probe_test_data;
    double probe_l2 = 1e-4;
    std::size_t probe_iters = 2000;
};

void validate_sweep_spec(const SweepSpec& spec);
SweepSpec sweep_spec_from_json(const nlohmann::json& doc);
SweepSpec load_sweep_spec(const std::string& path);

}  // namespace volcon
