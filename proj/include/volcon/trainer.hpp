#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volcon/augment.hpp"
#include "volcon/model.hpp"
#include "volcon/sampling.hpp"
#include "volcon/scan_store.hpp"
#include "volcon/tensor.hpp"

namespace volcon {

struct TrainConfig {
    Variant variant = Variant::Baseline;
    std::size_t epochs = 100;
    std::size_t steps_per_epoch = 0;  // 0: ceil(total_slices / batch_size)
    std::size_t batch_size = 32;
    double lr0 = 0.07;
    double weight_decay = 1e-10;
    double temperature = 0.5;
    std::size_t image_size = 224;  // D
    std::size_t feature_dim = 64;
    std::size_t proj_dim = 32;
    std::size_t base_channels = 8;
    DsHeadKind ds_head = DsHeadKind::Identity;
    WindowParams window;   // omega, t_threshold, k_set
    AugmentSpec augment;   // out_size is overridden by image_size at run time
    std::uint64_t seed = 1;
    std::string out_dir;   // empty: train in memory, write no artifacts
};

void validate_train_config(const TrainConfig& cfg);

// Assembles the model configuration; channel count comes from the dataset.
ModelConfig model_config_for(const TrainConfig& cfg, std::size_t in_channels);

// The default schedule length: one pass worth of slices per epoch.
std::size_t resolve_steps_per_epoch(const TrainConfig& cfg, const ScanDataset& data);

// lr0 * (1 + cos(pi * step / total_steps)) / 2, no warmup.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

// Classic Adam with the L2 term folded into the gradient (g + wd * theta),
// bias-corrected, epsilon outside the square root. One state slot per
// parameter tensor; t increments once per call.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t t = 0;
};

AdamState init_adam(const ParamStore& params);
void adam_step(ParamStore& params, AdamState& state, double lr, double weight_decay,
               double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

struct StepStat {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct RunRecord {
    std::vector<StepStat> history;  // length = epochs * steps_per_epoch
    ModelBundle model;
    TrainConfig config;
    std::size_t steps_per_epoch = 0;  // resolved value
    double final_loss = 0.0;
    double wall_seconds = 0.0;
    std::string history_path;
    std::string checkpoint_path;
    std::string manifest_path;
};

// One step's augmented views as model-ready tensors. For the pair variants
// x1/x2 are [B, C, D, D] and k == 1; for the set variant they are
// [B*k, C, D, D] with each set's slices contiguous. A pure function of
// (data, cfg, step): reassembling the same step yields identical tensors.
struct ViewBatch {
    Tensor x1;
    Tensor x2;
    std::size_t k = 1;
};

ViewBatch assemble_batch(const ScanDataset& data, const TrainConfig& cfg, std::size_t step);

// Full pretraining loop: per step assemble, forward the variant's loss,
// backward, Adam with cosine decay. Aborts with the step index on any
// non-finite loss. When out_dir is set, writes history.csv, checkpoint.volp
// and manifest.json there.
RunRecord pretrain(const ScanDataset& data, const TrainConfig& cfg);

void write_history_csv(const std::vector<StepStat>& history, const std::string& path);

}  // namespace volcon
