#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volcon/config.hpp"
#include "volcon/model.hpp"
#include "volcon/scan_store.hpp"

namespace volcon {

struct FeatureRow {
    std::string scan_id;
    std::size_t slice_index = 0;
    std::uint16_t label = 0;
    std::vector<double> h;
};

struct FeatureTable {
    std::string split;  // "train" or "test"
    std::size_t dim = 0;
    std::vector<FeatureRow> rows;
};

// Deep-copies parameter values into a bundle that records no gradient
// graph, so repeated forward passes stay cheap.
ModelBundle frozen_copy(const ModelBundle& model);

// Center-crop/resize every slice to the model's input size and run the
// frozen encoder f; one row per slice, h only (no projection head).
// Every scan must be labeled.
FeatureTable extract_features(const ModelBundle& model, const ScanDataset& data,
                              const std::string& split, std::size_t batch_size = 32);

// Multinomial logistic regression on frozen features: full-batch gradient
// descent from zero weights with a fixed step 0.5/L derived from feature
// norms, bias column unregularised, stopping at gradient norm < 1e-6 or the
// iteration cap. Returns top-1 accuracy on the test split.
double linear_probe(const FeatureTable& train, const FeatureTable& test,
                    double l2_reg = 1e-4, std::size_t iters = 2000);

// Mean within-scan and across-scan cosine similarity of h. Reported by the
// verification harness; not a gate.
std::pair<double, double> cosine_alignment(const FeatureTable& table,
                                           std::size_t max_pairs = 20000,
                                           std::uint64_t seed = 99);

// Rebuilds a ModelBundle from a run directory's checkpoint.volp plus
// manifest.json, verifying the parameter names and shapes match the config.
ModelBundle load_model_checkpoint(const std::string& checkpoint_path,
                                  const std::string& manifest_path);

struct SweepCellResult {
    std::size_t delta_index = 0;
    TrainConfig cfg;     // base + delta, seed applied
    std::uint64_t seed = 0;
    double probe_accuracy = 0.0;      // NaN when the cell failed
    double final_pretrain_loss = 0.0; // NaN when the cell failed
    double wall_seconds = 0.0;
    std::string error;                // nonempty when the cell failed
};

// Pretrains and probes every delta x seed cell. Cells run on up to
// VOLCON_THREADS workers (default: hardware concurrency); each failure is
// recorded in its cell and the sweep continues.
std::vector<SweepCellResult> run_sweep(const SweepSpec& spec);

// columns: variant,K,omega,T,ds_head,D,seed,probe_accuracy,final_pretrain_loss,wall_seconds
// Parameters a variant does not use are left empty.
void write_sweep_csv(const std::vector<SweepCellResult>& cells, const std::string& path);

}  // namespace volcon
