#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "volcon/common.hpp"
#include "volcon/scan_store.hpp"

namespace volcon {

// Hyperparameters of the window-based samplers: sampling width omega,
// fallback threshold T, and set size K.
struct WindowParams {
    double omega = 0.5;
    std::size_t t_threshold = 5;
    std::size_t k_set = 3;
};

void validate_window_params(const WindowParams& p);

// Contiguous slice range [start, end_exclusive) inside one scan.
struct Window {
    std::size_t scan_index = 0;
    std::size_t start = 0;
    std::size_t end_exclusive = 0;

    std::size_t width() const { return end_exclusive - start; }
};

enum class PairKind { BaselinePair, PsPair };

// A positive pair of slice references. BaselinePair: both refs identical
// (views diverge only through augmentation). PsPair: same scan, drawn from
// one window.
struct PairSample {
    PairKind kind = PairKind::BaselinePair;
    SliceRef first;
    SliceRef second;
};

// Two equidistant slice-index sets drawn from two independent windows of
// the same scan.
struct SetSample {
    std::size_t scan_index = 0;
    std::vector<std::size_t> set_a;
    std::vector<std::size_t> set_b;
};

// One slice uniform over flatten(dataset); first == second.
PairSample sample_baseline(const ScanDataset& dataset, Rng& rng);

// Window of width max(1, round(omega * length)) placed uniformly inside
// [0, length). Returns (start, end_exclusive).
std::pair<std::size_t, std::size_t> sample_window(std::size_t length, double omega,
                                                  Rng& rng);

// Two slices from one random window of scan `scan_index`; reverts to the
// baseline strategy (same slice twice) when the scan is shorter than T.
PairSample sample_ps_pair(const ScanDataset& dataset, std::size_t scan_index,
                          const WindowParams& params, Rng& rng);

// K equidistant indices across a window; the single index for K=1 is the
// window midpoint, and K larger than the width repeats indices.
std::vector<std::size_t> equidistant_indices(const Window& window, std::size_t k);

// Two independent windows on one scan, each reduced to K equidistant slices.
SetSample sample_ds_views(const ScanDataset& dataset, std::size_t scan_index,
                          const WindowParams& params, Rng& rng);

// Uniform scan choice used when iterating PS/DS samplers over a dataset.
std::size_t sample_scan_index(const ScanDataset& dataset, Rng& rng);

}  // namespace volcon
