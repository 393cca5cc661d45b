#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volcon/common.hpp"

namespace volcon {

// Read-only view of one slice, H x W x C row-major (channel fastest).
struct SliceView {
    const float* data = nullptr;
    std::size_t h = 0, w = 0, c = 0;

    float at(std::size_t y, std::size_t x, std::size_t ch) const {
        return data[(y * w + x) * c + ch];
    }
    std::size_t size() const { return h * w * c; }
};

// One 3D scan: an ordered stack of equally shaped 2D slices.
// Intensities are 32-bit floats in [0,1]. Label is optional so the same
// type serves unlabeled pretraining and labeled probing.
struct Scan {
    std::string id;
    std::size_t height = 0, width = 0, channels = 0;
    std::vector<std::vector<float>> slices;
    std::optional<std::uint16_t> label;

    std::size_t num_slices() const { return slices.size(); }
    SliceView slice_view(std::size_t j) const {
        return SliceView{slices[j].data(), height, width, channels};
    }
};

struct ScanDataset {
    std::string name;
    std::vector<Scan> scans;

    std::size_t num_scans() const { return scans.size(); }
    std::size_t total_slices() const {
        std::size_t n = 0;
        for (const auto& s : scans) n += s.num_slices();
        return n;
    }
};

struct SliceRef {
    std::size_t scan_index = 0;
    std::size_t slice_index = 0;

    bool operator==(const SliceRef&) const = default;
};

// Throws ContractError if any Scan/ScanDataset invariant is violated.
void validate_dataset(const ScanDataset& dataset);

// VOLC v1 binary persistence. All integers unsigned 32-bit little-endian,
// ids UTF-8, label flag one byte (value present only when flagged, as
// unsigned 16-bit), slice payload raw float32 little-endian in slice-major
// order after the full header. Round-trips bit-exactly.
void save_dataset(const ScanDataset& dataset, const std::string& path);
ScanDataset load_dataset(const std::string& path);

// Scan-major enumeration of every (scan, slice) pair.
std::vector<SliceRef> flatten(const ScanDataset& dataset);

// Channel count shared by every scan; mixed channel counts are a
// ContractError, since one model cannot consume both.
std::size_t dataset_channels(const ScanDataset& dataset);

// Deterministic labeled volumes for desk-scale experiments. Each scan gets
// a class (scan_index mod n_classes); slices within a scan drift smoothly
// along depth so adjacent slices correlate more than distant ones, and the
// class is recoverable from slice appearance.
ScanDataset generate_synthetic_dataset(std::size_t n_scans,
                                       std::size_t slices_per_scan,
                                       std::size_t h, std::size_t w,
                                       std::size_t c, std::size_t n_classes,
                                       std::uint64_t seed);

}  // namespace volcon
