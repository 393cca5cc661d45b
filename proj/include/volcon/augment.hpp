#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "volcon/common.hpp"
#include "volcon/scan_store.hpp"

namespace volcon {

// View-generation pipeline: crop -> bilinear resize to D x D -> horizontal
// flip -> Gaussian blur -> brightness/contrast jitter -> clip to [0,1].
struct AugmentSpec {
    std::size_t out_size = 224;                       // D
    std::pair<double, double> crop_scale = {0.2, 1.0};  // area fraction range
    double hflip_prob = 0.5;
    double blur_prob = 0.5;
    std::pair<double, double> blur_sigma = {0.1, 2.0};
    double jitter_strength = 0.4;
    bool crop_enabled = true;
    bool flip_enabled = true;
    bool blur_enabled = true;
    bool jitter_enabled = true;
    // Whether the set variant shares the full transform draw across members
    // (flip/blur/jitter too) or only the crop location.
    bool share_full_transform = true;
};

void validate_augment_spec(const AugmentSpec& spec);

struct CropBox {
    std::size_t top = 0, left = 0, height = 0, width = 0;
};

// One concrete draw from the pipeline's parameter space.
struct AugmentParams {
    CropBox crop;
    bool flip = false;
    bool blur = false;
    double blur_sigma = 0.0;
    double brightness = 1.0;
    double contrast = 1.0;
};

// Samples crop box (area fraction uniform in crop_scale, aspect ratio
// uniform in [3/4, 4/3], up to 10 tries then center-crop fallback), flip
// coin, blur sigma, jitter factors. Deterministic per rng state.
AugmentParams draw_params(const AugmentSpec& spec,
                          std::pair<std::size_t, std::size_t> source_hw, Rng& rng);

// Applies a fixed parameter draw. Output is out_size x out_size x C, HWC
// row-major, finite, in [0,1].
std::vector<float> apply(const AugmentSpec& spec, const AugmentParams& params,
                         const SliceView& slice);

// DS variant: ONE parameter draw applied to every slice of the set. With
// share_full_transform false, only the crop box (and resize) is shared and
// flip/blur/jitter are redrawn per member.
std::vector<std::vector<float>> apply_set(const AugmentSpec& spec,
                                          const std::vector<SliceView>& slices,
                                          Rng& rng);

// Deterministic center-square crop + resize, used by evaluation.
std::vector<float> center_crop_resize(const SliceView& slice, std::size_t out_size);

}  // namespace volcon
