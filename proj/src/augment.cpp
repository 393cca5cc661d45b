#include "volcon/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace volcon {

void validate_augment_spec(const AugmentSpec& spec) {
    if (spec.out_size < 8)
        throw ContractError("AugmentSpec: out_size must be >= 8");
    if (!(spec.crop_scale.first > 0.0 && spec.crop_scale.first <= spec.crop_scale.second &&
          spec.crop_scale.second <= 1.0))
        throw ContractError("AugmentSpec: crop_scale must satisfy 0 < low <= high <= 1");
    if (spec.hflip_prob < 0.0 || spec.hflip_prob > 1.0)
        throw ContractError("AugmentSpec: hflip_prob must be in [0,1]");
    if (spec.blur_prob < 0.0 || spec.blur_prob > 1.0)
        throw ContractError("AugmentSpec: blur_prob must be in [0,1]");
    if (!(spec.blur_sigma.first > 0.0 && spec.blur_sigma.first <= spec.blur_sigma.second))
        throw ContractError("AugmentSpec: blur_sigma must satisfy 0 < low <= high");
    if (spec.jitter_strength < 0.0)
        throw ContractError("AugmentSpec: jitter_strength must be >= 0");
}

namespace {

CropBox center_square(std::size_t h, std::size_t w) {
    const std::size_t side = std::min(h, w);
    return CropBox{(h - side) / 2, (w - side) / 2, side, side};
}

CropBox draw_crop(const AugmentSpec& spec, std::size_t h, std::size_t w, Rng& rng) {
    const double area = static_cast<double>(h) * static_cast<double>(w);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target_area =
            area * rng.uniform(spec.crop_scale.first, spec.crop_scale.second);
        const double aspect = rng.uniform(3.0 / 4.0, 4.0 / 3.0);
        const auto cw = static_cast<std::size_t>(round_half_up(std::sqrt(target_area * aspect)));
        const auto ch = static_cast<std::size_t>(round_half_up(std::sqrt(target_area / aspect)));
        if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
            const std::size_t top = rng.below(h - ch + 1);
            const std::size_t left = rng.below(w - cw + 1);
            return CropBox{top, left, ch, cw};
        }
    }
    return center_square(h, w);
}

void draw_photometric(const AugmentSpec& spec, Rng& rng, AugmentParams& p) {
    p.flip = spec.flip_enabled && rng.bernoulli(spec.hflip_prob);
    p.blur = spec.blur_enabled && rng.bernoulli(spec.blur_prob);
    p.blur_sigma = p.blur ? rng.uniform(spec.blur_sigma.first, spec.blur_sigma.second) : 0.0;
    if (spec.jitter_enabled && spec.jitter_strength > 0.0) {
        const double lo = std::max(0.0, 1.0 - spec.jitter_strength);
        const double hi = 1.0 + spec.jitter_strength;
        p.brightness = rng.uniform(lo, hi);
        p.contrast = rng.uniform(lo, hi);
    } else {
        p.brightness = 1.0;
        p.contrast = 1.0;
    }
}

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

// Crop region of the source, bilinearly resampled to out x out with
// half-pixel centers, clamped to the crop edges. HWC output.
std::vector<float> resample(const SliceView& s, const CropBox& box, std::size_t out) {
    std::vector<float> dst(out * out * s.c);
    const double sy_scale = static_cast<double>(box.height) / static_cast<double>(out);
    const double sx_scale = static_cast<double>(box.width) / static_cast<double>(out);
    const double y_max = static_cast<double>(box.top + box.height - 1);
    const double x_max = static_cast<double>(box.left + box.width - 1);
    for (std::size_t dy = 0; dy < out; ++dy) {
        double sy = static_cast<double>(box.top) +
                    (static_cast<double>(dy) + 0.5) * sy_scale - 0.5;
        sy = std::clamp(sy, static_cast<double>(box.top), y_max);
        const auto y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, box.top + box.height - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t dx = 0; dx < out; ++dx) {
            double sx = static_cast<double>(box.left) +
                        (static_cast<double>(dx) + 0.5) * sx_scale - 0.5;
            sx = std::clamp(sx, static_cast<double>(box.left), x_max);
            const auto x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, box.left + box.width - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < s.c; ++ch) {
                const double top_v = lerp(s.at(y0, x0, ch), s.at(y0, x1, ch), fx);
                const double bot_v = lerp(s.at(y1, x0, ch), s.at(y1, x1, ch), fx);
                dst[(dy * out + dx) * s.c + ch] = static_cast<float>(lerp(top_v, bot_v, fy));
            }
        }
    }
    return dst;
}

void flip_horizontal(std::vector<float>& img, std::size_t d, std::size_t c) {
    for (std::size_t y = 0; y < d; ++y)
        for (std::size_t x = 0; x < d / 2; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                std::swap(img[(y * d + x) * c + ch], img[(y * d + (d - 1 - x)) * c + ch]);
}

// Separable Gaussian, clamp-to-edge.
void gaussian_blur(std::vector<float>& img, std::size_t d, std::size_t c, double sigma) {
    const auto radius = static_cast<std::size_t>(
        std::max(1.0, std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < kernel.size(); ++i) {
        const double u = static_cast<double>(i) - static_cast<double>(radius);
        kernel[i] = std::exp(-u * u / (2.0 * sigma * sigma));
        sum += kernel[i];
    }
    for (auto& k : kernel) k /= sum;

    const auto di = static_cast<long long>(d);
    std::vector<float> tmp(img.size());
    for (long long y = 0; y < di; ++y)
        for (long long x = 0; x < di; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t i = 0; i < kernel.size(); ++i) {
                    const long long sx = std::clamp(
                        x + static_cast<long long>(i) - static_cast<long long>(radius),
                        0LL, di - 1);
                    acc += kernel[i] * img[(y * di + sx) * static_cast<long long>(c) + ch];
                }
                tmp[(y * di + x) * static_cast<long long>(c) + ch] = static_cast<float>(acc);
            }
    for (long long x = 0; x < di; ++x)
        for (long long y = 0; y < di; ++y)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t i = 0; i < kernel.size(); ++i) {
                    const long long sy = std::clamp(
                        y + static_cast<long long>(i) - static_cast<long long>(radius),
                        0LL, di - 1);
                    acc += kernel[i] * tmp[(sy * di + x) * static_cast<long long>(c) + ch];
                }
                img[(y * di + x) * static_cast<long long>(c) + ch] = static_cast<float>(acc);
            }
}

// Multiplicative brightness, then contrast about the post-brightness mean.
void intensity_jitter(std::vector<float>& img, double brightness, double contrast) {
    double mean = 0.0;
    for (auto& v : img) {
        v = static_cast<float>(static_cast<double>(v) * brightness);
        mean += v;
    }
    mean /= static_cast<double>(img.size());
    for (auto& v : img)
        v = static_cast<float>(mean + (static_cast<double>(v) - mean) * contrast);
}

void clip01(std::vector<float>& img) {
    for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

AugmentParams draw_params(const AugmentSpec& spec,
                          std::pair<std::size_t, std::size_t> source_hw, Rng& rng) {
    validate_augment_spec(spec);
    const auto [h, w] = source_hw;
    if (h < 1 || w < 1)
        throw ContractError("draw_params: source must be at least 1x1");
    AugmentParams p;
    p.crop = spec.crop_enabled ? draw_crop(spec, h, w, rng) : CropBox{0, 0, h, w};
    draw_photometric(spec, rng, p);
    return p;
}

std::vector<float> apply(const AugmentSpec& spec, const AugmentParams& params,
                         const SliceView& slice) {
    validate_augment_spec(spec);
    const CropBox& box = params.crop;
    if (box.height < 1 || box.width < 1 || box.top + box.height > slice.h ||
        box.left + box.width > slice.w)
        throw ContractError("apply: crop box out of bounds for " +
                            std::to_string(slice.h) + "x" + std::to_string(slice.w) +
                            " slice");
    std::vector<float> img = resample(slice, box, spec.out_size);
    if (params.flip) flip_horizontal(img, spec.out_size, slice.c);
    if (params.blur) gaussian_blur(img, spec.out_size, slice.c, params.blur_sigma);
    if (params.brightness != 1.0 || params.contrast != 1.0)
        intensity_jitter(img, params.brightness, params.contrast);
    clip01(img);
    return img;
}

std::vector<std::vector<float>> apply_set(const AugmentSpec& spec,
                                          const std::vector<SliceView>& slices,
                                          Rng& rng) {
    if (slices.empty()) throw ContractError("apply_set: empty slice set");
    for (const auto& s : slices)
        if (s.h != slices[0].h || s.w != slices[0].w || s.c != slices[0].c)
            throw ContractError("apply_set: slices must share one shape");

    AugmentParams params = draw_params(spec, {slices[0].h, slices[0].w}, rng);
    std::vector<std::vector<float>> out;
    out.reserve(slices.size());
    for (std::size_t i = 0; i < slices.size(); ++i) {
        if (i > 0 && !spec.share_full_transform) draw_photometric(spec, rng, params);
        out.push_back(apply(spec, params, slices[i]));
    }
    return out;
}

std::vector<float> center_crop_resize(const SliceView& slice, std::size_t out_size) {
    if (slice.h < 1 || slice.w < 1 || out_size < 1)
        throw ContractError("center_crop_resize: invalid dimensions");
    return resample(slice, center_square(slice.h, slice.w), out_size);
}

}  // namespace volcon
