#include "volcon/sampling.hpp"

#include <string>

namespace volcon {

void validate_window_params(const WindowParams& p) {
    if (!(p.omega > 0.0 && p.omega <= 1.0))
        throw ContractError("WindowParams: omega must be in (0,1], got " +
                            std::to_string(p.omega));
    if (p.t_threshold < 1)
        throw ContractError("WindowParams: t_threshold must be >= 1");
    if (p.k_set < 1)
        throw ContractError("WindowParams: k_set must be >= 1");
}

PairSample sample_baseline(const ScanDataset& dataset, Rng& rng) {
    if (dataset.scans.empty())
        throw ContractError("sample_baseline: dataset is empty");
    const std::size_t total = dataset.total_slices();
    std::size_t pick = rng.below(total);
    SliceRef ref;
    for (std::size_t i = 0; i < dataset.scans.size(); ++i) {
        const std::size_t l = dataset.scans[i].num_slices();
        if (pick < l) {
            ref = SliceRef{i, pick};
            break;
        }
        pick -= l;
    }
    return PairSample{PairKind::BaselinePair, ref, ref};
}

std::pair<std::size_t, std::size_t> sample_window(std::size_t length, double omega,
                                                  Rng& rng) {
    if (length < 1) throw ContractError("sample_window: length must be >= 1");
    if (!(omega > 0.0 && omega <= 1.0))
        throw ContractError("sample_window: omega must be in (0,1]");
    const std::size_t w = static_cast<std::size_t>(
        std::max<long long>(1, round_half_up(omega * static_cast<double>(length))));
    const std::size_t start = rng.below(length - w + 1);
    return {start, start + w};
}

PairSample sample_ps_pair(const ScanDataset& dataset, std::size_t scan_index,
                          const WindowParams& params, Rng& rng) {
    if (scan_index >= dataset.scans.size())
        throw ContractError("sample_ps_pair: scan_index out of range");
    validate_window_params(params);
    const std::size_t l = dataset.scans[scan_index].num_slices();
    if (l < params.t_threshold) {
        const std::size_t j = rng.below(l);
        return PairSample{PairKind::BaselinePair, SliceRef{scan_index, j},
                          SliceRef{scan_index, j}};
    }
    const auto [start, end] = sample_window(l, params.omega, rng);
    const std::size_t width = end - start;
    const std::size_t a = start + rng.below(width);
    const std::size_t b = start + rng.below(width);
    return PairSample{PairKind::PsPair, SliceRef{scan_index, a},
                      SliceRef{scan_index, b}};
}

std::vector<std::size_t> equidistant_indices(const Window& window, std::size_t k) {
    if (k < 1) throw ContractError("equidistant_indices: k must be >= 1");
    if (window.end_exclusive <= window.start)
        throw ContractError("equidistant_indices: empty window");
    const std::size_t w = window.width();
    std::vector<std::size_t> out(k);
    if (k == 1) {
        out[0] = window.start + (w - 1) / 2;
        return out;
    }
    for (std::size_t l = 0; l < k; ++l) {
        const double pos = static_cast<double>(l) * static_cast<double>(w - 1) /
                           static_cast<double>(k - 1);
        out[l] = window.start + static_cast<std::size_t>(round_half_up(pos));
    }
    return out;
}

SetSample sample_ds_views(const ScanDataset& dataset, std::size_t scan_index,
                          const WindowParams& params, Rng& rng) {
    if (scan_index >= dataset.scans.size())
        throw ContractError("sample_ds_views: scan_index out of range");
    validate_window_params(params);
    const std::size_t l = dataset.scans[scan_index].num_slices();

    const auto [a_start, a_end] = sample_window(l, params.omega, rng);
    const auto [b_start, b_end] = sample_window(l, params.omega, rng);
    SetSample sample;
    sample.scan_index = scan_index;
    sample.set_a = equidistant_indices(Window{scan_index, a_start, a_end}, params.k_set);
    sample.set_b = equidistant_indices(Window{scan_index, b_start, b_end}, params.k_set);
    return sample;
}

std::size_t sample_scan_index(const ScanDataset& dataset, Rng& rng) {
    if (dataset.scans.empty())
        throw ContractError("sample_scan_index: dataset is empty");
    return rng.below(dataset.scans.size());
}

}  // namespace volcon
