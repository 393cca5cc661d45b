#include "volcon/scan_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_set>

namespace volcon {

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

std::uint32_t read_u32(std::istream& in, const char* field) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(std::string("VOLC: truncated while reading ") + field);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in, const char* field) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw FormatError(std::string("VOLC: truncated while reading ") + field);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void validate_dataset(const ScanDataset& dataset) {
    if (dataset.scans.empty())
        throw ContractError("ScanDataset: must contain at least one scan");
    std::unordered_set<std::string> ids;
    for (const auto& scan : dataset.scans) {
        if (!ids.insert(scan.id).second)
            throw ContractError("ScanDataset: duplicate scan id '" + scan.id + "'");
        if (scan.height == 0 || scan.width == 0 || scan.channels == 0)
            throw ContractError("Scan '" + scan.id + "': dimensions must be positive");
        if (scan.slices.empty())
            throw ContractError("Scan '" + scan.id + "': slice count must be >= 1");
        const std::size_t expected = scan.height * scan.width * scan.channels;
        for (std::size_t j = 0; j < scan.slices.size(); ++j) {
            if (scan.slices[j].size() != expected)
                throw ContractError("Scan '" + scan.id + "': slice " + std::to_string(j) +
                                    " has wrong element count");
            for (float v : scan.slices[j]) {
                if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
                    throw ContractError("Scan '" + scan.id + "': slice " +
                                        std::to_string(j) +
                                        " has intensity outside [0,1]");
            }
        }
    }
}

void save_dataset(const ScanDataset& dataset, const std::string& path) {
    validate_dataset(dataset);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_dataset: cannot open '" + path + "' for writing");

    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(dataset.scans.size()));
    for (const auto& scan : dataset.scans) {
        write_u32(out, static_cast<std::uint32_t>(scan.id.size()));
        out.write(scan.id.data(), static_cast<std::streamsize>(scan.id.size()));
        write_u32(out, static_cast<std::uint32_t>(scan.slices.size()));
        write_u32(out, static_cast<std::uint32_t>(scan.height));
        write_u32(out, static_cast<std::uint32_t>(scan.width));
        write_u32(out, static_cast<std::uint32_t>(scan.channels));
        out.put(scan.label.has_value() ? '\1' : '\0');
        if (scan.label.has_value()) write_u16(out, *scan.label);
    }
    for (const auto& scan : dataset.scans)
        for (const auto& slice : scan.slices)
            for (float v : slice) write_f32(out, v);

    out.flush();
    if (!out) throw IoError("save_dataset: write failure on '" + path + "'");
}

ScanDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_dataset: cannot open '" + path + "'");

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("VOLC: bad magic in '" + path + "'");
    const std::uint32_t version = read_u32(in, "version");
    if (version != kVersion)
        throw FormatError("VOLC: unsupported version " + std::to_string(version));

    const std::uint32_t n = read_u32(in, "scan count");
    if (n == 0) throw FormatError("VOLC: scan count must be >= 1");

    ScanDataset dataset;
    dataset.name = std::filesystem::path(path).stem().string();
    dataset.scans.resize(n);
    for (auto& scan : dataset.scans) {
        const std::uint32_t id_len = read_u32(in, "id length");
        scan.id.resize(id_len);
        in.read(scan.id.data(), id_len);
        if (!in) throw FormatError("VOLC: truncated while reading scan id");
        const std::uint32_t l = read_u32(in, "slice count");
        scan.height = read_u32(in, "height");
        scan.width = read_u32(in, "width");
        scan.channels = read_u32(in, "channels");
        if (l == 0) throw FormatError("VOLC: slice count must be >= 1 in scan '" + scan.id + "'");
        if (scan.height == 0 || scan.width == 0 || scan.channels == 0)
            throw FormatError("VOLC: zero dimension in scan '" + scan.id + "'");
        const int flag = in.get();
        if (flag == EOF) throw FormatError("VOLC: truncated while reading label flag");
        if (flag != 0 && flag != 1)
            throw FormatError("VOLC: label flag must be 0 or 1 in scan '" + scan.id + "'");
        if (flag == 1) scan.label = read_u16(in, "label");
        scan.slices.resize(l);
    }
    for (auto& scan : dataset.scans) {
        const std::size_t elems = scan.height * scan.width * scan.channels;
        for (std::size_t j = 0; j < scan.slices.size(); ++j) {
            auto& slice = scan.slices[j];
            slice.resize(elems);
            in.read(reinterpret_cast<char*>(slice.data()),
                    static_cast<std::streamsize>(elems * sizeof(float)));
            if (!in) throw FormatError("VOLC: truncated slice data in scan '" + scan.id + "'");
            for (float v : slice) {
                if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
                    throw FormatError("VOLC: intensity outside [0,1] in scan '" +
                                      scan.id + "' slice " + std::to_string(j));
            }
        }
    }
    validate_dataset(dataset);
    return dataset;
}

std::vector<SliceRef> flatten(const ScanDataset& dataset) {
    std::vector<SliceRef> refs;
    refs.reserve(dataset.total_slices());
    for (std::size_t i = 0; i < dataset.scans.size(); ++i)
        for (std::size_t j = 0; j < dataset.scans[i].num_slices(); ++j)
            refs.push_back(SliceRef{i, j});
    return refs;
}

std::size_t dataset_channels(const ScanDataset& dataset) {
    if (dataset.scans.empty()) throw ContractError("dataset_channels: empty dataset");
    const std::size_t c = dataset.scans.front().channels;
    for (const auto& s : dataset.scans)
        if (s.channels != c)
            throw ContractError("dataset_channels: scan '" + s.id + "' has " +
                                std::to_string(s.channels) + " channels, expected " +
                                std::to_string(c));
    return c;
}

namespace {

// One sinusoidal grating component of a synthetic scan.
struct Grating {
    double fx, fy;      // spatial frequency, cycles per unit coordinate
    double phase;       // initial phase
    double phase_rate;  // phase drift per slice along depth
    double weight;
};

}  // namespace

ScanDataset generate_synthetic_dataset(std::size_t n_scans,
                                       std::size_t slices_per_scan,
                                       std::size_t h, std::size_t w,
                                       std::size_t c, std::size_t n_classes,
                                       std::uint64_t seed) {
    if (n_scans == 0 || slices_per_scan == 0 || h == 0 || w == 0 || c == 0 ||
        n_classes == 0)
        throw ContractError("generate_synthetic_dataset: all dimensions must be >= 1");

    constexpr std::size_t kComponents = 4;

    // Class-level texture parameters. Every class draws from the same
    // frequency band; what separates classes is the orientation of the
    // gratings. That keeps pooled energy statistics (which any random
    // encoder picks up for free) nearly class-independent, so telling
    // classes apart requires orientation-sensitive features.
    struct ClassParams {
        double freqs[kComponents];
        double angles[kComponents];
    };
    std::vector<ClassParams> classes(n_classes);
    for (std::size_t k = 0; k < n_classes; ++k) {
        Rng crng(derive_seed(seed, 101, k));
        for (std::size_t m = 0; m < kComponents; ++m) {
            classes[k].freqs[m] = 2.8 * crng.uniform(0.85, 1.15);
            classes[k].angles[m] =
                kPi * (static_cast<double>(k) / static_cast<double>(n_classes)) +
                crng.uniform(-0.25, 0.25);
        }
    }

    ScanDataset dataset;
    dataset.name = "synthetic";
    dataset.scans.resize(n_scans);

    for (std::size_t i = 0; i < n_scans; ++i) {
        const std::size_t cls = i % n_classes;
        Rng rng(derive_seed(seed, 202, i));
        Scan& scan = dataset.scans[i];
        scan.id = "scan_" + std::to_string(i);
        scan.height = h;
        scan.width = w;
        scan.channels = c;
        scan.label = static_cast<std::uint16_t>(cls);

        // Scan-specific jitter of the class texture, plus a smooth background
        // blob so scans of one class still differ from each other.
        Grating comps[kComponents];
        for (std::size_t m = 0; m < kComponents; ++m) {
            const double freq = classes[cls].freqs[m] * rng.uniform(0.92, 1.08);
            const double angle = classes[cls].angles[m] + rng.uniform(-0.12, 0.12);
            comps[m].fx = freq * std::cos(angle);
            comps[m].fy = freq * std::sin(angle);
            comps[m].phase = rng.uniform(0.0, 2.0 * kPi);
            comps[m].phase_rate = rng.uniform(0.05, 0.16);
            comps[m].weight = rng.uniform(0.6, 1.0);
        }
        const double blob_cx = rng.uniform(0.2, 0.8);
        const double blob_cy = rng.uniform(0.2, 0.8);
        const double blob_r = rng.uniform(0.15, 0.35);
        const double blob_amp = rng.uniform(-0.12, 0.12);
        const double blob_drift = rng.uniform(-0.01, 0.01);

        // Per-scan gain and offset nuisance, independent of the class. This
        // dominates raw intensity statistics, so features that only measure
        // brightness or contrast say little about the label.
        const double gain = rng.uniform(0.55, 1.45);
        const double offset = rng.uniform(-0.15, 0.15);

        double weight_sum = 0.0;
        for (const auto& g : comps) weight_sum += g.weight;

        scan.slices.assign(slices_per_scan, std::vector<float>(h * w * c));
        for (std::size_t j = 0; j < slices_per_scan; ++j) {
            auto& slice = scan.slices[j];
            const double depth = static_cast<double>(j);
            for (std::size_t y = 0; y < h; ++y) {
                const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
                for (std::size_t x = 0; x < w; ++x) {
                    const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
                    double tex = 0.0;
                    for (const auto& g : comps)
                        tex += g.weight * std::sin(2.0 * kPi * (g.fx * u + g.fy * v) +
                                                   g.phase + g.phase_rate * depth);
                    tex /= weight_sum;
                    const double dx = u - (blob_cx + blob_drift * depth);
                    const double dy = v - blob_cy;
                    const double blob =
                        blob_amp * std::exp(-(dx * dx + dy * dy) / (2.0 * blob_r * blob_r));
                    const double noise = 0.015 * rng.normal();
                    double value = 0.5 + offset + 0.32 * gain * tex + blob + noise;
                    value = std::clamp(value, 0.0, 1.0);
                    for (std::size_t ch = 0; ch < c; ++ch)
                        slice[(y * w + x) * c + ch] = static_cast<float>(value);
                }
            }
        }
    }
    return dataset;
}

}  // namespace volcon
