#include "volcon/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#include "volcon/augment.hpp"
#include "volcon/trainer.hpp"

namespace volcon {

ModelBundle frozen_copy(const ModelBundle& model) {
    ModelBundle frozen;
    frozen.cfg = model.cfg;
    for (const auto& [name, t] : model.params.items)
        frozen.params.add(name, Tensor::from_data(t.shape(), t.data(), false));
    return frozen;
}

FeatureTable extract_features(const ModelBundle& model, const ScanDataset& data,
                              const std::string& split, std::size_t batch_size) {
    if (batch_size == 0) throw ContractError("extract_features: batch_size must be >= 1");
    if (data.num_scans() == 0) throw ContractError("extract_features: empty dataset");
    for (const auto& s : data.scans)
        if (!s.label)
            throw ContractError("extract_features: scan '" + s.id + "' has no label");
    const std::size_t channels = dataset_channels(data);
    if (channels != model.cfg.in_channels)
        throw ContractError("extract_features: dataset has " + std::to_string(channels) +
                            " channels, model expects " +
                            std::to_string(model.cfg.in_channels));

    const ModelBundle frozen = frozen_copy(model);
    const std::size_t d = frozen.cfg.image_size;
    const auto refs = flatten(data);

    FeatureTable table;
    table.split = split;
    table.dim = frozen.cfg.feature_dim;
    table.rows.reserve(refs.size());

    std::vector<double> batch_values;
    std::vector<const SliceRef*> batch_refs;
    auto flush = [&]() {
        if (batch_refs.empty()) return;
        Tensor x = Tensor::from_data({batch_refs.size(), channels, d, d},
                                     std::move(batch_values), false);
        Tensor h = encode_batch(frozen, x);
        for (std::size_t i = 0; i < batch_refs.size(); ++i) {
            const Scan& scan = data.scans[batch_refs[i]->scan_index];
            FeatureRow row;
            row.scan_id = scan.id;
            row.slice_index = batch_refs[i]->slice_index;
            row.label = *scan.label;
            row.h.assign(h.data().begin() + static_cast<std::ptrdiff_t>(i * table.dim),
                         h.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * table.dim));
            table.rows.push_back(std::move(row));
        }
        batch_values.clear();
        batch_refs.clear();
    };

    for (const auto& ref : refs) {
        const SliceView view = data.scans[ref.scan_index].slice_view(ref.slice_index);
        const std::vector<float> img = center_crop_resize(view, d);
        // HWC -> CHW, appended onto the pending batch.
        const std::size_t base = batch_values.size();
        batch_values.resize(base + channels * d * d);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t y = 0; y < d; ++y)
                for (std::size_t x = 0; x < d; ++x)
                    batch_values[base + (c * d + y) * d + x] =
                        static_cast<double>(img[(y * d + x) * channels + c]);
        batch_refs.push_back(&ref);
        if (batch_refs.size() == batch_size) flush();
    }
    flush();
    return table;
}

double linear_probe(const FeatureTable& train, const FeatureTable& test, double l2_reg,
                    std::size_t iters) {
    if (train.rows.empty() || test.rows.empty())
        throw ContractError("linear_probe: both splits must be nonempty");
    if (train.dim != test.dim)
        throw ContractError("linear_probe: feature dims differ (" +
                            std::to_string(train.dim) + " vs " + std::to_string(test.dim) + ")");
    if (!(l2_reg >= 0.0)) throw ContractError("linear_probe: l2_reg must be >= 0");
    if (iters == 0) throw ContractError("linear_probe: iters must be >= 1");

    std::vector<std::uint16_t> class_labels;
    for (const auto& r : train.rows) class_labels.push_back(r.label);
    std::sort(class_labels.begin(), class_labels.end());
    class_labels.erase(std::unique(class_labels.begin(), class_labels.end()),
                       class_labels.end());
    const std::size_t n_classes = class_labels.size();
    if (n_classes < 2)
        throw ContractError("linear_probe: train split has a single class");
    auto class_of = [&](std::uint16_t label) {
        const auto it = std::lower_bound(class_labels.begin(), class_labels.end(), label);
        return (it != class_labels.end() && *it == label)
                   ? static_cast<std::ptrdiff_t>(it - class_labels.begin())
                   : static_cast<std::ptrdiff_t>(-1);
    };

    const std::size_t n = train.rows.size();
    const std::size_t f = train.dim + 1;  // bias column appended
    std::vector<double> x(n * f);
    std::vector<std::size_t> y(n);
    double mean_sq_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 1.0;  // the bias coordinate
        for (std::size_t j = 0; j + 1 < f; ++j) {
            const double v = train.rows[i].h[j];
            x[i * f + j] = v;
            sq += v * v;
        }
        x[i * f + (f - 1)] = 1.0;
        y[i] = static_cast<std::size_t>(class_of(train.rows[i].label));
        mean_sq_norm += sq / static_cast<double>(n);
    }

    // Gradient of the objective is (0.5 * mean||x||^2 + l2)-Lipschitz in W.
    const double lips = 0.5 * mean_sq_norm + l2_reg;
    const double step = 0.5 / lips;

    std::vector<double> w(f * n_classes, 0.0);
    std::vector<double> grad(f * n_classes);
    std::vector<double> logits(n_classes);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t it = 0; it < iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = x.data() + i * f;
            for (std::size_t c = 0; c < n_classes; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < f; ++j) acc += xi[j] * w[j * n_classes + c];
                logits[c] = acc;
            }
            const double mx = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (auto& v : logits) {
                v = std::exp(v - mx);
                sum += v;
            }
            for (std::size_t c = 0; c < n_classes; ++c) {
                const double residual = (logits[c] / sum - (c == y[i] ? 1.0 : 0.0)) * inv_n;
                if (residual == 0.0) continue;
                for (std::size_t j = 0; j < f; ++j)
                    grad[j * n_classes + c] += residual * xi[j];
            }
        }
        if (l2_reg > 0.0)
            for (std::size_t j = 0; j + 1 < f; ++j)  // bias row unregularised
                for (std::size_t c = 0; c < n_classes; ++c)
                    grad[j * n_classes + c] += l2_reg * w[j * n_classes + c];
        double norm_sq = 0.0;
        for (double g : grad) norm_sq += g * g;
        if (std::sqrt(norm_sq) < 1e-6) break;
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= step * grad[j];
    }

    std::size_t correct = 0;
    for (const auto& row : test.rows) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n_classes; ++c) {
            double acc = w[(f - 1) * n_classes + c];
            for (std::size_t j = 0; j + 1 < f; ++j) acc += row.h[j] * w[j * n_classes + c];
            if (acc > best_score) {
                best_score = acc;
                best = c;
            }
        }
        if (class_labels[best] == row.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.rows.size());
}

std::pair<double, double> cosine_alignment(const FeatureTable& table, std::size_t max_pairs,
                                           std::uint64_t seed) {
    std::map<std::string, std::vector<const FeatureRow*>> by_scan;
    for (const auto& r : table.rows) by_scan[r.scan_id].push_back(&r);
    if (by_scan.size() < 2)
        throw ContractError("cosine_alignment: need at least two scans");

    auto cosine = [&](const FeatureRow& a, const FeatureRow& b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < table.dim; ++j) {
            dot += a.h[j] * b.h[j];
            na += a.h[j] * a.h[j];
            nb += b.h[j] * b.h[j];
        }
        const double denom = std::sqrt(na) * std::sqrt(nb);
        return denom > 0.0 ? dot / denom : 0.0;
    };

    double within_sum = 0.0;
    std::size_t within_count = 0;
    for (const auto& [id, rows] : by_scan)
        for (std::size_t a = 0; a < rows.size() && within_count < max_pairs; ++a)
            for (std::size_t b = a + 1; b < rows.size() && within_count < max_pairs; ++b) {
                within_sum += cosine(*rows[a], *rows[b]);
                ++within_count;
            }

    Rng rng(derive_seed(seed, 31));
    double across_sum = 0.0;
    std::size_t across_count = 0;
    const auto& all = table.rows;
    while (across_count < max_pairs) {
        const auto& a = all[rng.below(all.size())];
        const auto& b = all[rng.below(all.size())];
        if (a.scan_id == b.scan_id) continue;
        across_sum += cosine(a, b);
        ++across_count;
    }
    return {within_sum / static_cast<double>(within_count),
            across_sum / static_cast<double>(across_count)};
}

ModelBundle load_model_checkpoint(const std::string& checkpoint_path,
                                  const std::string& manifest_path) {
    const ModelConfig cfg = load_manifest_model_config(manifest_path);
    ParamStore loaded = load_params(checkpoint_path);

    // The manifest's config must describe exactly the tensors in the file.
    const ModelBundle expected = init_model(cfg, 0);
    if (expected.params.items.size() != loaded.items.size())
        throw FormatError("checkpoint '" + checkpoint_path + "' holds " +
                          std::to_string(loaded.items.size()) + " tensors, manifest expects " +
                          std::to_string(expected.params.items.size()));
    for (const auto& [name, t] : expected.params.items) {
        const Tensor* got = loaded.find(name);
        if (!got)
            throw FormatError("checkpoint '" + checkpoint_path + "' is missing tensor '" +
                              name + "'");
        if (got->shape() != t.shape())
            throw FormatError("checkpoint tensor '" + name + "' has shape " +
                              shape_str(got->shape()) + ", manifest expects " +
                              shape_str(t.shape()));
    }

    ModelBundle bundle;
    bundle.cfg = cfg;
    bundle.params = std::move(loaded);
    return bundle;
}

namespace {

std::size_t sweep_thread_count(std::size_t cells) {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("VOLCON_THREADS")) {
        char* end = nullptr;
        const unsigned long parsed = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0' || parsed == 0)
            throw ContractError("VOLCON_THREADS must be a positive integer, got '" +
                                std::string(env) + "'");
        n = parsed;
    }
    return std::min(n, std::max<std::size_t>(cells, 1));
}

}  // namespace

std::vector<SweepCellResult> run_sweep(const SweepSpec& spec) {
    validate_sweep_spec(spec);

    // Load each distinct file once; cells share the read-only datasets.
    std::map<std::string, ScanDataset> datasets;
    for (const auto& path :
         {spec.pretrain_data, spec.probe_train_data, spec.probe_test_data})
        if (!datasets.count(path)) datasets.emplace(path, load_dataset(path));
    const ScanDataset& pretrain_data = datasets.at(spec.pretrain_data);
    const ScanDataset& probe_train = datasets.at(spec.probe_train_data);
    const ScanDataset& probe_test = datasets.at(spec.probe_test_data);

    std::vector<SweepCellResult> cells;
    for (std::size_t di = 0; di < spec.deltas.size(); ++di)
        for (const auto seed : spec.seeds) {
            SweepCellResult cell;
            cell.delta_index = di;
            cell.cfg = apply_config_json(spec.base, spec.deltas[di]);
            cell.cfg.seed = seed;
            cell.cfg.out_dir.clear();
            cell.seed = seed;
            cells.push_back(std::move(cell));
        }

    const auto nan = std::numeric_limits<double>::quiet_NaN();
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            SweepCellResult& cell = cells[i];
            const auto t0 = std::chrono::steady_clock::now();
            try {
                RunRecord rec = pretrain(pretrain_data, cell.cfg);
                const FeatureTable train_ft =
                    extract_features(rec.model, probe_train, "train");
                const FeatureTable test_ft = extract_features(rec.model, probe_test, "test");
                cell.probe_accuracy =
                    linear_probe(train_ft, test_ft, spec.probe_l2, spec.probe_iters);
                cell.final_pretrain_loss = rec.final_loss;
            } catch (const std::exception& e) {
                cell.probe_accuracy = nan;
                cell.final_pretrain_loss = nan;
                cell.error = e.what();
            }
            cell.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };

    const std::size_t n_threads = sweep_thread_count(cells.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return cells;
}

void write_sweep_csv(const std::vector<SweepCellResult>& cells, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_sweep_csv: cannot open '" + path + "'");
    out << "variant,K,omega,T,ds_head,D,seed,probe_accuracy,final_pretrain_loss,"
           "wall_seconds\n";
    char buf[64];
    auto real_cell = [&](double v, const char* fmt) {
        std::snprintf(buf, sizeof buf, fmt, v);
        return std::string(buf);
    };
    for (const auto& cell : cells) {
        const TrainConfig& cfg = cell.cfg;
        const bool ds = cfg.variant == Variant::DeepSet;
        const bool ps = cfg.variant == Variant::PerScan;
        out << variant_name(cfg.variant) << ",";
        out << (ds ? std::to_string(cfg.window.k_set) : std::string()) << ",";
        out << (ds || ps ? real_cell(cfg.window.omega, "%.10g") : std::string()) << ",";
        out << (ps ? std::to_string(cfg.window.t_threshold) : std::string()) << ",";
        out << (ds ? ds_head_name(cfg.ds_head) : std::string()) << ",";
        out << cfg.image_size << ",";
        out << cell.seed << ",";
        out << real_cell(cell.probe_accuracy, "%.10g") << ",";
        out << real_cell(cell.final_pretrain_loss, "%.10g") << ",";
        out << real_cell(cell.wall_seconds, "%.3f") << "\n";
    }
    out.flush();
    if (!out) throw IoError("write_sweep_csv: write failure on '" + path + "'");
}

}  // namespace volcon
