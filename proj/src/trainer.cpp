#include "volcon/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "volcon/config.hpp"

namespace volcon {

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.epochs == 0) throw ContractError("TrainConfig: epochs must be >= 1");
    if (cfg.batch_size < 2)
        throw ContractError("TrainConfig: batch_size must be >= 2 (the contrastive loss "
                            "needs negatives)");
    if (!(cfg.lr0 > 0.0)) throw ContractError("TrainConfig: lr0 must be positive");
    if (!(cfg.weight_decay >= 0.0))
        throw ContractError("TrainConfig: weight_decay must be >= 0");
    validate_window_params(cfg.window);
    AugmentSpec aug = cfg.augment;
    aug.out_size = cfg.image_size;
    validate_augment_spec(aug);
    validate_model_config(model_config_for(cfg, 1));
}

ModelConfig model_config_for(const TrainConfig& cfg, std::size_t in_channels) {
    ModelConfig mc;
    mc.variant = cfg.variant;
    mc.in_channels = in_channels;
    mc.image_size = cfg.image_size;
    mc.base_channels = cfg.base_channels;
    mc.feature_dim = cfg.feature_dim;
    mc.proj_dim = cfg.proj_dim;
    mc.ds_head = cfg.ds_head;
    mc.temperature = cfg.temperature;
    return mc;
}

std::size_t resolve_steps_per_epoch(const TrainConfig& cfg, const ScanDataset& data) {
    if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
    const std::size_t total = data.total_slices();
    if (total == 0) throw ContractError("resolve_steps_per_epoch: dataset has no slices");
    return (total + cfg.batch_size - 1) / cfg.batch_size;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) throw ContractError("cosine_lr: total_steps must be >= 1");
    if (step > total_steps)
        throw ContractError("cosine_lr: step " + std::to_string(step) + " past total " +
                            std::to_string(total_steps));
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(kPi * frac));
}

AdamState init_adam(const ParamStore& params) {
    AdamState state;
    state.m.reserve(params.items.size());
    state.v.reserve(params.items.size());
    for (const auto& [name, t] : params.items) {
        state.m.emplace_back(t.size(), 0.0);
        state.v.emplace_back(t.size(), 0.0);
    }
    return state;
}

void adam_step(ParamStore& params, AdamState& state, double lr, double weight_decay,
               double beta1, double beta2, double epsilon) {
    if (state.m.size() != params.items.size() || state.v.size() != params.items.size())
        throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                            " tensors, store has " + std::to_string(params.items.size()));
    state.t += 1;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
        Tensor& t = params.items[pi].second;
        if (state.m[pi].size() != t.size())
            throw ContractError("adam_step: state size mismatch on '" +
                                params.items[pi].first + "'");
        auto& theta = t.data();
        const auto& grad = t.grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i] + weight_decay * theta[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
        }
    }
}

namespace {

constexpr std::uint64_t kStreamSample = 21;
constexpr std::uint64_t kStreamAugment = 22;

// HWC float views -> one [N, C, D, D] double tensor.
Tensor views_to_tensor(const std::vector<std::vector<float>>& views, std::size_t c,
                       std::size_t d) {
    std::vector<double> out(views.size() * c * d * d);
    for (std::size_t n = 0; n < views.size(); ++n) {
        if (views[n].size() != d * d * c)
            throw ContractError("views_to_tensor: view size mismatch");
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < d; ++y)
                for (std::size_t x = 0; x < d; ++x)
                    out[((n * c + ch) * d + y) * d + x] =
                        static_cast<double>(views[n][(y * d + x) * c + ch]);
    }
    return Tensor::from_data({views.size(), c, d, d}, std::move(out), false);
}

}  // namespace

ViewBatch assemble_batch(const ScanDataset& data, const TrainConfig& cfg, std::size_t step) {
    if (data.num_scans() == 0) throw ContractError("assemble_batch: dataset has no scans");
    const std::size_t channels = dataset_channels(data);
    AugmentSpec aug = cfg.augment;
    aug.out_size = cfg.image_size;

    Rng sample_rng(derive_seed(cfg.seed, kStreamSample, step));
    Rng aug_rng(derive_seed(cfg.seed, kStreamAugment, step));

    ViewBatch batch;
    std::vector<std::vector<float>> v1, v2;
    if (cfg.variant == Variant::DeepSet) {
        batch.k = cfg.window.k_set;
        v1.reserve(cfg.batch_size * batch.k);
        v2.reserve(cfg.batch_size * batch.k);
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            const std::size_t scan = sample_scan_index(data, sample_rng);
            const SetSample sets = sample_ds_views(data, scan, cfg.window, sample_rng);
            std::vector<SliceView> slices_a, slices_b;
            for (auto j : sets.set_a) slices_a.push_back(data.scans[scan].slice_view(j));
            for (auto j : sets.set_b) slices_b.push_back(data.scans[scan].slice_view(j));
            for (auto& img : apply_set(aug, slices_a, aug_rng)) v1.push_back(std::move(img));
            for (auto& img : apply_set(aug, slices_b, aug_rng)) v2.push_back(std::move(img));
        }
    } else {
        v1.reserve(cfg.batch_size);
        v2.reserve(cfg.batch_size);
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            PairSample pair;
            if (cfg.variant == Variant::Baseline) {
                pair = sample_baseline(data, sample_rng);
            } else {
                const std::size_t scan = sample_scan_index(data, sample_rng);
                pair = sample_ps_pair(data, scan, cfg.window, sample_rng);
            }
            const SliceView a =
                data.scans[pair.first.scan_index].slice_view(pair.first.slice_index);
            const SliceView b =
                data.scans[pair.second.scan_index].slice_view(pair.second.slice_index);
            const AugmentParams pa = draw_params(aug, {a.h, a.w}, aug_rng);
            v1.push_back(apply(aug, pa, a));
            const AugmentParams pb = draw_params(aug, {b.h, b.w}, aug_rng);
            v2.push_back(apply(aug, pb, b));
        }
    }
    batch.x1 = views_to_tensor(v1, channels, cfg.image_size);
    batch.x2 = views_to_tensor(v2, channels, cfg.image_size);
    return batch;
}

RunRecord pretrain(const ScanDataset& data, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (data.num_scans() == 0) throw ContractError("pretrain: dataset has no scans");
    const std::size_t channels = dataset_channels(data);
    const auto t0 = std::chrono::steady_clock::now();

    RunRecord rec;
    rec.config = cfg;
    rec.steps_per_epoch = resolve_steps_per_epoch(cfg, data);
    const std::size_t total_steps = cfg.epochs * rec.steps_per_epoch;
    rec.model = init_model(model_config_for(cfg, channels), cfg.seed);
    AdamState adam = init_adam(rec.model.params);
    rec.history.reserve(total_steps);

    for (std::size_t step = 0; step < total_steps; ++step) {
        const double lr = cosine_lr(step, total_steps, cfg.lr0);
        const ViewBatch batch = assemble_batch(data, cfg, step);
        rec.model.params.zero_grad();
        Tensor loss = cfg.variant == Variant::DeepSet
                          ? set_contrastive_loss(rec.model, batch.x1, batch.x2, batch.k)
                          : pair_contrastive_loss(rec.model, batch.x1, batch.x2);
        const double loss_value = loss.value();
        if (!std::isfinite(loss_value))
            throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
        backward(loss);
        adam_step(rec.model.params, adam, lr, cfg.weight_decay);
        rec.history.push_back({step, step / rec.steps_per_epoch, lr, loss_value});
    }
    rec.final_loss = rec.history.empty() ? 0.0 : rec.history.back().loss;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!cfg.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(cfg.out_dir, ec);
        if (ec)
            throw IoError("pretrain: cannot create output directory '" + cfg.out_dir +
                          "': " + ec.message());
        const std::filesystem::path dir(cfg.out_dir);
        rec.history_path = (dir / "history.csv").string();
        rec.checkpoint_path = (dir / "checkpoint.volp").string();
        rec.manifest_path = (dir / "manifest.json").string();
        write_history_csv(rec.history, rec.history_path);
        save_params(rec.model.params, rec.checkpoint_path);
        write_manifest(rec, data, rec.manifest_path);
    }
    return rec;
}

void write_history_csv(const std::vector<StepStat>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_history_csv: cannot open '" + path + "'");
    out << "step,epoch,lr,loss\n";
    char line[160];
    for (const auto& s : history) {
        std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g\n", s.step, s.epoch, s.lr,
                      s.loss);
        out << line;
    }
    out.flush();
    if (!out) throw IoError("write_history_csv: write failure on '" + path + "'");
}

}  // namespace volcon
