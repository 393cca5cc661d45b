#include "volcon/config.hpp"

#include <fstream>

namespace volcon {

using nlohmann::json;
using nlohmann::ordered_json;

TrainConfig preset_config(Variant v) {
    TrainConfig cfg;
    cfg.variant = v;
    switch (v) {
        case Variant::Baseline:
            cfg.image_size = 224;
            break;
        case Variant::PerScan:
            cfg.image_size = 224;
            cfg.window.omega = 0.1;
            cfg.window.t_threshold = 5;
            break;
        case Variant::DeepSet:
            cfg.image_size = 128;
            cfg.window.omega = 0.5;
            cfg.window.k_set = 3;
            cfg.ds_head = DsHeadKind::Mlp;
            break;
    }
    return cfg;
}

namespace {

std::string get_str(const json& v, const std::string& key) {
    if (!v.is_string())
        throw ContractError("config key '" + key + "' must be a string");
    return v.get<std::string>();
}

// Parsed documents store non-negative literals as unsigned, but documents
// built in code may carry them as signed integers; accept both.
bool is_nonneg_int(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::size_t get_size(const json& v, const std::string& key) {
    if (!is_nonneg_int(v))
        throw ContractError("config key '" + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

std::uint64_t get_u64(const json& v, const std::string& key) {
    if (!is_nonneg_int(v))
        throw ContractError("config key '" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

double get_real(const json& v, const std::string& key) {
    if (!v.is_number())
        throw ContractError("config key '" + key + "' must be a number");
    return v.get<double>();
}

bool get_bool(const json& v, const std::string& key) {
    if (!v.is_boolean())
        throw ContractError("config key '" + key + "' must be a boolean");
    return v.get<bool>();
}

std::pair<double, double> get_range(const json& v, const std::string& key) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ContractError("config key '" + key + "' must be a [low, high] number pair");
    return {v[0].get<double>(), v[1].get<double>()};
}

void apply_augment_json(AugmentSpec& spec, const json& doc) {
    if (!doc.is_object())
        throw ContractError("config key 'augment' must be an object");
    for (const auto& [key, value] : doc.items()) {
        if (key == "crop_scale") spec.crop_scale = get_range(value, key);
        else if (key == "hflip_prob") spec.hflip_prob = get_real(value, key);
        else if (key == "blur_prob") spec.blur_prob = get_real(value, key);
        else if (key == "blur_sigma") spec.blur_sigma = get_range(value, key);
        else if (key == "jitter_strength") spec.jitter_strength = get_real(value, key);
        else if (key == "crop_enabled") spec.crop_enabled = get_bool(value, key);
        else if (key == "flip_enabled") spec.flip_enabled = get_bool(value, key);
        else if (key == "blur_enabled") spec.blur_enabled = get_bool(value, key);
        else if (key == "jitter_enabled") spec.jitter_enabled = get_bool(value, key);
        else if (key == "share_full_transform")
            spec.share_full_transform = get_bool(value, key);
        else if (key == "out_size")
            throw ContractError("unknown augment key 'out_size' (the view size follows "
                                "image_size)");
        else
            throw ContractError("unknown augment key '" + key + "'");
    }
}

}  // namespace

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ContractError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

TrainConfig apply_config_json(const TrainConfig& base, const json& doc) {
    if (!doc.is_object())
        throw ContractError("config document must be a JSON object");
    TrainConfig cfg = base;
    for (const auto& [key, value] : doc.items()) {
        if (key == "variant") cfg.variant = variant_from_name(get_str(value, key));
        else if (key == "epochs") cfg.epochs = get_size(value, key);
        else if (key == "steps_per_epoch") cfg.steps_per_epoch = get_size(value, key);
        else if (key == "batch_size") cfg.batch_size = get_size(value, key);
        else if (key == "lr0") cfg.lr0 = get_real(value, key);
        else if (key == "weight_decay") cfg.weight_decay = get_real(value, key);
        else if (key == "temperature") cfg.temperature = get_real(value, key);
        else if (key == "image_size") cfg.image_size = get_size(value, key);
        else if (key == "feature_dim") cfg.feature_dim = get_size(value, key);
        else if (key == "proj_dim") cfg.proj_dim = get_size(value, key);
        else if (key == "base_channels") cfg.base_channels = get_size(value, key);
        else if (key == "ds_head") cfg.ds_head = ds_head_from_name(get_str(value, key));
        else if (key == "omega") cfg.window.omega = get_real(value, key);
        else if (key == "t_threshold") cfg.window.t_threshold = get_size(value, key);
        else if (key == "k_set") cfg.window.k_set = get_size(value, key);
        else if (key == "seed") cfg.seed = get_u64(value, key);
        else if (key == "out_dir") cfg.out_dir = get_str(value, key);
        else if (key == "augment") apply_augment_json(cfg.augment, value);
        else throw ContractError("unknown config key '" + key + "'");
    }
    return cfg;
}

TrainConfig load_train_config(const std::string& path, const TrainConfig& base) {
    return apply_config_json(base, read_json_file(path));
}

ordered_json augment_spec_to_json(const AugmentSpec& spec) {
    ordered_json a;
    a["crop_scale"] = {spec.crop_scale.first, spec.crop_scale.second};
    a["hflip_prob"] = spec.hflip_prob;
    a["blur_prob"] = spec.blur_prob;
    a["blur_sigma"] = {spec.blur_sigma.first, spec.blur_sigma.second};
    a["jitter_strength"] = spec.jitter_strength;
    a["crop_enabled"] = spec.crop_enabled;
    a["flip_enabled"] = spec.flip_enabled;
    a["blur_enabled"] = spec.blur_enabled;
    a["jitter_enabled"] = spec.jitter_enabled;
    a["share_full_transform"] = spec.share_full_transform;
    return a;
}

void write_manifest(const RunRecord& rec, const ScanDataset& data, const std::string& path) {
    const TrainConfig& cfg = rec.config;
    ordered_json m;
    m["format"] = "volcon-run-manifest";
    m["version"] = 1;
    m["variant"] = variant_name(cfg.variant);
    m["seed"] = cfg.seed;

    ordered_json model;
    model["in_channels"] = rec.model.cfg.in_channels;
    model["image_size"] = cfg.image_size;
    model["base_channels"] = cfg.base_channels;
    model["feature_dim"] = cfg.feature_dim;
    model["proj_dim"] = cfg.proj_dim;
    if (cfg.variant == Variant::DeepSet) model["ds_head"] = ds_head_name(cfg.ds_head);
    else model["ds_head"] = nullptr;
    model["temperature"] = cfg.temperature;
    m["model"] = model;

    // Only the parameters the variant actually uses; the rest are null.
    ordered_json window;
    window["omega"] = nullptr;
    window["t_threshold"] = nullptr;
    window["k_set"] = nullptr;
    if (cfg.variant == Variant::PerScan) {
        window["omega"] = cfg.window.omega;
        window["t_threshold"] = cfg.window.t_threshold;
    } else if (cfg.variant == Variant::DeepSet) {
        window["omega"] = cfg.window.omega;
        window["k_set"] = cfg.window.k_set;
    }
    m["window"] = window;

    ordered_json train;
    train["epochs"] = cfg.epochs;
    train["steps_per_epoch"] = rec.steps_per_epoch;
    train["total_steps"] = rec.history.size();
    train["batch_size"] = cfg.batch_size;
    train["lr0"] = cfg.lr0;
    train["weight_decay"] = cfg.weight_decay;
    m["train"] = train;

    m["augment"] = augment_spec_to_json(cfg.augment);

    ordered_json d;
    d["name"] = data.name;
    d["scans"] = data.num_scans();
    d["total_slices"] = data.total_slices();
    m["data"] = d;

    ordered_json result;
    result["final_loss"] = rec.final_loss;
    result["wall_seconds"] = rec.wall_seconds;
    result["history_csv"] = "history.csv";
    result["checkpoint"] = "checkpoint.volp";
    m["result"] = result;

    std::ofstream out(path);
    if (!out) throw IoError("write_manifest: cannot open '" + path + "'");
    out << m.dump(2) << "\n";
    if (!out) throw IoError("write_manifest: write failure on '" + path + "'");
}

ModelConfig model_config_from_manifest(const json& doc) {
    if (!doc.is_object() || !doc.contains("model") || !doc.contains("variant"))
        throw FormatError("manifest: missing 'variant' or 'model' section");
    ModelConfig cfg;
    cfg.variant = variant_from_name(get_str(doc["variant"], "variant"));
    const json& model = doc["model"];
    cfg.in_channels = get_size(model.at("in_channels"), "in_channels");
    cfg.image_size = get_size(model.at("image_size"), "image_size");
    cfg.base_channels = get_size(model.at("base_channels"), "base_channels");
    cfg.feature_dim = get_size(model.at("feature_dim"), "feature_dim");
    cfg.proj_dim = get_size(model.at("proj_dim"), "proj_dim");
    cfg.ds_head = model.at("ds_head").is_null()
                      ? DsHeadKind::Identity
                      : ds_head_from_name(get_str(model["ds_head"], "ds_head"));
    cfg.temperature = get_real(model.at("temperature"), "temperature");
    validate_model_config(cfg);
    return cfg;
}

ModelConfig load_manifest_model_config(const std::string& path) {
    try {
        return model_config_from_manifest(read_json_file(path));
    } catch (const json::exception& e) {
        throw FormatError("manifest '" + path + "': " + e.what());
    }
}

void validate_sweep_spec(const SweepSpec& spec) {
    if (spec.deltas.empty()) throw ContractError("sweep spec: 'deltas' must be nonempty");
    if (spec.seeds.empty()) throw ContractError("sweep spec: 'seeds' must be nonempty");
    if (spec.pretrain_data.empty())
        throw ContractError("sweep spec: 'pretrain_data' is required");
    if (spec.probe_train_data.empty() || spec.probe_test_data.empty())
        throw ContractError("sweep spec: 'probe_train_data' and 'probe_test_data' are required");
    if (!(spec.probe_l2 >= 0.0)) throw ContractError("sweep spec: probe_l2 must be >= 0");
    if (spec.probe_iters == 0) throw ContractError("sweep spec: probe_iters must be >= 1");
    for (const auto& delta : spec.deltas) apply_config_json(spec.base, delta);
    validate_train_config(spec.base);
}

SweepSpec sweep_spec_from_json(const json& doc) {
    if (!doc.is_object()) throw ContractError("sweep spec must be a JSON object");
    SweepSpec spec;
    // The base section picks its preset through its (optional) variant key.
    Variant base_variant = Variant::Baseline;
    if (doc.contains("base") && doc["base"].is_object() && doc["base"].contains("variant"))
        base_variant = variant_from_name(get_str(doc["base"]["variant"], "variant"));
    spec.base = preset_config(base_variant);
    spec.base.out_dir.clear();

    for (const auto& [key, value] : doc.items()) {
        if (key == "base") spec.base = apply_config_json(spec.base, value);
        else if (key == "deltas") {
            if (!value.is_array())
                throw ContractError("sweep spec: 'deltas' must be an array of objects");
            for (const auto& d : value) {
                if (!d.is_object())
                    throw ContractError("sweep spec: each delta must be an object");
                spec.deltas.push_back(d);
            }
        } else if (key == "seeds") {
            if (!value.is_array())
                throw ContractError("sweep spec: 'seeds' must be an array");
            for (const auto& s : value) spec.seeds.push_back(get_u64(s, "seeds"));
        } else if (key == "pretrain_data") spec.pretrain_data = get_str(value, key);
        else if (key == "probe_train_data") spec.probe_train_data = get_str(value, key);
        else if (key == "probe_test_data") spec.probe_test_data = get_str(value, key);
        else if (key == "probe_l2") spec.probe_l2 = get_real(value, key);
        else if (key == "probe_iters") spec.probe_iters = get_size(value, key);
        else throw ContractError("unknown sweep spec key '" + key + "'");
    }
    validate_sweep_spec(spec);
    return spec;
}

SweepSpec load_sweep_spec(const std::string& path) {
    return sweep_spec_from_json(read_json_file(path));
}

}  // namespace volcon
