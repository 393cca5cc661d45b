#include "volcon/model.hpp"

#include <cmath>

namespace volcon {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::PerScan: return "ps";
        case Variant::DeepSet: return "ds";
    }
    throw ContractError("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "baseline") return Variant::Baseline;
    if (name == "ps") return Variant::PerScan;
    if (name == "ds") return Variant::DeepSet;
    throw ContractError("unknown variant '" + name + "' (expected baseline, ps or ds)");
}

std::string ds_head_name(DsHeadKind k) {
    return k == DsHeadKind::Identity ? "identity" : "mlp";
}

DsHeadKind ds_head_from_name(const std::string& name) {
    if (name == "identity") return DsHeadKind::Identity;
    if (name == "mlp") return DsHeadKind::Mlp;
    throw ContractError("unknown ds_head '" + name + "' (expected identity or mlp)");
}

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.in_channels == 0) throw ContractError("ModelConfig: in_channels must be >= 1");
    if (cfg.image_size < 16)
        throw ContractError("ModelConfig: image_size must be >= 16 to survive four "
                            "pooling stages, got " + std::to_string(cfg.image_size));
    if (cfg.base_channels == 0) throw ContractError("ModelConfig: base_channels must be >= 1");
    if (cfg.feature_dim == 0) throw ContractError("ModelConfig: feature_dim must be >= 1");
    if (cfg.proj_dim == 0) throw ContractError("ModelConfig: proj_dim must be >= 1");
    if (!(cfg.temperature > 0.0))
        throw ContractError("ModelConfig: temperature must be positive");
}

namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::size_t kBlocks = 4;

const Tensor& param(const ModelBundle& m, const std::string& name) {
    const Tensor* t = m.params.find(name);
    if (!t) throw ContractError("model parameter '" + name + "' is missing");
    return *t;
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> data(1, 0.0);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    data.resize(n);
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

std::size_t block_channels(const ModelConfig& cfg, std::size_t block) {
    return cfg.base_channels << block;  // base, 2x, 4x, 8x
}

// h = x W + b with W stored [in, out].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(matmul(x, w), b);
}

}  // namespace

ModelBundle init_model(const ModelConfig& cfg, std::uint64_t seed) {
    validate_model_config(cfg);
    ModelBundle m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, kInitStream));

    std::size_t cin = cfg.in_channels;
    for (std::size_t b = 0; b < kBlocks; ++b) {
        const std::size_t cout = block_channels(cfg, b);
        const std::string stem = "enc.conv" + std::to_string(b + 1);
        m.params.add(stem + ".w", kaiming_uniform({cout, cin, 3, 3}, cin * 9, rng));
        m.params.add(stem + ".b", Tensor::zeros({cout}, true));
        cin = cout;
    }
    m.params.add("enc.fc.w", kaiming_uniform({cin, cfg.feature_dim}, cin, rng));
    m.params.add("enc.fc.b", Tensor::zeros({cfg.feature_dim}, true));

    m.params.add("proj.fc1.w",
                 kaiming_uniform({cfg.feature_dim, cfg.feature_dim}, cfg.feature_dim, rng));
    m.params.add("proj.fc1.b", Tensor::zeros({cfg.feature_dim}, true));
    m.params.add("proj.fc2.w",
                 kaiming_uniform({cfg.feature_dim, cfg.proj_dim}, cfg.feature_dim, rng));
    m.params.add("proj.fc2.b", Tensor::zeros({cfg.proj_dim}, true));

    if (cfg.variant == Variant::DeepSet && cfg.ds_head == DsHeadKind::Mlp) {
        m.params.add("ds.fc1.w",
                     kaiming_uniform({cfg.feature_dim, cfg.feature_dim}, cfg.feature_dim, rng));
        m.params.add("ds.fc1.b", Tensor::zeros({cfg.feature_dim}, true));
        m.params.add("ds.fc2.w",
                     kaiming_uniform({cfg.feature_dim, cfg.feature_dim}, cfg.feature_dim, rng));
        m.params.add("ds.fc2.b", Tensor::zeros({cfg.feature_dim}, true));
    }
    return m;
}

Tensor encode_batch(const ModelBundle& m, const Tensor& images) {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != m.cfg.in_channels || s[2] != m.cfg.image_size ||
        s[3] != m.cfg.image_size)
        throw ContractError("encode_batch: expected [N," + std::to_string(m.cfg.in_channels) +
                            "," + std::to_string(m.cfg.image_size) + "," +
                            std::to_string(m.cfg.image_size) + "], got " + shape_str(s));
    Tensor x = images;
    for (std::size_t b = 0; b < kBlocks; ++b) {
        const std::string stem = "enc.conv" + std::to_string(b + 1);
        x = conv2d(x, param(m, stem + ".w"), param(m, stem + ".b"), 1, 1);
        x = relu(x);
        x = avg_pool2d(x, 2);
    }
    x = global_mean_pool(x);
    return affine(x, param(m, "enc.fc.w"), param(m, "enc.fc.b"));
}

Tensor project(const ModelBundle& m, const Tensor& h) {
    Tensor t = relu(affine(h, param(m, "proj.fc1.w"), param(m, "proj.fc1.b")));
    return affine(t, param(m, "proj.fc2.w"), param(m, "proj.fc2.b"));
}

Tensor deepset_aggregate(const ModelBundle& m, const Tensor& set_features, std::size_t k) {
    if (k == 0) throw ContractError("deepset_aggregate: k must be >= 1");
    Tensor s = sum_over_set(set_features, k);
    if (m.cfg.ds_head == DsHeadKind::Identity) return s;
    Tensor t = relu(affine(s, param(m, "ds.fc1.w"), param(m, "ds.fc1.b")));
    return affine(t, param(m, "ds.fc2.w"), param(m, "ds.fc2.b"));
}

Tensor nt_xent(const EmbeddingBatch& batch, double temperature) {
    if (!(temperature > 0.0)) throw ContractError("nt_xent: temperature must be positive");
    const Shape& s1 = batch.z1.shape();
    if (s1.size() != 2 || batch.z2.shape() != s1)
        throw ContractError("nt_xent: expected matching [B,P] embeddings, got " +
                            shape_str(s1) + " and " + shape_str(batch.z2.shape()));
    const std::size_t b = s1[0];
    if (b < 2)
        throw ContractError("nt_xent: batch size " + std::to_string(b) +
                            " has no negatives; need B >= 2");

    Tensor z = concat_rows(batch.z1, batch.z2);                 // [2B, P]
    Tensor sim = scale(matmul(z, transpose(z)), 1.0 / temperature);

    // Push self-similarity out of every softmax; exp(-1e9/tau) underflows to 0.
    const std::size_t n = 2 * b;
    Tensor mask = Tensor::zeros({n, n}, false);
    for (std::size_t i = 0; i < n; ++i) mask.data()[i * n + i] = -1e9;
    sim = add(sim, mask);

    std::vector<std::size_t> positives(n);
    for (std::size_t i = 0; i < b; ++i) {
        positives[i] = i + b;
        positives[i + b] = i;
    }
    return softmax_cross_entropy_rows(sim, positives);
}

Tensor pair_contrastive_loss(const ModelBundle& m, const Tensor& x1, const Tensor& x2) {
    EmbeddingBatch batch;
    batch.z1 = l2_normalize_rows(project(m, encode_batch(m, x1)));
    batch.z2 = l2_normalize_rows(project(m, encode_batch(m, x2)));
    return nt_xent(batch, m.cfg.temperature);
}

Tensor set_contrastive_loss(const ModelBundle& m, const Tensor& x1, const Tensor& x2,
                            std::size_t k) {
    EmbeddingBatch batch;
    batch.z1 = l2_normalize_rows(project(m, deepset_aggregate(m, encode_batch(m, x1), k)));
    batch.z2 = l2_normalize_rows(project(m, deepset_aggregate(m, encode_batch(m, x2), k)));
    return nt_xent(batch, m.cfg.temperature);
}

}  // namespace volcon
