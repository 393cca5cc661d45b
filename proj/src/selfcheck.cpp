#include "volcon/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "volcon/model.hpp"
#include "volcon/trainer.hpp"

namespace volcon {

namespace {

// Brute-force contrastive reference, written directly from the definition:
// actual cosine for every ordered pair, naive exp sums, no shortcuts shared
// with the fast path.
double brute_contrastive(const std::vector<std::vector<double>>& z1,
                         const std::vector<std::vector<double>>& z2, double tau) {
    const std::size_t b = z1.size();
    std::vector<std::vector<double>> all(z1);
    all.insert(all.end(), z2.begin(), z2.end());
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& c) {
        double dot = 0.0, na = 0.0, nc = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            dot += a[j] * c[j];
            na += a[j] * a[j];
            nc += c[j] * c[j];
        }
        return dot / (std::sqrt(na) * std::sqrt(nc));
    };
    double total = 0.0;
    for (std::size_t i = 0; i < 2 * b; ++i) {
        const std::size_t partner = i < b ? i + b : i - b;
        double denom = 0.0;
        for (std::size_t j = 0; j < 2 * b; ++j) {
            if (j == i) continue;
            denom += std::exp(cosine(all[i], all[j]) / tau);
        }
        total += -std::log(std::exp(cosine(all[i], all[partner]) / tau) / denom);
    }
    return total / static_cast<double>(2 * b);
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from_data({rows.size(), rows.front().size()}, std::move(flat), false);
}

std::vector<std::vector<double>> random_unit_rows(std::size_t n, std::size_t p, Rng& rng) {
    std::vector<std::vector<double>> rows(n, std::vector<double>(p));
    for (auto& r : rows) {
        double sq = 0.0;
        for (auto& v : r) {
            v = rng.normal();
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        for (auto& v : r) v /= norm;
    }
    return rows;
}

Tensor random_images(std::size_t n, std::size_t c, std::size_t d, Rng& rng) {
    std::vector<double> v(n * c * d * d);
    for (auto& x : v) x = rng.uniform();
    return Tensor::from_data({n, c, d, d}, std::move(v), false);
}

ModelConfig tiny_config(Variant variant, DsHeadKind head) {
    ModelConfig cfg;
    cfg.variant = variant;
    cfg.in_channels = 1;
    cfg.image_size = 16;
    cfg.base_channels = 2;
    cfg.feature_dim = 8;
    cfg.proj_dim = 4;
    cfg.ds_head = head;
    cfg.temperature = 0.5;
    return cfg;
}

struct Reporter {
    std::ostream& out;
    int failures = 0;

    void done(const std::string& name, bool ok, const std::string& detail) {
        out << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << "\n";
        if (!ok) ++failures;
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

void permute_sets(std::vector<double>& data, std::size_t sets, std::size_t k,
                  std::size_t row_size, const std::vector<std::size_t>& perm) {
    std::vector<double> scratch(k * row_size);
    for (std::size_t s = 0; s < sets; ++s) {
        double* base = data.data() + s * k * row_size;
        for (std::size_t j = 0; j < k; ++j)
            std::copy(base + perm[j] * row_size, base + (perm[j] + 1) * row_size,
                      scratch.begin() + static_cast<std::ptrdiff_t>(j * row_size));
        std::copy(scratch.begin(), scratch.end(), base);
    }
}

}  // namespace

int run_selfcheck(std::ostream& out) {
    Reporter rep{out};
    Rng rng(20240901);

    {  // all-equal embeddings give the closed-form log(2B-1)
        std::vector<std::vector<double>> same = random_unit_rows(1, 6, rng);
        std::vector<std::vector<double>> z(2, same[0]);
        EmbeddingBatch batch{rows_tensor(z), rows_tensor(z)};
        const double got = nt_xent(batch, 0.5).value();
        const double err = std::abs(got - std::log(3.0));
        rep.done("contrastive all-equal closed form", err <= 1e-12, "|err| = " + fmt(err));
    }

    {  // fast loss vs brute-force reference
        double max_err = 0.0;
        for (int trial = 0; trial < 25; ++trial) {
            const std::size_t b = 2 + rng.below(7);
            const std::size_t p = 4 + rng.below(29);
            const double tau = 0.2 + 0.6 * rng.uniform();
            auto z1 = random_unit_rows(b, p, rng);
            auto z2 = random_unit_rows(b, p, rng);
            EmbeddingBatch batch{rows_tensor(z1), rows_tensor(z2)};
            const double fast = nt_xent(batch, tau).value();
            const double ref = brute_contrastive(z1, z2, tau);
            max_err = std::max(max_err, std::abs(fast - ref));
        }
        rep.done("contrastive loss vs brute-force reference", max_err <= 1e-10,
                 "max |err| = " + fmt(max_err) + " over 25 random batches");
    }

    {  // pair loss gradient vs finite differences
        ModelBundle m = init_model(tiny_config(Variant::Baseline, DsHeadKind::Identity), 5);
        Tensor x1 = random_images(3, 1, 16, rng);
        Tensor x2 = random_images(3, 1, 16, rng);
        auto fn = [&](ParamStore&) { return pair_contrastive_loss(m, x1, x2); };
        const double err = finite_diff_check(fn, m.params, 1e-6, 6);
        rep.done("pair loss gradient vs finite differences", err <= 1e-5,
                 "max rel err = " + fmt(err) + " (sampled coordinates)");
    }

    {  // set loss gradient vs finite differences, K=3, MLP head
        ModelBundle m = init_model(tiny_config(Variant::DeepSet, DsHeadKind::Mlp), 6);
        Tensor x1 = random_images(2 * 3, 1, 16, rng);
        Tensor x2 = random_images(2 * 3, 1, 16, rng);
        auto fn = [&](ParamStore&) { return set_contrastive_loss(m, x1, x2, 3); };
        const double err = finite_diff_check(fn, m.params, 1e-6, 6);
        rep.done("set loss gradient vs finite differences", err <= 1e-5,
                 "max rel err = " + fmt(err) + " (K=3, sampled coordinates)");
    }

    {  // permutation invariance of the set aggregation and the loss
        double max_diff = 0.0;
        for (DsHeadKind head : {DsHeadKind::Identity, DsHeadKind::Mlp}) {
            ModelBundle m = init_model(tiny_config(Variant::DeepSet, head), 7);
            const std::size_t k = 3;
            Tensor x1 = random_images(2 * k, 1, 16, rng);
            Tensor x2 = random_images(2 * k, 1, 16, rng);
            Tensor feats = encode_batch(m, x1);
            const std::vector<double> agg_ref = deepset_aggregate(m, feats, k).data();
            const double loss_ref = set_contrastive_loss(m, x1, x2, k).value();

            std::vector<std::size_t> perm{0, 1, 2};
            while (std::next_permutation(perm.begin(), perm.end())) {
                std::vector<double> fp = feats.data();
                permute_sets(fp, 2, k, m.cfg.feature_dim, perm);
                Tensor feats_p = Tensor::from_data(feats.shape(), std::move(fp), false);
                const std::vector<double> agg = deepset_aggregate(m, feats_p, k).data();
                for (std::size_t i = 0; i < agg.size(); ++i)
                    max_diff = std::max(max_diff, std::abs(agg[i] - agg_ref[i]));

                std::vector<double> x1p = x1.data(), x2p = x2.data();
                permute_sets(x1p, 2, k, 16 * 16, perm);
                permute_sets(x2p, 2, k, 16 * 16, perm);
                const double loss =
                    set_contrastive_loss(m, Tensor::from_data(x1.shape(), std::move(x1p), false),
                                         Tensor::from_data(x2.shape(), std::move(x2p), false), k)
                        .value();
                max_diff = std::max(max_diff, std::abs(loss - loss_ref));
            }
        }
        rep.done("set aggregation permutation invariance", max_diff <= 1e-9,
                 "max |diff| = " + fmt(max_diff) + " (K=3, identity and mlp heads)");
    }

    {  // K=1 with identity head collapses to the pair path
        ModelBundle mb = init_model(tiny_config(Variant::Baseline, DsHeadKind::Identity), 9);
        ModelBundle md = init_model(tiny_config(Variant::DeepSet, DsHeadKind::Identity), 9);
        double max_diff = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            Tensor x1 = random_images(4, 1, 16, rng);
            Tensor x2 = random_images(4, 1, 16, rng);
            const double pair_loss = pair_contrastive_loss(mb, x1, x2).value();
            const double set_loss = set_contrastive_loss(md, x1, x2, 1).value();
            max_diff = std::max(max_diff, std::abs(pair_loss - set_loss));
        }
        rep.done("K=1 identity-head degeneration", max_diff <= 1e-12,
                 "max |loss diff| = " + fmt(max_diff) + " over 5 batches");
    }

    {  // optimiser closed forms: first Adam step and cosine schedule endpoints
        ParamStore params;
        params.add("theta", Tensor::zeros({1}, true));
        params.find("theta")->grad()[0] = 1.0;
        AdamState state = init_adam(params);
        adam_step(params, state, 0.1, 0.0);
        const double expected = -0.1 / (1.0 + 1e-8);
        const double adam_err = std::abs(params.find("theta")->data()[0] - expected);

        const double lr_err =
            std::max({std::abs(cosine_lr(0, 100, 0.07) - 0.07),
                      std::abs(cosine_lr(100, 100, 0.07)),
                      std::abs(cosine_lr(50, 100, 0.07) - 0.035)});
        rep.done("optimiser closed forms", adam_err <= 1e-15 && lr_err <= 1e-15,
                 "adam first-step err = " + fmt(adam_err) + ", lr endpoint err = " +
                     fmt(lr_err));
    }

    out << (rep.failures == 0 ? "selfcheck: all properties passed\n"
                              : "selfcheck: " + std::to_string(rep.failures) +
                                    " properties FAILED\n");
    return rep.failures;
}

}  // namespace volcon
