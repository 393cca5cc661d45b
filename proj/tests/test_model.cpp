#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "volcon/model.hpp"

using namespace volcon;

namespace {

ModelConfig tiny_config(Variant v, DsHeadKind head = DsHeadKind::Identity) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.in_channels = 1;
    cfg.image_size = 16;
    cfg.base_channels = 2;
    cfg.feature_dim = 8;
    cfg.proj_dim = 4;
    cfg.ds_head = head;
    return cfg;
}

Tensor random_images(std::size_t n, std::size_t c, std::size_t d, Rng& rng) {
    std::vector<double> v(n * c * d * d);
    for (double& x : v) x = rng.uniform();
    return Tensor::from_data({n, c, d, d}, std::move(v), false);
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from_data({rows.size(), rows[0].size()}, std::move(flat), false);
}

}  // namespace

TEST_CASE("variant and head names round-trip") {
    CHECK(variant_name(Variant::Baseline) == "baseline");
    CHECK(variant_name(Variant::PerScan) == "ps");
    CHECK(variant_name(Variant::DeepSet) == "ds");
    for (auto v : {Variant::Baseline, Variant::PerScan, Variant::DeepSet})
        CHECK(variant_from_name(variant_name(v)) == v);
    CHECK_THROWS_AS(variant_from_name("supervised"), ContractError);

    CHECK(ds_head_name(DsHeadKind::Identity) == "identity");
    CHECK(ds_head_name(DsHeadKind::Mlp) == "mlp");
    CHECK(ds_head_from_name("mlp") == DsHeadKind::Mlp);
    CHECK_THROWS_AS(ds_head_from_name("linear"), ContractError);
}

TEST_CASE("model config validation") {
    CHECK_NOTHROW(validate_model_config(tiny_config(Variant::Baseline)));

    ModelConfig cfg = tiny_config(Variant::Baseline);
    cfg.image_size = 8;  // four halvings need at least 16
    CHECK_THROWS_AS(validate_model_config(cfg), ContractError);
    cfg = tiny_config(Variant::Baseline);
    cfg.feature_dim = 0;
    CHECK_THROWS_AS(validate_model_config(cfg), ContractError);
    cfg = tiny_config(Variant::Baseline);
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(validate_model_config(cfg), ContractError);
}

TEST_CASE("init_model is deterministic and names every tensor") {
    ModelBundle a = init_model(tiny_config(Variant::Baseline), 7);
    ModelBundle b = init_model(tiny_config(Variant::Baseline), 7);
    ModelBundle c = init_model(tiny_config(Variant::Baseline), 8);

    REQUIRE(a.params.items.size() == b.params.items.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params.items.size(); ++i) {
        CHECK(a.params.items[i].first == b.params.items[i].first);
        CHECK(a.params.items[i].second.data() == b.params.items[i].second.data());
        if (c.params.items[i].second.data() != a.params.items[i].second.data())
            any_diff = true;
    }
    CHECK(any_diff);  // a different seed must change the draw

    for (const char* name : {"enc.conv1.w", "enc.conv4.b", "enc.fc.w", "enc.fc.b",
                             "proj.fc1.w", "proj.fc2.b"})
        CHECK(a.params.find(name) != nullptr);
    CHECK(a.params.find("ds.fc1.w") == nullptr);  // no DeepSet head here

    ModelBundle ds = init_model(tiny_config(Variant::DeepSet, DsHeadKind::Mlp), 7);
    CHECK(ds.params.find("ds.fc1.w") != nullptr);
    CHECK(ds.params.find("ds.fc2.b") != nullptr);
}

TEST_CASE("variants share encoder and projection initialisation") {
    // Same seed, different variant: the common parts must match bitwise so
    // cross-variant comparisons start from level ground.
    ModelBundle base = init_model(tiny_config(Variant::Baseline), 3);
    ModelBundle deep = init_model(tiny_config(Variant::DeepSet, DsHeadKind::Mlp), 3);
    for (const auto& [name, t] : base.params.items) {
        const Tensor* other = deep.params.find(name);
        REQUIRE(other != nullptr);
        CHECK(other->data() == t.data());
    }
}

TEST_CASE("encode and project produce the documented shapes") {
    ModelBundle m = init_model(tiny_config(Variant::Baseline), 5);
    Rng rng(17);
    Tensor x = random_images(3, 1, 16, rng);

    Tensor h = encode_batch(m, x);
    CHECK(h.shape() == Shape{3, 8});
    Tensor z = project(m, h);
    CHECK(z.shape() == Shape{3, 4});

    // Same input, same output: the forward pass is pure.
    CHECK(encode_batch(m, x).data() == h.data());

    CHECK_THROWS_AS(encode_batch(m, random_images(2, 1, 8, rng)), ContractError);
    CHECK_THROWS_AS(encode_batch(m, random_images(2, 3, 16, rng)), ContractError);
}

TEST_CASE("deepset_aggregate sums each set") {
    ModelBundle m = init_model(tiny_config(Variant::DeepSet), 5);
    Tensor f = Tensor::from_data({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, false);

    // Identity head: plain per-set sums.
    Tensor agg = deepset_aggregate(m, f, 2);
    CHECK(agg.shape() == Shape{2, 2});
    CHECK(agg.data() == std::vector<double>{4, 6, 12, 14});

    // K=1 with identity passes features through untouched.
    CHECK(deepset_aggregate(m, f, 1).data() == f.data());

    CHECK_THROWS_AS(deepset_aggregate(m, f, 3), ContractError);
}

TEST_CASE("deepset mlp head transforms the pooled sum") {
    ModelBundle m = init_model(tiny_config(Variant::DeepSet, DsHeadKind::Mlp), 5);
    Tensor f = Tensor::from_data({4, 8}, std::vector<double>(32, 0.25), false);
    Tensor agg = deepset_aggregate(m, f, 2);
    CHECK(agg.shape() == Shape{2, 8});
    // The pooled rows are equal, so the transformed rows must be too.
    for (std::size_t j = 0; j < 8; ++j)
        CHECK(agg.data()[j] == agg.data()[8 + j]);
}

TEST_CASE("contrastive loss hits closed-form values") {
    SUBCASE("all-equal embeddings give ln 3 at B=2") {
        auto rows = std::vector<std::vector<double>>(2, {1.0, 0.0});
        Tensor z = rows_tensor(rows);
        Tensor loss = nt_xent({z, z}, 0.5);
        CHECK(std::abs(loss.value() - std::log(3.0)) < 1e-12);
    }
    SUBCASE("all-equal embeddings give ln(2B-1) at B=5") {
        auto rows = std::vector<std::vector<double>>(5, {0.0, 1.0});
        Tensor z = rows_tensor(rows);
        Tensor loss = nt_xent({z, z}, 0.17);
        CHECK(std::abs(loss.value() - std::log(9.0)) < 1e-12);
    }
    SUBCASE("orthogonal negatives, aligned positives") {
        Tensor z = rows_tensor({{1.0, 0.0}, {0.0, 1.0}});
        Tensor loss = nt_xent({z, z}, 0.5);
        // Every row: positive sim 1, two negatives at sim 0.
        const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
        CHECK(loss.value() == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("contrastive loss agrees with the brute-force oracle") {
    Rng rng(23);
    double max_diff = 0.0;
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t b = 2 + rng.below(7);
        const std::size_t p = 4 + rng.below(29);
        const double tau = 0.2 + 0.8 * rng.uniform();
        auto r1 = oracle::random_unit_rows(b, p, rng);
        auto r2 = oracle::random_unit_rows(b, p, rng);
        const double fast = nt_xent({rows_tensor(r1), rows_tensor(r2)}, tau).value();
        const double slow = oracle::brute_contrastive(r1, r2, tau);
        max_diff = std::max(max_diff, std::abs(fast - slow));
    }
    INFO("max |fast - brute| = ", max_diff);
    CHECK(max_diff < 1e-10);
}

TEST_CASE("contrastive loss is symmetric in the two views") {
    Rng rng(29);
    auto r1 = oracle::random_unit_rows(4, 6, rng);
    auto r2 = oracle::random_unit_rows(4, 6, rng);
    const double ab = nt_xent({rows_tensor(r1), rows_tensor(r2)}, 0.5).value();
    const double ba = nt_xent({rows_tensor(r2), rows_tensor(r1)}, 0.5).value();
    CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
}

TEST_CASE("contrastive loss rejects degenerate batches") {
    Tensor one = rows_tensor({{1.0, 0.0}});
    CHECK_THROWS_AS(nt_xent({one, one}, 0.5), ContractError);

    Tensor two = rows_tensor({{1.0, 0.0}, {0.0, 1.0}});
    CHECK_THROWS_AS(nt_xent({two, two}, 0.0), ContractError);
    CHECK_THROWS_AS(nt_xent({two, rows_tensor({{1.0, 0.0}})}, 0.5), ContractError);
}

TEST_CASE("pair loss equals the hand-assembled pipeline") {
    ModelBundle m = init_model(tiny_config(Variant::Baseline), 11);
    Rng rng(31);
    Tensor x1 = random_images(3, 1, 16, rng);
    Tensor x2 = random_images(3, 1, 16, rng);

    const double fused = pair_contrastive_loss(m, x1, x2).value();
    Tensor z1 = l2_normalize_rows(project(m, encode_batch(m, x1)));
    Tensor z2 = l2_normalize_rows(project(m, encode_batch(m, x2)));
    const double staged = nt_xent({z1, z2}, m.cfg.temperature).value();
    CHECK(fused == staged);

    // Projected embeddings really are unit rows.
    for (std::size_t r = 0; r < 3; ++r) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            const double v = z1.data()[r * 4 + j];
            norm2 += v * v;
        }
        CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("set loss is invariant to within-set slice order") {
    Rng rng(37);
    const std::size_t b = 3, k = 3, d = 16;

    for (DsHeadKind head : {DsHeadKind::Identity, DsHeadKind::Mlp}) {
        ModelBundle m = init_model(tiny_config(Variant::DeepSet, head), 13);
        Tensor x1 = random_images(b * k, 1, d, rng);
        Tensor x2 = random_images(b * k, 1, d, rng);
        const double reference = set_contrastive_loss(m, x1, x2, k).value();

        std::vector<std::size_t> perm{0, 1, 2};
        do {
            auto permute = [&](const Tensor& x) {
                std::vector<double> out(x.data().size());
                const std::size_t img = d * d;
                for (std::size_t set = 0; set < b; ++set)
                    for (std::size_t j = 0; j < k; ++j)
                        std::copy_n(x.data().begin() + ((set * k + perm[j]) * img),
                                    img, out.begin() + ((set * k + j) * img));
                return Tensor::from_data({b * k, 1, d, d}, std::move(out), false);
            };
            const double shuffled =
                set_contrastive_loss(m, permute(x1), permute(x2), k).value();
            CHECK(std::abs(shuffled - reference) < 1e-9);
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
}

TEST_CASE("set loss with K=1 and identity head degenerates to the pair loss") {
    ModelBundle pair_model = init_model(tiny_config(Variant::Baseline), 17);
    ModelBundle set_model = init_model(tiny_config(Variant::DeepSet), 17);

    Rng rng(41);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor x1 = random_images(4, 1, 16, rng);
        Tensor x2 = random_images(4, 1, 16, rng);
        const double a = pair_contrastive_loss(pair_model, x1, x2).value();
        const double b = set_contrastive_loss(set_model, x1, x2, 1).value();
        CHECK(a == b);  // bitwise: the K=1 path copies rows and adds nothing
    }
}

TEST_CASE("set loss rejects a batch that does not divide into sets") {
    ModelBundle m = init_model(tiny_config(Variant::DeepSet), 19);
    Rng rng(43);
    Tensor x1 = random_images(5, 1, 16, rng);
    Tensor x2 = random_images(5, 1, 16, rng);
    CHECK_THROWS_AS(set_contrastive_loss(m, x1, x2, 3), ContractError);
}
