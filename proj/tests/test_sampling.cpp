#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "volcon/sampling.hpp"
#include "volcon/scan_store.hpp"

using namespace volcon;

namespace {

// Dataset of `sizes.size()` scans with the given slice counts; pixel
// content is irrelevant to the samplers.
ScanDataset scans_of_sizes(const std::vector<std::size_t>& sizes) {
    ScanDataset d;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        Scan s;
        s.id = "s" + std::to_string(i);
        s.height = s.width = s.channels = 1;
        s.slices.assign(sizes[i], std::vector<float>(1, 0.5f));
        d.scans.push_back(std::move(s));
    }
    return d;
}

}  // namespace

TEST_CASE("rng derives distinct deterministic streams") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
    CHECK(derive_seed(1, 2, 0) != derive_seed(1, 2, 1));

    Rng a(7), b(7);
    for (int i = 0; i < 100; ++i) CHECK(a.raw() == b.raw());
}

TEST_CASE("rng below is unbiased and skips the degenerate draw") {
    Rng rng(3);
    const std::size_t before = rng.calls();
    CHECK(rng.below(1) == 0);
    CHECK(rng.calls() == before);  // nothing consumed for a one-way choice

    // 7 does not divide 2^64, so a biased implementation would show here.
    std::vector<std::size_t> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
    auto r = oracle::chi_square_uniform(counts);
    CHECK(r.pass);
}

TEST_CASE("rng uniform and normal behave sanely") {
    Rng rng(9);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform(2.0, 5.0);
        CHECK(u >= 2.0);
        CHECK(u < 5.0);
        sum += u;
    }
    CHECK(sum / 10000 == doctest::Approx(3.5).epsilon(0.02));

    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double g = rng.normal();
        m += g;
        m2 += g * g;
    }
    m /= 20000;
    m2 /= 20000;
    CHECK(std::abs(m) < 0.05);
    CHECK(m2 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("window parameters are validated") {
    WindowParams p;
    CHECK_NOTHROW(validate_window_params(p));

    p.omega = 0.0;
    CHECK_THROWS_AS(validate_window_params(p), ContractError);
    p.omega = 1.5;
    CHECK_THROWS_AS(validate_window_params(p), ContractError);
    p.omega = 1.0;
    p.k_set = 0;
    CHECK_THROWS_AS(validate_window_params(p), ContractError);
}

TEST_CASE("window width is max(1, round(omega * length))") {
    struct Case {
        std::size_t length;
        double omega;
        std::size_t width;
    };
    // Half-up rounding: 0.4 -> 0 (clamped to 1), 0.5 -> 1, 3.5 -> 4.
    const Case cases[] = {{10, 0.5, 5}, {10, 0.04, 1}, {5, 0.1, 1},
                          {7, 0.5, 4},  {10, 1.0, 10}, {1, 1.0, 1},
                          {40, 0.1, 4}, {16, 0.5, 8}};
    Rng rng(1);
    for (const auto& c : cases) {
        for (int rep = 0; rep < 50; ++rep) {
            auto [start, end] = sample_window(c.length, c.omega, rng);
            CHECK(end - start == c.width);
            CHECK(end <= c.length);
        }
    }
    CHECK_THROWS_AS(sample_window(0, 0.5, rng), ContractError);
}

TEST_CASE("window start is uniform over the in-bounds range") {
    Rng rng(17);
    // length 50, omega 0.2 -> width 10 -> starts in {0..40}.
    std::vector<std::size_t> counts(41, 0);
    for (int i = 0; i < 50000; ++i) {
        auto [start, end] = sample_window(50, 0.2, rng);
        REQUIRE(start <= 40);
        ++counts[start];
    }
    auto r = oracle::chi_square_uniform(counts);
    INFO("chi-square ", r.statistic, " cutoff ", r.cutoff);
    CHECK(r.pass);
}

TEST_CASE("baseline sampling is uniform over all slices") {
    ScanDataset d = scans_of_sizes({3, 1, 6, 2});
    auto refs = flatten(d);
    REQUIRE(refs.size() == 12);

    Rng rng(23);
    std::vector<std::size_t> counts(refs.size(), 0);
    for (int i = 0; i < 60000; ++i) {
        PairSample s = sample_baseline(d, rng);
        CHECK(s.kind == PairKind::BaselinePair);
        CHECK(s.first == s.second);
        auto it = std::find(refs.begin(), refs.end(), s.first);
        REQUIRE(it != refs.end());
        ++counts[static_cast<std::size_t>(it - refs.begin())];
    }
    auto r = oracle::chi_square_uniform(counts);
    CHECK(r.pass);
}

TEST_CASE("scan index sampling is uniform") {
    ScanDataset d = scans_of_sizes({4, 4, 4, 4, 4});
    Rng rng(29);
    std::vector<std::size_t> counts(5, 0);
    for (int i = 0; i < 25000; ++i) ++counts[sample_scan_index(d, rng)];
    CHECK(oracle::chi_square_uniform(counts).pass);
}

TEST_CASE("ps pairs come from one window") {
    ScanDataset d = scans_of_sizes({40});
    WindowParams p;
    p.omega = 0.1;  // width 4 on a 40-slice scan
    p.t_threshold = 5;

    Rng rng(31);
    bool saw_distinct = false;
    for (int i = 0; i < 20000; ++i) {
        PairSample s = sample_ps_pair(d, 0, p, rng);
        CHECK(s.kind == PairKind::PsPair);
        CHECK(s.first.scan_index == 0);
        CHECK(s.second.scan_index == 0);
        const auto a = s.first.slice_index;
        const auto b = s.second.slice_index;
        CHECK(a < 40);
        CHECK(b < 40);
        const std::size_t delta = a > b ? a - b : b - a;
        CHECK(delta < 4);  // both inside a width-4 window
        if (a != b) saw_distinct = true;
    }
    CHECK(saw_distinct);
}

TEST_CASE("ps sampling falls back to baseline on short scans") {
    ScanDataset d = scans_of_sizes({4});
    WindowParams p;
    p.omega = 0.5;
    p.t_threshold = 5;  // scan length 4 < 5

    Rng rng(37);
    for (int i = 0; i < 200; ++i) {
        PairSample s = sample_ps_pair(d, 0, p, rng);
        CHECK(s.kind == PairKind::BaselinePair);
        CHECK(s.first == s.second);
        CHECK(s.first.scan_index == 0);
    }
}

TEST_CASE("equidistant indices hit pinned positions") {
    auto idx = [](std::size_t start, std::size_t end, std::size_t k) {
        return equidistant_indices(Window{0, start, end}, k);
    };
    // Fractional positions round half-up along the window.
    CHECK(idx(10, 20, 3) == std::vector<std::size_t>{10, 15, 19});
    CHECK(idx(5, 7, 4) == std::vector<std::size_t>{5, 5, 6, 6});
    CHECK(idx(0, 9, 3) == std::vector<std::size_t>{0, 4, 8});
    CHECK(idx(3, 4, 5) == std::vector<std::size_t>{3, 3, 3, 3, 3});
    // K=1 takes the window midpoint.
    CHECK(idx(10, 20, 1) == std::vector<std::size_t>{14});
    CHECK(idx(10, 11, 1) == std::vector<std::size_t>{10});
    CHECK(idx(0, 5, 1) == std::vector<std::size_t>{2});

    CHECK_THROWS_AS(idx(5, 5, 3), ContractError);  // empty window
    CHECK_THROWS_AS(idx(5, 8, 0), ContractError);
}

TEST_CASE("equidistant indices stay inside the window for fuzzed shapes") {
    Rng rng(41);
    for (int rep = 0; rep < 2000; ++rep) {
        const std::size_t start = rng.below(30);
        const std::size_t width = 1 + rng.below(20);
        const std::size_t k = 1 + rng.below(8);
        auto v = equidistant_indices(Window{0, start, start + width}, k);
        REQUIRE(v.size() == k);
        CHECK(std::is_sorted(v.begin(), v.end()));
        for (std::size_t i : v) {
            CHECK(i >= start);
            CHECK(i < start + width);
        }
    }
}

TEST_CASE("ds views draw two independent windows of one scan") {
    ScanDataset d = scans_of_sizes({16});
    WindowParams p;
    p.omega = 0.5;
    p.k_set = 3;

    Rng rng(43);
    bool windows_differ = false;
    for (int i = 0; i < 2000; ++i) {
        SetSample s = sample_ds_views(d, 0, p, rng);
        CHECK(s.scan_index == 0);
        REQUIRE(s.set_a.size() == 3);
        REQUIRE(s.set_b.size() == 3);
        for (std::size_t j : s.set_a) CHECK(j < 16);
        for (std::size_t j : s.set_b) CHECK(j < 16);
        // Each set spans at most one width-8 window.
        CHECK(s.set_a.back() - s.set_a.front() < 8);
        CHECK(s.set_b.back() - s.set_b.front() < 8);
        if (s.set_a != s.set_b) windows_differ = true;
    }
    CHECK(windows_differ);
}

TEST_CASE("samplers replay identically from an equal rng state") {
    ScanDataset d = scans_of_sizes({12, 7, 30});
    WindowParams p;
    p.omega = 0.4;
    p.k_set = 4;

    Rng r1(99), r2(99);
    for (int i = 0; i < 300; ++i) {
        const std::size_t scan1 = sample_scan_index(d, r1);
        const std::size_t scan2 = sample_scan_index(d, r2);
        CHECK(scan1 == scan2);
        PairSample a = sample_ps_pair(d, scan1, p, r1);
        PairSample b = sample_ps_pair(d, scan2, p, r2);
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
        SetSample sa = sample_ds_views(d, scan1, p, r1);
        SetSample sb = sample_ds_views(d, scan2, p, r2);
        CHECK(sa.set_a == sb.set_a);
        CHECK(sa.set_b == sb.set_b);
    }
}

TEST_CASE("samplers reject out-of-range arguments") {
    ScanDataset d = scans_of_sizes({5});
    WindowParams p;
    Rng rng(1);
    CHECK_THROWS_AS(sample_ps_pair(d, 1, p, rng), ContractError);
    CHECK_THROWS_AS(sample_ds_views(d, 1, p, rng), ContractError);

    ScanDataset empty;
    CHECK_THROWS_AS(sample_baseline(empty, rng), ContractError);
    CHECK_THROWS_AS(sample_scan_index(empty, rng), ContractError);
}
