#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "volcon/trainer.hpp"

using namespace volcon;
namespace fs = std::filesystem;

namespace {

// Small config that trains in well under a second.
TrainConfig tiny_train_config(Variant v) {
    TrainConfig cfg;
    cfg.variant = v;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 3;
    cfg.batch_size = 2;
    cfg.lr0 = 0.01;
    cfg.image_size = 16;
    cfg.feature_dim = 8;
    cfg.proj_dim = 4;
    cfg.base_channels = 2;
    cfg.window.k_set = 2;
    cfg.augment.blur_enabled = false;  // blur dominates tiny-run time
    cfg.seed = 42;
    return cfg;
}

ScanDataset tiny_dataset() { return generate_synthetic_dataset(5, 6, 20, 20, 1, 2, 9); }

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg = tiny_train_config(Variant::Baseline);
    CHECK_NOTHROW(validate_train_config(cfg));

    cfg.batch_size = 1;  // a contrastive batch needs negatives
    CHECK_THROWS_AS(validate_train_config(cfg), ContractError);
    cfg = tiny_train_config(Variant::Baseline);
    cfg.epochs = 0;
    CHECK_THROWS_AS(validate_train_config(cfg), ContractError);
    cfg = tiny_train_config(Variant::Baseline);
    cfg.lr0 = 0.0;
    CHECK_THROWS_AS(validate_train_config(cfg), ContractError);
    cfg = tiny_train_config(Variant::Baseline);
    cfg.weight_decay = -1e-3;
    CHECK_THROWS_AS(validate_train_config(cfg), ContractError);
    cfg = tiny_train_config(Variant::PerScan);
    cfg.window.omega = 0.0;
    CHECK_THROWS_AS(validate_train_config(cfg), ContractError);
}

TEST_CASE("steps per epoch defaults to one pass worth of slices") {
    TrainConfig cfg = tiny_train_config(Variant::Baseline);
    ScanDataset data = tiny_dataset();  // 30 slices
    cfg.steps_per_epoch = 0;
    cfg.batch_size = 8;
    CHECK(resolve_steps_per_epoch(cfg, data) == 4);  // ceil(30/8)
    cfg.batch_size = 30;
    CHECK(resolve_steps_per_epoch(cfg, data) == 1);
    cfg.steps_per_epoch = 7;
    CHECK(resolve_steps_per_epoch(cfg, data) == 7);
}

TEST_CASE("cosine schedule hits its closed-form points") {
    CHECK(cosine_lr(0, 100, 0.07) == doctest::Approx(0.07).epsilon(1e-15));
    CHECK(cosine_lr(50, 100, 0.07) == doctest::Approx(0.035).epsilon(1e-15));
    CHECK(cosine_lr(100, 100, 0.07) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cosine_lr(25, 100, 1.0) ==
          doctest::Approx(0.5 * (1.0 + std::cos(kPi * 0.25))).epsilon(1e-15));

    // Monotone decay across the whole schedule.
    double prev = cosine_lr(0, 200, 0.1);
    for (std::size_t s = 1; s <= 200; ++s) {
        const double cur = cosine_lr(s, 200, 0.1);
        CHECK(cur <= prev);
        prev = cur;
    }

    CHECK_THROWS_AS(cosine_lr(5, 0, 0.1), ContractError);
    CHECK_THROWS_AS(cosine_lr(101, 100, 0.1), ContractError);
}

TEST_CASE("adam takes the textbook first step") {
    ParamStore ps;
    ps.add("w", Tensor::from_data({2}, {0.0, 0.0}, true));
    ps.find("w")->grad() = {1.0, -2.0};

    AdamState st = init_adam(ps);
    CHECK(st.t == 0);
    REQUIRE(st.m.size() == 1);
    CHECK(st.m[0] == std::vector<double>{0.0, 0.0});

    adam_step(ps, st, 0.1, 0.0);
    CHECK(st.t == 1);
    // Bias correction cancels at t=1: step = lr * g / (|g| + eps).
    CHECK(ps.find("w")->data()[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(ps.find("w")->data()[1] == doctest::Approx(0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam second step matches a hand computation") {
    ParamStore ps;
    ps.add("w", Tensor::from_data({1}, {0.5}, true));
    AdamState st = init_adam(ps);

    double theta = 0.5, m = 0.0, v = 0.0;
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double grads[2] = {0.3, -0.7};
    for (int t = 1; t <= 2; ++t) {
        ps.find("w")->grad() = {grads[t - 1]};
        adam_step(ps, st, lr, 0.0);

        m = b1 * m + (1 - b1) * grads[t - 1];
        v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        theta -= lr * mh / (std::sqrt(vh) + eps);
        CHECK(ps.find("w")->data()[0] == doctest::Approx(theta).epsilon(1e-15));
        ps.zero_grad();
    }
}

TEST_CASE("weight decay folds into the gradient") {
    ParamStore ps;
    ps.add("w", Tensor::from_data({1}, {2.0}, true));
    AdamState st = init_adam(ps);
    // Zero loss gradient: the only pull is wd * theta = 0.2.
    adam_step(ps, st, 0.1, 0.1);
    CHECK(ps.find("w")->data()[0] ==
          doctest::Approx(2.0 - 0.1 * 0.2 / (0.2 + 1e-8)).epsilon(1e-12));

    // Zero gradient and zero decay move nothing.
    ParamStore qs;
    qs.add("w", Tensor::from_data({1}, {2.0}, true));
    AdamState st2 = init_adam(qs);
    adam_step(qs, st2, 0.1, 0.0);
    CHECK(qs.find("w")->data()[0] == 2.0);
    CHECK(st2.t == 1);
}

TEST_CASE("assemble_batch is a pure function of config and step") {
    ScanDataset data = tiny_dataset();

    for (Variant v : {Variant::Baseline, Variant::PerScan, Variant::DeepSet}) {
        TrainConfig cfg = tiny_train_config(v);
        ViewBatch a = assemble_batch(data, cfg, 4);
        ViewBatch b = assemble_batch(data, cfg, 4);
        ViewBatch other = assemble_batch(data, cfg, 5);

        CHECK(a.x1.data() == b.x1.data());
        CHECK(a.x2.data() == b.x2.data());
        CHECK(a.x1.data() != other.x1.data());

        if (v == Variant::DeepSet) {
            CHECK(a.k == 2);
            CHECK(a.x1.shape() == Shape{4, 1, 16, 16});  // B*K rows
        } else {
            CHECK(a.k == 1);
            CHECK(a.x1.shape() == Shape{2, 1, 16, 16});
        }
        CHECK_FALSE(a.x1.requires_grad());
    }
}

TEST_CASE("different seeds assemble different batches") {
    ScanDataset data = tiny_dataset();
    TrainConfig cfg = tiny_train_config(Variant::Baseline);
    ViewBatch a = assemble_batch(data, cfg, 0);
    cfg.seed = 43;
    ViewBatch b = assemble_batch(data, cfg, 0);
    CHECK(a.x1.data() != b.x1.data());
}

TEST_CASE("pretrain runs, records history, and is reproducible") {
    ScanDataset data = tiny_dataset();
    TrainConfig cfg = tiny_train_config(Variant::Baseline);

    RunRecord r1 = pretrain(data, cfg);
    RunRecord r2 = pretrain(data, cfg);

    REQUIRE(r1.history.size() == 6);  // 2 epochs x 3 steps
    CHECK(r1.steps_per_epoch == 3);
    CHECK(r1.final_loss == r1.history.back().loss);
    for (std::size_t s = 0; s < 6; ++s) {
        CHECK(r1.history[s].step == s);
        CHECK(r1.history[s].epoch == s / 3);
        CHECK(r1.history[s].lr == cosine_lr(s, 6, cfg.lr0));
        CHECK(std::isfinite(r1.history[s].loss));
        // Bitwise reproducibility, not approximate equality.
        CHECK(r1.history[s].loss == r2.history[s].loss);
    }

    // Parameters came out identical too.
    for (std::size_t i = 0; i < r1.model.params.items.size(); ++i)
        CHECK(r1.model.params.items[i].second.data() ==
              r2.model.params.items[i].second.data());

    // In-memory runs leave no artifact paths behind.
    CHECK(r1.history_path.empty());
    CHECK(r1.checkpoint_path.empty());
}

TEST_CASE("pretrain trains every variant") {
    ScanDataset data = tiny_dataset();
    for (Variant v : {Variant::PerScan, Variant::DeepSet}) {
        TrainConfig cfg = tiny_train_config(v);
        if (v == Variant::DeepSet) cfg.ds_head = DsHeadKind::Mlp;
        RunRecord r = pretrain(data, cfg);
        CHECK(r.history.size() == 6);
        CHECK(std::isfinite(r.final_loss));
    }
}

TEST_CASE("pretrain writes artifacts when out_dir is set") {
    ScanDataset data = tiny_dataset();
    TrainConfig cfg = tiny_train_config(Variant::Baseline);
    const fs::path dir = fs::temp_directory_path() / "volcon_trainer_run";
    fs::remove_all(dir);
    cfg.out_dir = dir.string();

    RunRecord r = pretrain(data, cfg);
    CHECK(fs::exists(dir / "history.csv"));
    CHECK(fs::exists(dir / "checkpoint.volp"));
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(r.history_path == (dir / "history.csv").string());

    // The checkpoint holds the trained parameters bit-exactly.
    ParamStore loaded = load_params(r.checkpoint_path);
    REQUIRE(loaded.items.size() == r.model.params.items.size());
    for (std::size_t i = 0; i < loaded.items.size(); ++i)
        CHECK(loaded.items[i].second.data() == r.model.params.items[i].second.data());
    fs::remove_all(dir);
}

TEST_CASE("history csv round-trips exact doubles") {
    std::vector<StepStat> h = {{0, 0, 0.07, 2.70805020110221},
                               {1, 0, 0.0699982739895833, 2.69}};
    const fs::path p = fs::temp_directory_path() / "volcon_history_test.csv";
    write_history_csv(h, p.string());

    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,epoch,lr,loss");

    std::getline(in, line);
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    CHECK(cell == "0");
    std::getline(row, cell, ',');
    CHECK(cell == "0");
    std::getline(row, cell, ',');
    CHECK(std::stod(cell) == 0.07);  // %.17g survives the round trip
    std::getline(row, cell, ',');
    CHECK(std::stod(cell) == 2.70805020110221);
    fs::remove(p);
}

TEST_CASE("model_config_for copies the training dimensions") {
    TrainConfig cfg = tiny_train_config(Variant::DeepSet);
    cfg.ds_head = DsHeadKind::Mlp;
    cfg.temperature = 0.3;
    ModelConfig mc = model_config_for(cfg, 3);
    CHECK(mc.variant == Variant::DeepSet);
    CHECK(mc.in_channels == 3);
    CHECK(mc.image_size == 16);
    CHECK(mc.feature_dim == 8);
    CHECK(mc.proj_dim == 4);
    CHECK(mc.ds_head == DsHeadKind::Mlp);
    CHECK(mc.temperature == 0.3);
}
