#include "volcon/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "volcon/config.hpp"
#include "volcon/eval.hpp"
#include "volcon/scan_store.hpp"
#include "volcon/selfcheck.hpp"
#include "volcon/trainer.hpp"

namespace volcon {

namespace {

constexpr const char* kConfigKeyHelp =
    "Config file keys (JSON, applied over the variant preset):\n"
    "  variant            baseline | ps | ds        (preset: baseline)\n"
    "  epochs             integer >= 1              (preset: 100)\n"
    "  steps_per_epoch    integer, 0 = one pass of slices per epoch (preset: 0)\n"
    "  batch_size         integer >= 2              (preset: 32)\n"
    "  lr0                initial learning rate     (preset: 0.07)\n"
    "  weight_decay       L2 folded into gradients  (preset: 1e-10)\n"
    "  temperature        softmax temperature       (preset: 0.5)\n"
    "  image_size         view side D               (preset: 224; ds: 128)\n"
    "  feature_dim        encoder output width      (preset: 64)\n"
    "  proj_dim           projection output width   (preset: 32)\n"
    "  base_channels      first conv block width    (preset: 8)\n"
    "  ds_head            identity | mlp            (ds preset: mlp)\n"
    "  omega              window width fraction     (ps preset: 0.1; ds: 0.5)\n"
    "  t_threshold        ps fallback slice count   (ps preset: 5)\n"
    "  k_set              slices per set view       (ds preset: 3)\n"
    "  seed               integer                   (preset: 1)\n"
    "  out_dir            artifact directory        (preset: unset)\n"
    "  augment            object: crop_scale [lo,hi] (0.2,1.0), hflip_prob 0.5,\n"
    "                     blur_prob 0.5, blur_sigma [lo,hi] (0.1,2.0),\n"
    "                     jitter_strength 0.4, crop/flip/blur/jitter_enabled true,\n"
    "                     share_full_transform true\n";

void cmd_gen_data(std::size_t scans, std::size_t slices, std::size_t height,
                  std::size_t width, std::size_t channels, std::size_t classes,
                  std::uint64_t seed, const std::string& out) {
    const ScanDataset data =
        generate_synthetic_dataset(scans, slices, height, width, channels, classes, seed);
    save_dataset(data, out);
    std::cout << "wrote " << out << ": " << data.num_scans() << " scans, "
              << data.total_slices() << " slices, " << classes << " classes\n";
}

void cmd_pretrain(const std::string& config_path, const std::string& data_path,
                  const std::string& variant_flag, const std::string& out_dir) {
    nlohmann::json doc = nlohmann::json::object();
    if (!config_path.empty()) doc = read_json_file(config_path);

    std::string variant_str = variant_flag;
    if (variant_str.empty() && doc.is_object() && doc.contains("variant") &&
        doc["variant"].is_string())
        variant_str = doc["variant"].get<std::string>();
    if (variant_str.empty()) variant_str = "baseline";
    const Variant variant = variant_from_name(variant_str);

    TrainConfig cfg = apply_config_json(preset_config(variant), doc);
    cfg.variant = variant;  // the flag outranks a conflicting config key
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (cfg.out_dir.empty())
        throw ContractError("no output directory: pass --out-dir or set out_dir in the "
                            "config");

    const ScanDataset data = load_dataset(data_path);
    const RunRecord rec = pretrain(data, cfg);
    char line[256];
    std::snprintf(line, sizeof line,
                  "pretrained %s: %zu steps, final loss %.6f, %.1fs; artifacts in %s\n",
                  variant_name(cfg.variant).c_str(), rec.history.size(), rec.final_loss,
                  rec.wall_seconds, cfg.out_dir.c_str());
    std::cout << line;
}

void cmd_probe(const std::string& checkpoint, const std::string& train_path,
               const std::string& test_path, const std::string& out_path) {
    namespace fs = std::filesystem;
    fs::path volp(checkpoint), manifest;
    if (fs::is_directory(volp)) {
        manifest = volp / "manifest.json";
        volp /= "checkpoint.volp";
    } else {
        manifest = volp.parent_path() / "manifest.json";
    }

    const ModelBundle model = load_model_checkpoint(volp.string(), manifest.string());
    const ScanDataset train_data = load_dataset(train_path);
    const ScanDataset test_data = load_dataset(test_path);
    const FeatureTable train_ft = extract_features(model, train_data, "train");
    const FeatureTable test_ft = extract_features(model, test_data, "test");
    const double accuracy = linear_probe(train_ft, test_ft);

    std::ofstream out(out_path);
    if (!out) throw IoError("probe: cannot open '" + out_path + "' for writing");
    char row[512];
    std::snprintf(row, sizeof row, "checkpoint,n_train,n_test,probe_accuracy\n%s,%zu,%zu,%.10g\n",
                  checkpoint.c_str(), train_ft.rows.size(), test_ft.rows.size(), accuracy);
    out << row;
    if (!out) throw IoError("probe: write failure on '" + out_path + "'");

    std::snprintf(row, sizeof row, "probe_accuracy %.6f\n", accuracy);
    std::cout << row;
}

void cmd_sweep(const std::string& spec_path, const std::string& out_dir) {
    const SweepSpec spec = load_sweep_spec(spec_path);
    const std::vector<SweepCellResult> cells = run_sweep(spec);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("sweep: cannot create '" + out_dir + "': " + ec.message());
    const std::string csv = (std::filesystem::path(out_dir) / "results.csv").string();
    write_sweep_csv(cells, csv);

    std::size_t failed = 0;
    for (const auto& cell : cells)
        if (!cell.error.empty()) {
            ++failed;
            std::cerr << "sweep cell (delta " << cell.delta_index << ", seed " << cell.seed
                      << ") failed: " << cell.error << "\n";
        }
    std::cout << "sweep: " << cells.size() << " cells (" << failed << " failed) -> " << csv
              << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"contrastive pretraining kit for volumetric slice data"};
    app.require_subcommand(1);

    std::size_t scans = 0, slices = 0, height = 0, width = 0, channels = 1, classes = 2;
    std::uint64_t gen_seed = 1;
    std::string gen_out;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a labeled synthetic dataset");
    gen->add_option("--scans", scans, "number of scans")->required()->check(CLI::PositiveNumber);
    gen->add_option("--slices", slices, "slices per scan")->required()->check(CLI::PositiveNumber);
    gen->add_option("--height", height, "slice height")->required()->check(CLI::PositiveNumber);
    gen->add_option("--width", width, "slice width")->required()->check(CLI::PositiveNumber);
    gen->add_option("--channels", channels, "channels per slice (default 1)")
        ->check(CLI::PositiveNumber);
    gen->add_option("--classes", classes, "number of classes (default 2)")
        ->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "generator seed (default 1)");
    gen->add_option("--out", gen_out, "output .volc path")->required();
    gen->callback([&] {
        cmd_gen_data(scans, slices, height, width, channels, classes, gen_seed, gen_out);
    });

    std::string pre_config, pre_data, pre_variant, pre_out_dir;
    CLI::App* pre = app.add_subcommand("pretrain", "pretrain one variant on a dataset");
    pre->footer(kConfigKeyHelp);
    pre->add_option("--config", pre_config, "JSON config applied over the variant preset")
        ->check(CLI::ExistingFile);
    pre->add_option("--data", pre_data, "training dataset (.volc)")
        ->required()
        ->check(CLI::ExistingFile);
    pre->add_option("--variant", pre_variant, "baseline | ps | ds (outranks the config key)")
        ->check(CLI::IsMember({"baseline", "ps", "ds"}));
    pre->add_option("--out-dir", pre_out_dir, "artifact directory (history.csv, "
                                              "checkpoint.volp, manifest.json)");
    pre->callback([&] { cmd_pretrain(pre_config, pre_data, pre_variant, pre_out_dir); });

    std::string probe_ckpt, probe_train, probe_test, probe_out;
    CLI::App* probe = app.add_subcommand(
        "probe", "linear evaluation of a checkpoint's frozen features");
    probe->add_option("--checkpoint", probe_ckpt,
                      "run directory or checkpoint.volp (manifest.json beside it)")
        ->required()
        ->check(CLI::ExistingPath);
    probe->add_option("--train-data", probe_train, "probe training split (.volc)")
        ->required()
        ->check(CLI::ExistingFile);
    probe->add_option("--test-data", probe_test, "probe test split (.volc)")
        ->required()
        ->check(CLI::ExistingFile);
    probe->add_option("--out", probe_out, "result CSV path")->required();
    probe->callback([&] { cmd_probe(probe_ckpt, probe_train, probe_test, probe_out); });

    std::string sweep_spec, sweep_out_dir;
    CLI::App* sweep = app.add_subcommand(
        "sweep", "pretrain+probe a grid of config deltas across seeds");
    sweep->add_option("--spec", sweep_spec,
                      "JSON spec: base, deltas, seeds, pretrain_data, probe_train_data, "
                      "probe_test_data, probe_l2, probe_iters")
        ->required()
        ->check(CLI::ExistingFile);
    sweep->add_option("--out-dir", sweep_out_dir, "directory for results.csv")->required();
    sweep->callback([&] { cmd_sweep(sweep_spec, sweep_out_dir); });

    int rc = 0;
    CLI::App* self = app.add_subcommand("selfcheck", "run the built-in verification suite");
    self->callback([&] { rc = run_selfcheck(std::cout) == 0 ? 0 : 3; });

    try {
        std::vector<const char*> argv;
        argv.reserve(args.size() + 1);
        argv.push_back("volcon");
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
        return rc;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace volcon
