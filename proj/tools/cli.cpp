#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "sdaut/explain.hpp"
#include "sdaut/io.hpp"
#include "sdaut/kspace.hpp"
#include "sdaut/macs.hpp"
#include "sdaut/phantom.hpp"
#include "sdaut/trainer.hpp"

namespace sdaut {

namespace fs = std::filesystem;

namespace {

bool is_pgm(const fs::path& p) { return p.extension() == ".pgm"; }

Tensor load_image(const fs::path& path) {
    Tensor t = is_pgm(path) ? read_pgm(path) : load_tensor(path);
    if (t.rank() == 2) t = Tensor({1, t.dim(0), t.dim(1)}, std::vector<double>(t.data().begin(), t.data().end()));
    if (t.rank() != 3 || t.dim(0) != 1) throw ShapeError(path.string() + ": expected a [1,H,W] image, got " + to_string(t.shape()));
    return t;
}

void save_image(const fs::path& path, const Tensor& t) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (is_pgm(path)) {
        write_pgm(path, t);
    } else {
        save_tensor(path, t);
    }
}

std::pair<Index, Index> parse_query(const std::string& text) {
    const auto parts = split(text, ',');
    if (parts.size() != 2) throw std::invalid_argument("--query expects R,C");
    return {std::stoll(trim(parts[0])), std::stoll(trim(parts[1]))};
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Swin deformable attention U-Net for undersampled MRI"};
    app.require_subcommand(1);

    Index n = 8, size = 64;
    std::uint64_t seed = 0;
    std::string out_path, kind = "gaussian1d", image, mask, config, data, ckpt, report, preset_name = "KKDDKK-O-1";
    std::string block = "E3", query = "0,0";
    double ratio = 0.3;
    Index layer = 0, head = 0;

    auto* phantom = app.add_subcommand("phantom-gen", "Write a synthetic head phantom dataset");
    phantom->add_option("--n", n, "Number of phantoms")->check(CLI::NonNegativeNumber);
    phantom->add_option("--size", size, "Image extent")->check(CLI::PositiveNumber);
    phantom->add_option("--seed", seed, "Generator seed");
    phantom->add_option("--out", out_path, "Output directory")->required();

    auto* maskgen = app.add_subcommand("mask-gen", "Write an undersampling mask");
    maskgen->add_option("--kind", kind, "gaussian1d or radial")->check(CLI::IsMember({"gaussian1d", "radial"}));
    maskgen->add_option("--ratio", ratio, "Sampling ratio")->check(CLI::Range(0.0, 1.0));
    maskgen->add_option("--size", size, "Mask extent")->check(CLI::PositiveNumber);
    maskgen->add_option("--seed", seed, "Mask seed");
    maskgen->add_option("--out", out_path, "Output file")->required();

    auto* under = app.add_subcommand("undersample", "Zero-filled reconstruction of an image under a mask");
    under->add_option("--image", image, "Image (.dtns or .pgm)")->required()->check(CLI::ExistingFile);
    under->add_option("--mask", mask, "Mask file")->required()->check(CLI::ExistingFile);
    under->add_option("--out", out_path, "Output image (.dtns or .pgm)")->required();

    auto* train_cmd = app.add_subcommand("train", "Train on a phantom directory");
    train_cmd->add_option("--config", config, "key = value config")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--out", out_path, "Output directory")->required();

    auto* recon = app.add_subcommand("reconstruct", "Undersample an image and run the model on it");
    recon->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    recon->add_option("--image", image, "Fully sampled image")->required()->check(CLI::ExistingFile);
    recon->add_option("--mask", mask, "Mask file")->required()->check(CLI::ExistingFile);
    recon->add_option("--out", out_path, "Output image (.dtns or .pgm)")->required();

    auto* eval = app.add_subcommand("evaluate", "PSNR/SSIM of model and zero-filled inputs");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--mask", mask, "Mask file")->required()->check(CLI::ExistingFile);
    eval->add_option("--report", report, "Report file (key = value)")->required();

    auto* macs = app.add_subcommand("macs", "Analytical MACs of a preset");
    macs->add_option("--preset", preset_name, "e.g. KKDDKK-O-1");
    macs->add_option("--size", size, "Input extent")->check(CLI::PositiveNumber);
    macs->add_option("--report", report, "Report file (key = value)");

    auto* inspect = app.add_subcommand("inspect", "Export deformation fields and an attention heatmap");
    inspect->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    inspect->add_option("--image", image, "Model input image")->required()->check(CLI::ExistingFile);
    inspect->add_option("--block", block, "E1 E2 E3 D3 D2 D1");
    inspect->add_option("--layer", layer, "Layer index");
    inspect->add_option("--head", head, "Head index");
    inspect->add_option("--query", query, "Query R,C on the block map");
    inspect->add_option("--out", out_path, "Output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*phantom) {
            save_dataset(out_path, phantom_gen(seed, n, size));
            out << "wrote " << n << " phantoms (" << size << "x" << size << ") to " << out_path << "\n";
        } else if (*maskgen) {
            const auto m = make_mask(kind, ratio, size, seed);
            if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
            kspace::save_mask(out_path, m);
            out << kind << " mask " << size << "x" << size << ": kept " << m.kept_count() << " samples, ratio "
                << fmt("%.4f", m.achieved_ratio()) << "\n";
        } else if (*under) {
            save_image(out_path, kspace::undersample(load_image(image), kspace::load_mask(mask)));
            out << "wrote " << out_path << "\n";
        } else if (*train_cmd) {
            const auto cfg = TrainConfig::from_kv(KeyValueFile::load(config));
            const auto images = load_dataset(data);
            if (images.empty()) throw std::runtime_error("no .dtns images in " + data);
            const auto m = make_mask(cfg.mask_kind, cfg.mask_ratio, images[0].dim(1), cfg.mask_seed);
            const auto samples = make_samples(images, m);
            fs::create_directories(out_path);
            kspace::save_mask(fs::path(out_path) / "mask.dtns", m);
            write_file_atomic(fs::path(out_path) / "train.config", cfg.to_kv().serialize());
            std::string log;
            const auto state = train(cfg, samples, [&](Index step, double lr, double loss, double ms) {
                char line[128];
                std::snprintf(line, sizeof line, "%lld, %.6g, %.6f, %.0f\n", static_cast<long long>(step), lr, loss, ms);
                log += line;
                out << line << std::flush;
            });
            write_file_atomic(fs::path(out_path) / "train.log", log);
            save_checkpoint(fs::path(out_path) / "model.ckpt", state.model, state.params);
            out << "checkpoint " << (fs::path(out_path) / "model.ckpt").string() << "\n";
        } else if (*recon) {
            const auto ck = load_checkpoint(ckpt);
            const auto sample = make_samples({load_image(image)}, kspace::load_mask(mask));
            save_image(out_path, reconstruct(ck.config, ck.params, sample[0].x_u));
            out << "wrote " << out_path << "\n";
        } else if (*eval) {
            const auto ck = load_checkpoint(ckpt);
            const auto rep = evaluate(ck.config, ck.params, make_samples(load_dataset(data), kspace::load_mask(mask)));
            if (fs::path(report).has_parent_path()) fs::create_directories(fs::path(report).parent_path());
            write_file_atomic(report, rep.to_kv().serialize());
            out << rep.text();
        } else if (*macs) {
            const auto r = macs_estimate(preset(preset_name), size, size);
            out << r.table();
            if (!report.empty()) {
                if (fs::path(report).has_parent_path()) fs::create_directories(fs::path(report).parent_path());
                write_file_atomic(report, r.to_kv().serialize());
            }
        } else if (*inspect) {
            const auto ck = load_checkpoint(ckpt);
            const Tensor x = load_image(image);
            HeatmapRequest req;
            req.block = block_index(block);
            req.layer = layer;
            req.head = head;
            std::tie(req.row, req.col) = parse_query(query);
            req.validate(ck.config);
            const auto ex = capture_deformation(ck.config, ck.params, x, req.block, out_path);
            const auto hm = attention_heatmap(ck.config, ex.layers.at(static_cast<std::size_t>(layer)), req);
            const std::string stem = "heatmap_" + block + "_L" + std::to_string(layer) + "_H" + std::to_string(head);
            save_tensor(fs::path(out_path) / (stem + ".dtns"), hm.weights);
            write_pgm(fs::path(out_path) / (stem + ".pgm"), hm.image, 0.0, 255.0);
            double peak = 0.0;
            for (const auto& f : ex.fields) peak = std::max(peak, *std::max_element(f.data().begin(), f.data().end()));
            out << "block " << block << ": " << ex.layers.size() << " layers exported to " << out_path
                << ", max |dp| " << fmt("%.6g", peak) << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace sdaut
