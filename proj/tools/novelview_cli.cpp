// novelview: data synthesis, two-stage training, inversion, rendering and evaluation.
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "novelview/errors.hpp"
#include "novelview/evaluation.hpp"
#include "novelview/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nvs;

namespace {

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? RunConfig::desk_defaults() : load_run_config(path);
}

fs::path out_dir(const std::string& flag, const RunConfig& cfg) { return flag.empty() ? fs::path(cfg.output_dir) : fs::path(flag); }

// Any input file becomes a model-sized image: center square, bilinear resize, [-1,1].
Image load_input(const fs::path& path, int64_t resolution) {
    auto img = preprocess_celeba(read_image(path), static_cast<int>(resolution));
    img.id = path.stem().string();
    return img;
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& args) {
    std::vector<fs::path> out;
    for (const auto& a : args) {
        if (fs::is_directory(a)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(a)) {
                const auto ext = e.path().extension().string();
                if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
                    found.push_back(e.path());
                }
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else if (fs::exists(a)) {
            out.emplace_back(a);
        } else {
            throw DataError(fmt::format("no such input '{}'", a));
        }
    }
    if (out.empty()) {
        throw DataError("no input images");
    }
    return out;
}

void write_trace(const fs::path& path, const std::vector<TracePoint>& trace) {
    std::ofstream out(path);
    out << "step,loss,l1_255\n";
    for (size_t i = 0; i < trace.size(); ++i) {
        out << fmt::format("{},{:.8g},{:.6f}\n", i, trace[i].loss, trace[i].l1_255);
    }
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = 0.0, s = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

// ---------------------------------------------------------------------------------------------

struct SynthArgs {
    std::string config, out;
};

int cmd_synth_data(const SynthArgs& a) {
    auto cfg = config_or_default(a.config);
    if (!cfg.dataset.manifest.empty()) {
        throw ConfigError("synth-data needs a config without a dataset manifest");
    }
    const auto dir = a.out.empty() ? out_dir("", cfg) / "data" : fs::path(a.out);
    auto data = load_run_dataset(cfg);
    save_dataset(dir, data);
    fmt::print("wrote {} images and {}\n", data.size(), (dir / "manifest.csv").string());
    return kExitOk;
}

struct TrainArgs {
    int stage = 1;
    std::string config, resume, init, out;
};

int cmd_train(const TrainArgs& a) {
    TrainState state;
    RunConfig cfg;
    if (!a.resume.empty()) {
        auto loaded = load_checkpoint(a.resume);
        cfg = a.config.empty() ? loaded.manifest.config : load_run_config(a.config);
        check_compatible(loaded.manifest, cfg);
        if (loaded.manifest.stage != a.stage) {
            throw ConfigError(fmt::format("checkpoint is from stage {}, not stage {}", loaded.manifest.stage, a.stage));
        }
        state = std::move(loaded.state);
    } else if (a.stage == 1) {
        cfg = config_or_default(a.config);
        state = make_run_state(cfg);
    } else {
        cfg = config_or_default(a.config);
        if (!a.init.empty()) {
            auto loaded = load_checkpoint(a.init);
            check_compatible(loaded.manifest, cfg);
            if (loaded.manifest.stage != 1) {
                throw ConfigError("stage 2 must start from a stage-1 checkpoint");
            }
            state = std::move(loaded.state);
        } else if (cfg.stage2.init_from_stage1) {
            throw ConfigError("stage 2 starts from the stage-1 decoder and encoder: pass --init <stage-1 checkpoint> "
                              "(or set stage2.init_from_stage1: false)");
        } else {
            state = make_run_state(cfg);
        }
        begin_stage2(state, cfg.stage2, cfg.seed);
    }
    const auto out = out_dir(a.out, cfg);
    auto data = load_run_dataset(cfg);
    auto train = split_images(data, "train");
    const auto& tc = state.stage == 1 ? cfg.stage1 : cfg.stage2;
    fmt::print("stage {}: {} training images, epochs {} -> {}\n", state.stage, train.size(0), state.epoch, tc.epochs);
    int64_t last_epoch = state.epoch;
    auto t0 = std::chrono::steady_clock::now();
    auto run = run_stage(state, cfg, train, out, [&](const TrainState& s, const LossReport& r) {
        if (s.step % 50 == 0 || s.epoch != last_epoch) {
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            fmt::print("  epoch {} step {} total {:.4f} ({:.0f}s)\n", s.epoch, s.step, r.total, sec);
            last_epoch = s.epoch;
        }
    });
    fmt::print("final checkpoint {}\n", run.final_checkpoint.string());
    return kExitOk;
}

struct FinetuneArgs {
    std::string checkpoint, image, out;
    int64_t steps = -1;
    double lr = -1.0;
};

int cmd_finetune(const FinetuneArgs& a) {
    auto loaded = load_checkpoint(a.checkpoint);
    auto& cfg = loaded.manifest.config;
    auto fc = cfg.finetune;
    if (a.steps > 0) fc.steps = a.steps;
    if (a.lr > 0) fc.lr = a.lr;
    fc.validate();
    const auto out = out_dir(a.out, cfg);
    fs::create_directories(out);
    auto img = load_input(a.image, cfg.model.resolution);
    auto res = finetune_image(loaded.state.nets, *loaded.state.perceptual, img, fc);
    copy_module_state(*res.decoder, *loaded.state.nets.decoder);
    const double l1 = l1_255(res.reconstruction.pixels, img.pixels);
    save_checkpoint(out / fmt::format("finetuned_{}", img.id), loaded.state, cfg, {{"l1_255", l1}});
    write_trace(out / fmt::format("finetune_trace_{}.csv", img.id), res.trace);
    write_image(out / fmt::format("finetune_{}.png", img.id), to_bytes(res.reconstruction.pixels));
    fmt::print("{}: L1 {:.3f} -> {:.3f} after {} steps\n", img.id, res.trace.front().l1_255, l1, fc.steps);
    return kExitOk;
}

struct InvertArgs {
    std::string method = "encoder", checkpoint, out;
    std::vector<std::string> images;
};

int cmd_invert(const InvertArgs& a) {
    auto loaded = load_checkpoint(a.checkpoint);
    const auto& cfg = loaded.manifest.config;
    auto& nets = loaded.state.nets;
    const auto out = out_dir(a.out, cfg) / fmt::format("invert_{}", a.method);
    fs::create_directories(out);
    std::ofstream table(out / "inversion.csv");
    table << "image,method,l1_255,ssim,psnr,seconds,azimuth,elevation,scale,z\n";
    std::vector<double> seconds, l1s;
    for (const auto& path : expand_inputs(a.images)) {
        auto img = load_input(path, cfg.model.resolution);
        const auto t0 = std::chrono::steady_clock::now();
        torch::Tensor z;
        Pose pose;
        Image recon;
        if (a.method == "encoder") {
            torch::NoGradGuard g;
            std::tie(z, pose) = encode(*nets.encoder, img);
            recon = decode(*nets.decoder, z, pose);
        } else if (a.method == "fit" || a.method == "encoder+fit") {
            auto fc = cfg.fit;
            fc.init = a.method == "fit" ? FitInit::kRandom : FitInit::kEncoder;
            auto r = fit_latent_baseline(*nets.decoder, nets.encoder.get(), *loaded.state.perceptual, img, fc);
            z = r.z;
            pose = r.pose;
            recon = r.reconstruction;
        } else {
            auto r = finetune_image(nets, *loaded.state.perceptual, img, cfg.finetune);
            z = r.z;
            pose = r.pose;
            recon = r.reconstruction;
        }
        seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        const Image target{img.pixels, img.id};
        const double l1 = metric_l1_255(recon, target);
        l1s.push_back(l1);
        std::string zs;
        auto zc = z.detach().to(torch::kFloat64).contiguous().view({-1});
        for (int64_t i = 0; i < zc.numel(); ++i) {
            zs += fmt::format("{}{:.6g}", i ? " " : "", zc[i].item<double>());
        }
        table << fmt::format("{},{},{:.6f},{:.6f},{:.4f},{:.4f},{:.4f},{:.4f},{:.5f},{}\n", img.id, a.method, l1,
                             metric_ssim(recon, target), metric_psnr(recon, target), seconds.back(), pose.azimuth_deg,
                             pose.elevation_deg, pose.scale, zs);
        write_image(out / fmt::format("{}.png", img.id), to_bytes(recon.pixels));
    }
    const auto [tm, ts] = mean_std(seconds);
    const auto [lm, ls] = mean_std(l1s);
    fmt::print("{}: {} images, L1 {:.3f} +- {:.3f}, time {:.3f}s +- {:.3f}\n", a.method, l1s.size(), lm, ls, tm, ts);
    return kExitOk;
}

struct RenderArgs {
    std::string checkpoint, image, out;
    int64_t views = 7;
};

int cmd_render(const RenderArgs& a) {
    auto loaded = load_checkpoint(a.checkpoint);
    const auto& cfg = loaded.manifest.config;
    auto img = load_input(a.image, cfg.model.resolution);
    auto strip = theta_interpolation_strip(loaded.state.nets, img, a.views);
    const auto path = a.out.empty() ? out_dir("", cfg) / fmt::format("strip_{}.png", img.id) : fs::path(a.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_image(path, strip.raster);
    fmt::print("wrote {} ({} tiles)\n", path.string(), a.views + 1);
    return kExitOk;
}

struct EvalArgs {
    std::string task = "nvs", checkpoint, split = "test", config, out;
};

int cmd_eval(const EvalArgs& a) {
    auto loaded = load_checkpoint(a.checkpoint);
    // a config may point the checkpoint at a different dataset with the same architecture and range
    const auto cfg = a.config.empty() ? loaded.manifest.config : load_run_config(a.config);
    check_compatible(loaded.manifest, cfg);
    auto& nets = loaded.state.nets;
    const auto out = out_dir(a.out, cfg) / fmt::format("eval_{}_{}", a.task, a.split);
    fs::create_directories(out);
    auto data = load_run_dataset(cfg);
    auto split = select_split(data, a.split);
    if (split.size() == 0) {
        throw DataError(fmt::format("split '{}' is empty", a.split));
    }
    EvalReport report;
    if (a.task == "nvs" || a.task == "pose") {
        const auto frame = fit_frame_on_dataset(*nets.encoder, data);
        if (a.task == "nvs") {
            report = eval_nvs(nets, data, split, frame, cfg.eval.max_pairs);
            write_report_csv(out / "report.csv", report);
        }
        report.pose = eval_pose(nets, data, split, frame);
    } else if (a.task == "recon") {
        report = eval_recon(nets, data, split);
        write_report_csv(out / "report.csv", report);
    } else {
        const auto n_id = std::min(cfg.eval.swap_identities, split.size());
        const auto n_pose = std::min(cfg.eval.swap_poses, split.size());
        std::vector<Image> ids, poses;
        // identities from the first images, poses from the last ones
        for (int64_t i = 0; i < n_id; ++i) ids.push_back({data.images[split.indices[static_cast<size_t>(i)]], {}});
        for (int64_t j = 0; j < n_pose; ++j) {
            poses.push_back({data.images[split.indices[static_cast<size_t>(split.size() - 1 - j)]], {}});
        }
        auto grid = pose_swap_grid(nets, ids, poses);
        write_image(out / "pose_swap.png", grid.raster);
        auto strip = theta_interpolation_strip(nets, ids.front(), cfg.eval.strip_views);
        write_image(out / "theta_strip.png", strip.raster);
        fmt::print("wrote {}\n", (out / "pose_swap.png").string());
        return kExitOk;
    }
    const auto summary = report.summary();
    std::ofstream(out / "summary.txt") << summary << "\n";
    fmt::print("{}\n", summary);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Novel view synthesis from a single image: training, inversion and evaluation"};
    app.require_subcommand(1);

    std::string shown;
    auto* c = app.add_subcommand("config", "Print the effective run config (desk defaults without --config)");
    c->add_option("--config", shown, "Run config (YAML)");

    SynthArgs synth;
    auto* s = app.add_subcommand("synth-data", "Write the procedural cuboid dataset (images + manifest.csv)");
    s->add_option("--config", synth.config, "Run config (YAML)");
    s->add_option("--out", synth.out, "Output directory (default <output_dir>/data)");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train stage 1 or stage 2");
    t->add_option("--stage", train.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    t->add_option("--config", train.config, "Run config (YAML)");
    t->add_option("--resume", train.resume, "Continue from a checkpoint of the same stage");
    t->add_option("--init", train.init, "Stage-1 checkpoint that stage 2 starts from");
    t->add_option("--out", train.out, "Output directory (default <output_dir>)");

    FinetuneArgs ft;
    auto* f = app.add_subcommand("finetune", "Adapt the decoder to one image");
    f->add_option("--checkpoint", ft.checkpoint)->required();
    f->add_option("--image", ft.image)->required();
    f->add_option("--steps", ft.steps, "Override the configured step count");
    f->add_option("--lr", ft.lr, "Override the configured learning rate");
    f->add_option("--out", ft.out);

    InvertArgs inv;
    auto* i = app.add_subcommand("invert", "Recover (z, pose) for images and reconstruct them");
    i->add_option("--method", inv.method)->check(CLI::IsMember({"encoder", "fit", "encoder+fit", "finetune"}));
    i->add_option("--checkpoint", inv.checkpoint)->required();
    i->add_option("--images", inv.images, "Image files or directories")->required();
    i->add_option("--out", inv.out);

    RenderArgs ren;
    auto* r = app.add_subcommand("render", "Azimuth sweep strip for one image");
    r->add_option("--checkpoint", ren.checkpoint)->required();
    r->add_option("--image", ren.image)->required();
    r->add_option("--views", ren.views)->check(CLI::PositiveNumber);
    r->add_option("--out", ren.out, "Output PNG");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    e->add_option("--task", ev.task)->check(CLI::IsMember({"nvs", "pose", "recon", "swap"}));
    e->add_option("--checkpoint", ev.checkpoint)->required();
    e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
    e->add_option("--config", ev.config, "Evaluate on this config's dataset instead of the checkpoint's");
    e->add_option("--out", ev.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return kExitConfig;
    }

    try {
        if (*c) {
            fmt::print("{}", to_yaml(config_or_default(shown)));
            return kExitOk;
        }
        if (*s) return cmd_synth_data(synth);
        if (*t) return cmd_train(train);
        if (*f) return cmd_finetune(ft);
        if (*i) return cmd_invert(inv);
        if (*r) return cmd_render(ren);
        return cmd_eval(ev);
    } catch (const ConfigError& ex) {
        fmt::print(stderr, "config error: {}\n", ex.what());
        return kExitConfig;
    } catch (const DataError& ex) {
        fmt::print(stderr, "data error: {}\n", ex.what());
        return kExitData;
    } catch (const std::domain_error& ex) {
        fmt::print(stderr, "data error: {}\n", ex.what());
        return kExitData;
    } catch (const NumericalError& ex) {
        fmt::print(stderr, "numerical abort: {}\n", ex.what());
        return kExitNumerical;
    } catch (const std::exception& ex) {
        fmt::print(stderr, "error: {}\n", ex.what());
        return kExitFailure;
    }
}
