#include "novelview/pipeline.hpp"

#include <fstream>

#include <fmt/format.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace fs = std::filesystem;

Dataset load_run_dataset(const RunConfig& cfg) {
    if (cfg.dataset.manifest.empty()) {
        return make_synthetic_split(cfg.dataset.synth_objects, cfg.dataset.synth_views, cfg.dataset.range,
                                    cfg.dataset.synth_seed, static_cast<int>(cfg.model.resolution));
    }
    return load_dataset(cfg.dataset.manifest, static_cast<int>(cfg.model.resolution), cfg.dataset.range,
                        cfg.dataset.preprocess);
}

torch::Tensor split_images(const Dataset& dataset, const std::string& split) {
    auto s = select_split(dataset, split);
    if (s.indices.empty()) {
        throw DataError(fmt::format("split '{}' is empty", split));
    }
    return dataset.images.index_select(0, torch::tensor(s.indices, torch::kLong));
}

TrainState make_run_state(const RunConfig& cfg) {
    cfg.validate();
    auto state = make_train_state(cfg.model, cfg.dataset.range, cfg.stage1, cfg.seed);
    if (!cfg.perceptual_weights.empty()) {
        state.perceptual->load_weights(cfg.perceptual_weights);
    }
    return state;
}

void check_compatible(const CheckpointManifest& manifest, const RunConfig& cfg) {
    if (manifest.config.model != cfg.model) {
        throw ShapeError("checkpoint architecture differs from the configured model");
    }
    if (manifest.config.dataset.range != cfg.dataset.range) {
        throw ShapeError("checkpoint pose range differs from the configured dataset range");
    }
}

StageRun run_stage(TrainState& state, const RunConfig& cfg, const torch::Tensor& train_images, const fs::path& out,
                   const StepCallback& on_step) {
    const auto& tc = state.stage == 1 ? cfg.stage1 : cfg.stage2;
    tc.validate();
    fs::create_directories(out);
    TrainIterator batches(train_images, tc.batch_size, cfg.seed + static_cast<uint64_t>(state.stage));
    const int64_t per_epoch = tc.steps_per_epoch > 0 ? tc.steps_per_epoch : batches.batches_per_epoch();
    if (per_epoch < 1) {
        throw DataError(fmt::format("{} training images cannot fill a batch of {}", train_images.size(0),
                                    tc.batch_size));
    }

    const auto log_path = out / fmt::format("loss_stage{}.csv", state.stage);
    const bool fresh = state.step == 0;
    std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) {
        throw DataError(fmt::format("cannot write '{}'", log_path.string()));
    }
    if (fresh) {
        log << LossReport::csv_header() << "\n";
    }

    auto checkpoint_dir = [&](const std::string& tag) { return out / fmt::format("stage{}_{}", state.stage, tag); };
    StageRun run;
    for (int64_t epoch = state.epoch; epoch < tc.epochs; ++epoch) {
        set_learning_rate(state, lr_schedule(epoch, tc));
        for (int64_t i = 0; i < per_epoch; ++i) {
            const auto g = state.step;
            auto batch = batches.batch(g / batches.batches_per_epoch(), g % batches.batches_per_epoch());
            LossReport r;
            try {
                r = state.stage == 1 ? stage1_step(state, tc, batch) : stage2_step(state, tc, batch);
            } catch (const NumericalError&) {
                log.flush();
                save_checkpoint(checkpoint_dir("abort"), state, cfg, {{"failed_step", static_cast<double>(g)}});
                throw;
            }
            log << r.csv_row(g, state.stage) << "\n";
            run.log.push_back(r);
            if (on_step) {
                on_step(state, r);
            }
        }
        state.epoch = epoch + 1;
        if (state.epoch % tc.checkpoint_every == 0 || state.epoch == tc.epochs) {
            log.flush();
            const auto& last = run.log.empty() ? LossReport{} : run.log.back();
            run.final_checkpoint = checkpoint_dir(fmt::format("e{:04d}", state.epoch));
            save_checkpoint(run.final_checkpoint, state, cfg, {{"total", last.total}});
        }
    }
    return run;
}

} // namespace nvs
