#include <fstream>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "novelview/errors.hpp"
#include "novelview/pipeline.hpp"

namespace nvs {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("novelview_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig tiny_config() {
    auto c = RunConfig::desk_defaults();
    c.dataset.synth_objects = 10;
    c.dataset.synth_views = 4;
    c.stage1.batch_size = 4;
    c.stage1.epochs = 2;
    c.stage1.decay_start = 1;
    c.stage1.steps_per_epoch = 2;
    c.stage1.checkpoint_every = 1;
    c.stage2 = c.stage1;
    c.stage2.stage = 2;
    return c;
}

TEST(RunConfigTest, YamlRoundTripIsExact) {
    auto c = RunConfig::desk_defaults();
    c.stage1.lr = 0.1 + 0.2;
    c.stage2.weights.vgg = 1.0 / 3.0;
    c.stage2.terms = Stage2Terms::ablation_row(5);
    c.fit.init = FitInit::kRandom;
    c.dataset.preprocess = Preprocess::kCars;
    c.model = ModelConfig::for_resolution(64);
    c.output_dir = "some/dir";
    const auto text = to_yaml(c);
    const auto back = parse_run_config(text);
    EXPECT_EQ(back, c);
    EXPECT_EQ(to_yaml(back), text);
}

TEST(RunConfigTest, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_run_config("stage1:\n  epochz: 3\n"), ConfigError);
    EXPECT_THROW(parse_run_config("stage1:\n  epochs: many\n"), ConfigError);
    EXPECT_THROW(parse_run_config("stage1:\n  epochs: 0\n"), ConfigError);
    EXPECT_THROW(parse_run_config("dataset:\n  preprocess: sepia\n"), ConfigError);
    EXPECT_THROW(parse_run_config("model: [1, 2]\n"), ConfigError);
    EXPECT_THROW(parse_run_config("{unclosed"), ConfigError);
}

TEST(RunConfigTest, NamedRangesAndAblationRows) {
    auto c = parse_run_config("dataset:\n  name: celeba\n");
    EXPECT_EQ(c.dataset.range, PoseRange::named("celeba"));
    auto d = parse_run_config("stage2:\n  terms:\n    ablation_row: 3\n");
    EXPECT_EQ(d.stage2.terms, Stage2Terms::ablation_row(3));
    EXPECT_EQ(d.stage1.terms, Stage2Terms{});
}

class CheckpointTest : public ::testing::Test {
protected:
    RunConfig cfg = tiny_config();
    Dataset data = load_run_dataset(cfg);
    torch::Tensor train = split_images(data, "train");
};

TEST_F(CheckpointTest, SaveLoadIsBitExact) {
    auto dir = scratch_dir("ckpt_roundtrip");
    auto state = make_run_state(cfg);
    run_stage(state, cfg, train, dir);
    auto loaded = load_checkpoint(dir / "stage1_e0002");
    EXPECT_EQ(parameter_checksum(loaded.state), parameter_checksum(state));
    EXPECT_EQ(loaded.manifest.config, cfg);
    EXPECT_EQ(loaded.state.step, 4);
    EXPECT_EQ(loaded.state.epoch, 2);
    EXPECT_EQ(loaded.state.rng(), state.rng());
    auto a = state.nets.encoder->parameters();
    auto b = loaded.state.nets.encoder->parameters();
    for (size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
    // loss log: header + one row per step
    const auto log = slurp(dir / "loss_stage1.csv");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 5);
}

TEST_F(CheckpointTest, ResumeMatchesUninterruptedRun) {
    auto dir_a = scratch_dir("ckpt_straight");
    auto dir_b = scratch_dir("ckpt_resumed");
    auto straight = make_run_state(cfg);
    run_stage(straight, cfg, train, dir_a);

    auto resumed = load_checkpoint(dir_a / "stage1_e0001").state;
    run_stage(resumed, cfg, train, dir_b);
    EXPECT_EQ(parameter_checksum(resumed), parameter_checksum(straight));
    EXPECT_EQ(optimizer_checksum(resumed), optimizer_checksum(straight));
    EXPECT_EQ(optimizer_checksum(load_checkpoint(dir_b / "stage1_e0002").state), optimizer_checksum(straight));

    // Stage 2 carries the frozen teacher through save/load
    begin_stage2(resumed, cfg.stage2, cfg.seed);
    auto dir_c = scratch_dir("ckpt_stage2");
    run_stage(resumed, cfg, train, dir_c);
    auto s2 = load_checkpoint(dir_c / "stage2_e0002");
    ASSERT_TRUE(s2.state.teacher);
    EXPECT_EQ(parameter_checksum(s2.state), parameter_checksum(resumed));
    EXPECT_TRUE(s2.manifest.has_teacher);
}

TEST_F(CheckpointTest, RepeatedRunsWriteIdenticalBytes) {
    auto dir_a = scratch_dir("ckpt_bytes_a");
    auto dir_b = scratch_dir("ckpt_bytes_b");
    auto a = make_run_state(cfg);
    run_stage(a, cfg, train, dir_a);
    auto b = make_run_state(cfg);
    run_stage(b, cfg, train, dir_b);
    for (const char* f : {"params.pt", "manifest.yaml"}) {
        const auto x = slurp(dir_a / "stage1_e0002" / f);
        const auto y = slurp(dir_b / "stage1_e0002" / f);
        EXPECT_FALSE(x.empty());
        EXPECT_TRUE(x == y) << f << " differs";
    }
}

TEST_F(CheckpointTest, RejectsUnknownVersionsAndShapeMismatch) {
    auto dir = scratch_dir("ckpt_reject");
    auto state = make_run_state(cfg);
    save_checkpoint(dir / "ok", state, cfg);
    fs::copy(dir / "ok", dir / "v2");
    {
        auto text = slurp(dir / "v2" / "manifest.yaml");
        text = std::regex_replace(text, std::regex("format_version: 1"), "format_version: 2");
        std::ofstream(dir / "v2" / "manifest.yaml") << text;
    }
    EXPECT_THROW(load_checkpoint(dir / "v2"), ShapeError);

    fs::copy(dir / "ok", dir / "shape");
    {
        auto text = slurp(dir / "shape" / "manifest.yaml");
        text = std::regex_replace(text, std::regex("decoder.to_rgb.bias: \\[3\\]"), "decoder.to_rgb.bias: [4]");
        std::ofstream(dir / "shape" / "manifest.yaml") << text;
    }
    EXPECT_THROW(load_checkpoint(dir / "shape"), ShapeError);
    EXPECT_THROW(load_checkpoint(dir / "missing"), DataError);

    auto other = cfg;
    other.model.latent_dim = 64;
    EXPECT_THROW(check_compatible(read_checkpoint_manifest(dir / "ok"), other), ShapeError);
    EXPECT_NO_THROW(check_compatible(read_checkpoint_manifest(dir / "ok"), cfg));
}

TEST_F(CheckpointTest, NonFiniteLossLeavesAbortSnapshot) {
    auto dir = scratch_dir("ckpt_abort");
    auto state = make_run_state(cfg);
    {
        torch::NoGradGuard g;
        state.nets.encoder->parameters()[0].fill_(std::numeric_limits<float>::infinity());
    }
    EXPECT_THROW(run_stage(state, cfg, train, dir), NumericalError);
    auto m = read_checkpoint_manifest(dir / "stage1_abort");
    EXPECT_EQ(m.metrics.at("failed_step"), 0.0);
}

} // namespace
} // namespace nvs
