#include "novelview/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.yaml";
constexpr const char* kParams = "params.pt";

struct NamedModule {
    const char* name;
    torch::nn::Module* module;
};

std::vector<NamedModule> modules_of(const TrainState& s) {
    std::vector<NamedModule> out{{"decoder", s.nets.decoder.get()},
                                 {"encoder", s.nets.encoder.get()},
                                 {"discriminator", s.nets.discriminator.get()}};
    if (s.teacher) {
        out.push_back({"teacher", s.teacher.get()});
    }
    return out;
}

struct NamedOptimizer {
    const char* name;
    torch::optim::Optimizer* opt;
};

std::vector<NamedOptimizer> optimizers_of(const TrainState& s) {
    return {{"opt_decoder", s.opt_decoder.get()},
            {"opt_encoder", s.opt_encoder.get()},
            {"opt_discriminator", s.opt_discriminator.get()}};
}

std::map<std::string, std::vector<int64_t>> shapes_of(const TrainState& s) {
    std::map<std::string, std::vector<int64_t>> out;
    for (const auto& m : modules_of(s)) {
        for (const auto& p : m.module->named_parameters(true)) {
            out[fmt::format("{}.{}", m.name, p.key())] = p.value().sizes().vec();
        }
    }
    return out;
}

void fnv_mix(uint64_t& h, const torch::Tensor& tensor) {
    auto t = tensor.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
    const auto n = t.numel() * static_cast<int64_t>(t.element_size());
    for (int64_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
}

// Adam moments keyed by parameter position. libtorch's own optimizer archive keys them by
// in-memory addresses, which makes otherwise identical checkpoints differ byte-wise.
void save_moments(torch::optim::Optimizer& opt, torch::serialize::OutputArchive& sub) {
    auto& state = opt.state();
    int64_t i = 0;
    for (const auto& group : opt.param_groups()) {
        for (const auto& p : group.params()) {
            auto it = state.find(p.unsafeGetTensorImpl());
            if (it != state.end()) {
                const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
                sub.write(fmt::format("{}.exp_avg", i), st.exp_avg());
                sub.write(fmt::format("{}.exp_avg_sq", i), st.exp_avg_sq());
                sub.write(fmt::format("{}.step", i), torch::tensor(st.step(), torch::kInt64));
            }
            ++i;
        }
    }
}

void load_moments(torch::optim::Optimizer& opt, torch::serialize::InputArchive& sub) {
    auto& state = opt.state();
    state.clear();
    int64_t i = 0;
    for (const auto& group : opt.param_groups()) {
        for (const auto& p : group.params()) {
            torch::Tensor avg, avg_sq, step;
            if (sub.try_read(fmt::format("{}.exp_avg", i), avg)) {
                if (!sub.try_read(fmt::format("{}.exp_avg_sq", i), avg_sq) ||
                    !sub.try_read(fmt::format("{}.step", i), step) || avg.sizes() != p.sizes() ||
                    avg_sq.sizes() != p.sizes()) {
                    throw ShapeError(fmt::format("optimizer moments for parameter {} are incomplete or mis-shaped", i));
                }
                auto st = std::make_unique<torch::optim::AdamParamState>();
                st->exp_avg(avg.clone());
                st->exp_avg_sq(avg_sq.clone());
                st->step(step.item<int64_t>());
                state[p.unsafeGetTensorImpl()] = std::move(st);
            }
            ++i;
        }
    }
}

} // namespace

uint64_t parameter_checksum(const TrainState& s) {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& m : modules_of(s)) {
        for (const auto& p : m.module->parameters(true)) {
            fnv_mix(h, p);
        }
    }
    return h;
}

uint64_t optimizer_checksum(const TrainState& s) {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& o : optimizers_of(s)) {
        auto& state = o.opt->state();
        for (const auto& group : o.opt->param_groups()) {
            for (const auto& p : group.params()) {
                auto it = state.find(p.unsafeGetTensorImpl());
                if (it == state.end()) {
                    continue;
                }
                const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
                fnv_mix(h, st.exp_avg());
                fnv_mix(h, st.exp_avg_sq());
                fnv_mix(h, torch::tensor(st.step()));
            }
        }
    }
    return h;
}

void save_checkpoint(const fs::path& dir, const TrainState& s, const RunConfig& cfg,
                     const std::map<std::string, double>& metrics) {
    fs::create_directories(dir);

    torch::serialize::OutputArchive archive;
    for (const auto& m : modules_of(s)) {
        torch::serialize::OutputArchive sub;
        m.module->save(sub);
        archive.write(m.name, sub);
    }
    for (const auto& o : optimizers_of(s)) {
        torch::serialize::OutputArchive sub;
        save_moments(*o.opt, sub);
        archive.write(o.name, sub);
    }
    archive.save_to((dir / kParams).string());

    std::ostringstream rng;
    rng << s.rng;

    YAML::Emitter e;
    e << YAML::BeginMap;
    e << YAML::Key << "format_version" << YAML::Value << kCheckpointFormatVersion;
    e << YAML::Key << "stage" << YAML::Value << s.stage;
    e << YAML::Key << "epoch" << YAML::Value << s.epoch;
    e << YAML::Key << "step" << YAML::Value << s.step;
    e << YAML::Key << "checksum" << YAML::Value << fmt::format("{:016x}", parameter_checksum(s));
    e << YAML::Key << "optimizer_checksum" << YAML::Value << fmt::format("{:016x}", optimizer_checksum(s));
    e << YAML::Key << "has_teacher" << YAML::Value << static_cast<bool>(s.teacher);
    e << YAML::Key << "metrics" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : metrics) {
        e << YAML::Key << k << YAML::Value << fmt::format("{}", v);
    }
    e << YAML::EndMap;
    e << YAML::Key << "shapes" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : shapes_of(s)) {
        e << YAML::Key << k << YAML::Value << YAML::Flow << v;
    }
    e << YAML::EndMap;
    e << YAML::Key << "rng_state" << YAML::Value << rng.str();
    e << YAML::Key << "config" << YAML::Value << YAML::Load(to_yaml(cfg));
    e << YAML::EndMap;

    std::ofstream out(dir / kManifest);
    if (!out) {
        throw DataError(fmt::format("cannot write checkpoint manifest in '{}'", dir.string()));
    }
    out << e.c_str() << "\n";
}

CheckpointManifest read_checkpoint_manifest(const fs::path& dir) {
    if (!fs::exists(dir / kManifest) || !fs::exists(dir / kParams)) {
        throw DataError(fmt::format("'{}' is not a checkpoint directory", dir.string()));
    }
    YAML::Node root;
    try {
        root = YAML::LoadFile((dir / kManifest).string());
    } catch (const YAML::Exception& ex) {
        throw DataError(fmt::format("checkpoint manifest: {}", ex.what()));
    }
    CheckpointManifest m;
    try {
        m.format_version = root["format_version"].as<int>();
    } catch (const YAML::Exception&) {
        throw ShapeError("checkpoint manifest has no format_version");
    }
    if (m.format_version != kCheckpointFormatVersion) {
        throw ShapeError(fmt::format("unsupported checkpoint format version {} (expected {})", m.format_version,
                                     kCheckpointFormatVersion));
    }
    try {
        m.stage = root["stage"].as<int>();
        m.epoch = root["epoch"].as<int64_t>();
        m.step = root["step"].as<int64_t>();
        m.checksum = std::stoull(root["checksum"].as<std::string>(), nullptr, 16);
        m.optimizer_checksum = std::stoull(root["optimizer_checksum"].as<std::string>(), nullptr, 16);
        m.has_teacher = root["has_teacher"].as<bool>();
        m.rng_state = root["rng_state"].as<std::string>();
        for (const auto& kv : root["metrics"]) {
            m.metrics[kv.first.as<std::string>()] = kv.second.as<double>();
        }
        for (const auto& kv : root["shapes"]) {
            m.shapes[kv.first.as<std::string>()] = kv.second.as<std::vector<int64_t>>();
        }
    } catch (const YAML::Exception& ex) {
        throw DataError(fmt::format("checkpoint manifest: {}", ex.what()));
    } catch (const std::invalid_argument&) {
        throw DataError("checkpoint manifest: malformed checksum");
    }
    m.config = parse_run_config(YAML::Dump(root["config"]));
    return m;
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
    auto manifest = read_checkpoint_manifest(dir);
    const auto& cfg = manifest.config;
    auto state = make_train_state(cfg.model, cfg.dataset.range, cfg.stage1, cfg.seed);
    if (manifest.stage == 2) {
        auto s2 = cfg.stage2;
        s2.init_from_stage1 = true;
        begin_stage2(state, s2, cfg.seed);
    }
    if (manifest.has_teacher != static_cast<bool>(state.teacher)) {
        throw ShapeError("checkpoint teacher presence does not match its stage");
    }

    const auto expected = shapes_of(state);
    if (expected != manifest.shapes) {
        for (const auto& [k, v] : expected) {
            auto it = manifest.shapes.find(k);
            if (it == manifest.shapes.end() || it->second != v) {
                throw ShapeError(fmt::format("checkpoint parameter '{}' missing or mis-shaped", k));
            }
        }
        throw ShapeError("checkpoint holds parameters the model does not have");
    }

    torch::serialize::InputArchive archive;
    try {
        archive.load_from((dir / kParams).string());
        for (const auto& m : modules_of(state)) {
            torch::serialize::InputArchive sub;
            archive.read(m.name, sub);
            m.module->load(sub);
        }
        for (const auto& o : optimizers_of(state)) {
            torch::serialize::InputArchive sub;
            archive.read(o.name, sub);
            load_moments(*o.opt, sub);
        }
    } catch (const c10::Error& ex) {
        throw ShapeError(fmt::format("checkpoint tensors unreadable: {}", ex.what_without_backtrace()));
    }
    if (shapes_of(state) != expected) {
        throw ShapeError("checkpoint tensors disagree with the manifest shapes");
    }

    std::istringstream rng(manifest.rng_state);
    rng >> state.rng;
    if (!rng) {
        throw DataError("checkpoint RNG state is malformed");
    }
    if (!cfg.perceptual_weights.empty()) {
        state.perceptual->load_weights(cfg.perceptual_weights);
    }
    state.stage = manifest.stage;
    state.epoch = manifest.epoch;
    state.step = manifest.step;
    if (parameter_checksum(state) != manifest.checksum || optimizer_checksum(state) != manifest.optimizer_checksum) {
        throw DataError("checkpoint checksum mismatch");
    }
    return {std::move(manifest), std::move(state)};
}

} // namespace nvs
