#include "novelview/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace {

// Shortest decimal form that parses back to the same double.
std::string num(double v) { return fmt::format("{}", v); }

class Reader {
public:
    Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) {
            throw ConfigError(fmt::format("config: '{}' must be a mapping", path_));
        }
    }

    template <class T>
    void get(const char* key, T& out) {
        used_.insert(key);
        if (!node_ || node_.IsNull()) {
            return;
        }
        const auto v = node_[key];
        if (!v) {
            return;
        }
        try {
            out = v.template as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError(fmt::format("config: bad value for '{}.{}'", path_, key));
        }
    }

    Reader child(const char* key) {
        used_.insert(key);
        YAML::Node sub;
        if (node_ && node_.IsMap() && node_[key]) {
            sub = node_[key];
        }
        return Reader(sub, path_.empty() ? key : path_ + "." + key);
    }

    void finish() const {
        if (!node_ || !node_.IsMap()) {
            return;
        }
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (used_.count(key) == 0) {
                throw ConfigError(fmt::format("config: unknown key '{}{}{}'", path_, path_.empty() ? "" : ".", key));
            }
        }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::set<std::string> used_;
};

void emit_range(YAML::Emitter& e, const PoseRange& r) {
    e << YAML::BeginMap;
    e << YAML::Key << "azimuth" << YAML::Value << YAML::Flow << YAML::BeginSeq << num(r.azimuth_min)
      << num(r.azimuth_max) << YAML::EndSeq;
    e << YAML::Key << "elevation" << YAML::Value << YAML::Flow << YAML::BeginSeq << num(r.elevation_min)
      << num(r.elevation_max) << YAML::EndSeq;
    e << YAML::Key << "scale" << YAML::Value << YAML::Flow << YAML::BeginSeq << num(r.scale_min) << num(r.scale_max)
      << YAML::EndSeq;
    e << YAML::EndMap;
}

void read_range(Reader r, PoseRange& out) {
    auto pair = [&](const char* key, double& lo, double& hi) {
        std::vector<double> v{lo, hi};
        r.get(key, v);
        if (v.size() != 2) {
            throw ConfigError(fmt::format("config: range '{}' needs [min, max]", key));
        }
        lo = v[0];
        hi = v[1];
    };
    pair("azimuth", out.azimuth_min, out.azimuth_max);
    pair("elevation", out.elevation_min, out.elevation_max);
    pair("scale", out.scale_min, out.scale_max);
    r.finish();
}

void emit_weights(YAML::Emitter& e, const LossWeights& w) {
    e << YAML::BeginMap;
    e << YAML::Key << "z" << YAML::Value << num(w.z);
    e << YAML::Key << "theta" << YAML::Value << num(w.theta);
    e << YAML::Key << "l2" << YAML::Value << num(w.l2);
    e << YAML::Key << "vgg" << YAML::Value << num(w.vgg);
    e << YAML::Key << "ssim" << YAML::Value << num(w.ssim);
    e << YAML::Key << "adv" << YAML::Value << num(w.adv);
    e << YAML::Key << "l2_gen" << YAML::Value << num(w.l2_gen);
    e << YAML::Key << "vgg_gen" << YAML::Value << num(w.vgg_gen);
    e << YAML::Key << "ssim_gen" << YAML::Value << num(w.ssim_gen);
    e << YAML::EndMap;
}

void read_weights(Reader r, LossWeights& w) {
    r.get("z", w.z);
    r.get("theta", w.theta);
    r.get("l2", w.l2);
    r.get("vgg", w.vgg);
    r.get("ssim", w.ssim);
    r.get("adv", w.adv);
    r.get("l2_gen", w.l2_gen);
    r.get("vgg_gen", w.vgg_gen);
    r.get("ssim_gen", w.ssim_gen);
    r.finish();
}

void emit_train(YAML::Emitter& e, const TrainConfig& c) {
    e << YAML::BeginMap;
    e << YAML::Key << "epochs" << YAML::Value << c.epochs;
    e << YAML::Key << "decay_start" << YAML::Value << c.decay_start;
    e << YAML::Key << "lr" << YAML::Value << num(c.lr);
    e << YAML::Key << "beta1" << YAML::Value << num(c.beta1);
    e << YAML::Key << "beta2" << YAML::Value << num(c.beta2);
    e << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
    e << YAML::Key << "distill_ratio" << YAML::Value << num(c.distill_ratio);
    e << YAML::Key << "steps_per_epoch" << YAML::Value << c.steps_per_epoch;
    e << YAML::Key << "checkpoint_every" << YAML::Value << c.checkpoint_every;
    e << YAML::Key << "init_from_stage1" << YAML::Value << c.init_from_stage1;
    e << YAML::Key << "weights" << YAML::Value;
    emit_weights(e, c.weights);
    e << YAML::Key << "terms" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "autoencoder" << YAML::Value << c.terms.autoencoder;
    e << YAML::Key << "self_distill" << YAML::Value << c.terms.self_distill;
    e << YAML::Key << "multi_view" << YAML::Value << c.terms.multi_view;
    e << YAML::Key << "adversarial" << YAML::Value << c.terms.adversarial;
    e << YAML::Key << "consistency" << YAML::Value << c.terms.consistency;
    e << YAML::EndMap;
    e << YAML::EndMap;
}

void read_train(Reader r, TrainConfig& c) {
    r.get("epochs", c.epochs);
    r.get("decay_start", c.decay_start);
    r.get("lr", c.lr);
    r.get("beta1", c.beta1);
    r.get("beta2", c.beta2);
    r.get("batch_size", c.batch_size);
    r.get("distill_ratio", c.distill_ratio);
    r.get("steps_per_epoch", c.steps_per_epoch);
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("init_from_stage1", c.init_from_stage1);
    read_weights(r.child("weights"), c.weights);
    auto t = r.child("terms");
    int ablation_row = 0;
    t.get("ablation_row", ablation_row);
    if (ablation_row != 0) {
        c.terms = Stage2Terms::ablation_row(ablation_row);
    }
    t.get("autoencoder", c.terms.autoencoder);
    t.get("self_distill", c.terms.self_distill);
    t.get("multi_view", c.terms.multi_view);
    t.get("adversarial", c.terms.adversarial);
    t.get("consistency", c.terms.consistency);
    t.finish();
    r.finish();
}

} // namespace

const char* to_string(Preprocess p) {
    switch (p) {
    case Preprocess::kCeleba:
        return "celeba";
    case Preprocess::kCars:
        return "cars";
    case Preprocess::kNone:
        break;
    }
    return "none";
}

Preprocess preprocess_from_string(const std::string& s) {
    if (s == "none") return Preprocess::kNone;
    if (s == "celeba") return Preprocess::kCeleba;
    if (s == "cars") return Preprocess::kCars;
    throw ConfigError(fmt::format("unknown preprocess mode '{}'", s));
}

void RunConfig::validate() const {
    dataset.range.validate();
    if (dataset.manifest.empty() && (dataset.synth_objects < 10 || dataset.synth_views < 1)) {
        throw ConfigError("dataset: the synthetic set needs at least 10 objects and 1 view each");
    }
    model.validate();
    stage1.validate();
    stage2.validate();
    if (stage1.stage != 1 || stage2.stage != 2) {
        throw ConfigError("stage ids must be 1 and 2");
    }
    finetune.validate();
    fit.validate();
    if (eval.max_pairs < 0 || eval.swap_identities < 1 || eval.swap_poses < 1 || eval.strip_views < 1) {
        throw ConfigError("eval: counts must be positive");
    }
}

RunConfig RunConfig::desk_defaults() {
    RunConfig c;
    c.model = ModelConfig::for_resolution(32);
    c.seed = 7;
    c.stage1.epochs = 80;
    c.stage1.decay_start = 40;
    c.stage1.lr = 2e-4;
    c.stage1.checkpoint_every = 20;
    c.stage2.epochs = 15;
    c.stage2.decay_start = 8;
    c.stage2.lr = 2e-4;
    c.stage2.checkpoint_every = 5;
    // one target image: at weight 1 the adversarial pull outweighs the reconstruction terms and
    // finetuning stops tracking the target
    c.finetune.w_adv = 0.1;
    return c;
}

std::string to_yaml(const RunConfig& c) {
    YAML::Emitter e;
    e << YAML::BeginMap;
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
    e << YAML::Key << "perceptual_weights" << YAML::Value << c.perceptual_weights;

    e << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "name" << YAML::Value << c.dataset.name;
    e << YAML::Key << "manifest" << YAML::Value << c.dataset.manifest;
    e << YAML::Key << "preprocess" << YAML::Value << to_string(c.dataset.preprocess);
    e << YAML::Key << "range" << YAML::Value;
    emit_range(e, c.dataset.range);
    e << YAML::Key << "synth_objects" << YAML::Value << c.dataset.synth_objects;
    e << YAML::Key << "synth_views" << YAML::Value << c.dataset.synth_views;
    e << YAML::Key << "synth_seed" << YAML::Value << c.dataset.synth_seed;
    e << YAML::EndMap;

    const auto& m = c.model;
    e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "resolution" << YAML::Value << m.resolution;
    e << YAML::Key << "latent_dim" << YAML::Value << m.latent_dim;
    e << YAML::Key << "mapping_hidden" << YAML::Value << m.mapping_hidden;
    e << YAML::Key << "style_gain" << YAML::Value << m.style_gain;
    e << YAML::Key << "volume_size" << YAML::Value << m.volume_size;
    e << YAML::Key << "volume_channels" << YAML::Value << m.volume_channels;
    e << YAML::Key << "volume_blocks" << YAML::Value << YAML::Flow << m.volume_blocks;
    e << YAML::Key << "post_rotation_channels" << YAML::Value << m.post_rotation_channels;
    e << YAML::Key << "projection_channels" << YAML::Value << m.projection_channels;
    e << YAML::Key << "image_blocks" << YAML::Value << YAML::Flow << m.image_blocks;
    e << YAML::Key << "encoder_channels" << YAML::Value << YAML::Flow << m.encoder_channels;
    e << YAML::Key << "encoder_head_channels" << YAML::Value << m.encoder_head_channels;
    e << YAML::Key << "discriminator_channels" << YAML::Value << YAML::Flow << m.discriminator_channels;
    e << YAML::Key << "discriminator_batch_std" << YAML::Value << m.discriminator_batch_std;
    e << YAML::EndMap;

    e << YAML::Key << "stage1" << YAML::Value;
    emit_train(e, c.stage1);
    e << YAML::Key << "stage2" << YAML::Value;
    emit_train(e, c.stage2);

    const auto& f = c.finetune;
    e << YAML::Key << "finetune" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "steps" << YAML::Value << f.steps;
    e << YAML::Key << "lr" << YAML::Value << num(f.lr);
    e << YAML::Key << "beta1" << YAML::Value << num(f.beta1);
    e << YAML::Key << "beta2" << YAML::Value << num(f.beta2);
    e << YAML::Key << "optimize_decoder" << YAML::Value << f.optimize_decoder;
    e << YAML::Key << "optimize_latent" << YAML::Value << f.optimize_latent;
    e << YAML::Key << "w_l2" << YAML::Value << num(f.w_l2);
    e << YAML::Key << "w_ssim" << YAML::Value << num(f.w_ssim);
    e << YAML::Key << "w_vgg" << YAML::Value << num(f.w_vgg);
    e << YAML::Key << "w_adv" << YAML::Value << num(f.w_adv);
    e << YAML::EndMap;

    const auto& fit = c.fit;
    e << YAML::Key << "fit" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "steps" << YAML::Value << fit.steps;
    e << YAML::Key << "lr" << YAML::Value << num(fit.lr);
    e << YAML::Key << "init" << YAML::Value << (fit.init == FitInit::kEncoder ? "encoder" : "random");
    e << YAML::Key << "seed" << YAML::Value << fit.seed;
    e << YAML::Key << "w_l2" << YAML::Value << num(fit.w_l2);
    e << YAML::Key << "w_ssim" << YAML::Value << num(fit.w_ssim);
    e << YAML::Key << "w_vgg" << YAML::Value << num(fit.w_vgg);
    e << YAML::EndMap;

    e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "max_pairs" << YAML::Value << c.eval.max_pairs;
    e << YAML::Key << "swap_identities" << YAML::Value << c.eval.swap_identities;
    e << YAML::Key << "swap_poses" << YAML::Value << c.eval.swap_poses;
    e << YAML::Key << "strip_views" << YAML::Value << c.eval.strip_views;
    e << YAML::EndMap;

    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

RunConfig parse_run_config(const std::string& yaml) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml);
    } catch (const YAML::Exception& ex) {
        throw ConfigError(fmt::format("config: {}", ex.what()));
    }
    RunConfig c = RunConfig::desk_defaults();
    Reader r(root, "");
    r.get("seed", c.seed);
    r.get("output_dir", c.output_dir);
    r.get("perceptual_weights", c.perceptual_weights);

    {
        auto d = r.child("dataset");
        d.get("name", c.dataset.name);
        d.get("manifest", c.dataset.manifest);
        std::string pre = to_string(c.dataset.preprocess);
        d.get("preprocess", pre);
        c.dataset.preprocess = preprocess_from_string(pre);
        // A named range is the default; an explicit range section overrides it.
        if (c.dataset.name != "synthetic") {
            try {
                c.dataset.range = PoseRange::named(c.dataset.name);
            } catch (const ConfigError&) {
            }
        }
        read_range(d.child("range"), c.dataset.range);
        d.get("synth_objects", c.dataset.synth_objects);
        d.get("synth_views", c.dataset.synth_views);
        d.get("synth_seed", c.dataset.synth_seed);
        d.finish();
    }
    {
        auto m = r.child("model");
        int64_t resolution = c.model.resolution;
        m.get("resolution", resolution);
        if (resolution != c.model.resolution) {
            c.model = ModelConfig::for_resolution(resolution);
        }
        m.get("latent_dim", c.model.latent_dim);
        m.get("mapping_hidden", c.model.mapping_hidden);
        m.get("style_gain", c.model.style_gain);
        m.get("volume_size", c.model.volume_size);
        m.get("volume_channels", c.model.volume_channels);
        m.get("volume_blocks", c.model.volume_blocks);
        m.get("post_rotation_channels", c.model.post_rotation_channels);
        m.get("projection_channels", c.model.projection_channels);
        m.get("image_blocks", c.model.image_blocks);
        m.get("encoder_channels", c.model.encoder_channels);
        m.get("encoder_head_channels", c.model.encoder_head_channels);
        m.get("discriminator_channels", c.model.discriminator_channels);
        m.get("discriminator_batch_std", c.model.discriminator_batch_std);
        m.finish();
    }
    read_train(r.child("stage1"), c.stage1);
    read_train(r.child("stage2"), c.stage2);
    {
        auto f = r.child("finetune");
        f.get("steps", c.finetune.steps);
        f.get("lr", c.finetune.lr);
        f.get("beta1", c.finetune.beta1);
        f.get("beta2", c.finetune.beta2);
        f.get("optimize_decoder", c.finetune.optimize_decoder);
        f.get("optimize_latent", c.finetune.optimize_latent);
        f.get("w_l2", c.finetune.w_l2);
        f.get("w_ssim", c.finetune.w_ssim);
        f.get("w_vgg", c.finetune.w_vgg);
        f.get("w_adv", c.finetune.w_adv);
        f.finish();
    }
    {
        auto f = r.child("fit");
        f.get("steps", c.fit.steps);
        f.get("lr", c.fit.lr);
        std::string init = c.fit.init == FitInit::kEncoder ? "encoder" : "random";
        f.get("init", init);
        if (init == "encoder") {
            c.fit.init = FitInit::kEncoder;
        } else if (init == "random") {
            c.fit.init = FitInit::kRandom;
        } else {
            throw ConfigError(fmt::format("fit.init must be 'encoder' or 'random', got '{}'", init));
        }
        f.get("seed", c.fit.seed);
        f.get("w_l2", c.fit.w_l2);
        f.get("w_ssim", c.fit.w_ssim);
        f.get("w_vgg", c.fit.w_vgg);
        f.finish();
    }
    {
        auto ev = r.child("eval");
        ev.get("max_pairs", c.eval.max_pairs);
        ev.get("swap_identities", c.eval.swap_identities);
        ev.get("swap_poses", c.eval.swap_poses);
        ev.get("strip_views", c.eval.strip_views);
        ev.finish();
    }
    r.finish();
    c.stage1.stage = 1;
    c.stage2.stage = 2;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw ConfigError(fmt::format("cannot write config '{}'", path.string()));
    }
    out << to_yaml(cfg);
}

} // namespace nvs
