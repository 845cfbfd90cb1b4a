#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mixpretrain/heads.hpp"
#include "mixpretrain/model.hpp"

namespace mixpretrain {

struct TrainConfig {
    TrainMode mode = TrainMode::uwox;
    std::size_t image_size = 256;
    std::size_t block_size = 16;
    bool multiscale = true;
    std::size_t layers = 12;
    std::size_t hidden = 768;
    std::size_t heads = 12;
    std::size_t max_tokens = kDefaultMaxTokens;
    double mask_rate = 0.15;
    std::size_t batch_size = 64;
    double learning_rate = 1e-4;
    std::size_t epochs = 1;
    std::size_t steps = 0;           // overrides epochs when > 0
    std::size_t finetune_steps = 0;  // overrides finetune_epochs when > 0
    std::size_t finetune_epochs = 1;
    std::uint64_t seed = 0;
    ScenarioConfig scenario;
    FeatureSource features = FeatureSource::image;
    CauchyConfig cauchy;
    // synthetic corpus
    std::size_t num_classes = 4;
    std::size_t corpus_a = 400;
    std::size_t corpus_b = 100;
    std::size_t eval_size = 100;

    /// Small profile that trains in minutes on one core.
    static TrainConfig desk() {
        TrainConfig c;
        c.image_size = 32;
        c.block_size = 8;
        c.layers = 2;
        c.hidden = 32;
        c.heads = 4;
        c.max_tokens = 16;
        c.batch_size = 8;
        c.learning_rate = 1e-3;
        c.steps = 600;
        c.finetune_steps = 300;
        return c;
    }

    ModelConfig model(std::size_t vocab_size) const {
        ModelConfig m;
        m.mode = mode;
        m.vocab_size = vocab_size;
        m.max_tokens = max_tokens;
        m.image_size = image_size;
        m.block = block_size;
        m.multiscale = multiscale;
        m.hidden = hidden;
        m.heads = heads;
        m.layers = layers;
        return m;
    }

    void validate() const {
        if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in (0, 1)");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(scenario.paired_fraction > 0.0 && scenario.paired_fraction <= 1.0))
            throw ConfigError("paired_fraction must lie in (0, 1]");
        if (!(cauchy.gamma > 0.0)) throw ConfigError("Cauchy gamma must be positive");
    }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["mode"] = std::string(to_string(c.mode));
    j["image_size"] = c.image_size;
    j["block_size"] = c.block_size;
    j["multiscale"] = c.multiscale;
    j["layers"] = c.layers;
    j["hidden"] = c.hidden;
    j["heads"] = c.heads;
    j["max_tokens"] = c.max_tokens;
    j["mask_rate"] = c.mask_rate;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["steps"] = c.steps;
    j["finetune_epochs"] = c.finetune_epochs;
    j["finetune_steps"] = c.finetune_steps;
    j["seed"] = c.seed;
    j["scenario"] = std::string(to_string(c.scenario.scenario));
    j["paired_fraction"] = c.scenario.paired_fraction;
    j["scenario_seed"] = c.scenario.seed;
    j["features"] = std::string(to_string(c.features));
    j["cauchy_gamma"] = c.cauchy.gamma;
    j["cauchy_lambda_q"] = c.cauchy.lambda_q;
    j["num_classes"] = c.num_classes;
    j["corpus_a"] = c.corpus_a;
    j["corpus_b"] = c.corpus_b;
    j["eval_size"] = c.eval_size;
    return j;
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline TrainConfig apply_json(TrainConfig c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "profile") continue;
            else if (key == "mode") c.mode = parse_mode(v.get<std::string>());
            else if (key == "image_size") c.image_size = v.get<std::size_t>();
            else if (key == "block_size") c.block_size = v.get<std::size_t>();
            else if (key == "multiscale") c.multiscale = v.get<bool>();
            else if (key == "layers") c.layers = v.get<std::size_t>();
            else if (key == "hidden") c.hidden = v.get<std::size_t>();
            else if (key == "heads") c.heads = v.get<std::size_t>();
            else if (key == "max_tokens") c.max_tokens = v.get<std::size_t>();
            else if (key == "mask_rate") c.mask_rate = v.get<double>();
            else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "epochs") c.epochs = v.get<std::size_t>();
            else if (key == "steps") c.steps = v.get<std::size_t>();
            else if (key == "finetune_epochs") c.finetune_epochs = v.get<std::size_t>();
            else if (key == "finetune_steps") c.finetune_steps = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "scenario") c.scenario.scenario = parse_scenario(v.get<std::string>());
            else if (key == "paired_fraction") c.scenario.paired_fraction = v.get<double>();
            else if (key == "scenario_seed") c.scenario.seed = v.get<std::uint64_t>();
            else if (key == "features") c.features = parse_feature_source(v.get<std::string>());
            else if (key == "cauchy_gamma") c.cauchy.gamma = v.get<double>();
            else if (key == "cauchy_lambda_q") c.cauchy.lambda_q = v.get<double>();
            else if (key == "num_classes") c.num_classes = v.get<std::size_t>();
            else if (key == "corpus_a") c.corpus_a = v.get<std::size_t>();
            else if (key == "corpus_b") c.corpus_b = v.get<std::size_t>();
            else if (key == "eval_size") c.eval_size = v.get<std::size_t>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

/// `"profile": "desk"` selects the desk defaults before the other keys apply.
inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig base;
    if (j.is_object() && j.contains("profile")) {
        const auto p = j["profile"].get<std::string>();
        if (p == "desk") base = TrainConfig::desk();
        else if (p != "paper") throw ConfigError("unknown profile '" + p + "'");
    }
    return apply_json(base, j);
}

inline nlohmann::json read_config_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline TrainConfig load_config(const std::filesystem::path& path) { return config_from_json(read_config_json(path)); }

inline void save_config(const std::filesystem::path& path, const TrainConfig& c) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << to_json(c).dump(2) << '\n';
}

}  // namespace mixpretrain
