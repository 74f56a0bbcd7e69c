#include "omnifit/scale_predictor.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

namespace omnifit {

ScaleConfig ScaleConfig::paper_scale() {
    ScaleConfig c;
    c.feature_dim = 384;
    c.attention_heads = 6;
    c.encoder_blocks = 12;
    c.num_patches = 256;
    c.patch_neighbors = 32;
    c.encoder_mlp_hidden = 1536;
    c.tokenizer_hidden = 128;
    c.head_hidden = 256;
    return c;
}

void ScaleConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("scale config: " + what);
    };
    need(feature_dim >= 1 && attention_heads >= 1, "feature_dim and attention_heads must be >= 1");
    need(feature_dim % attention_heads == 0, "feature_dim must be divisible by attention_heads");
    need(encoder_blocks >= 0, "encoder_blocks must be >= 0");
    need(num_patches >= 1 && patch_neighbors >= 1, "num_patches and patch_neighbors must be >= 1");
    need(tokenizer_hidden >= 1 && encoder_mlp_hidden >= 1 && head_hidden >= 1, "hidden sizes must be >= 1");
}

nn::ScaleDims ScaleConfig::dims() const {
    return {feature_dim, encoder_blocks, attention_heads, tokenizer_hidden, encoder_mlp_hidden, head_hidden};
}

nlohmann::json ScaleConfig::to_json() const {
    return {{"feature_dim", feature_dim},         {"encoder_blocks", encoder_blocks},
            {"num_patches", num_patches},         {"patch_neighbors", patch_neighbors},
            {"attention_heads", attention_heads}, {"tokenizer_hidden", tokenizer_hidden},
            {"encoder_mlp_hidden", encoder_mlp_hidden}, {"head_hidden", head_hidden},
            {"grouping_seed", grouping_seed}};
}

ScaleConfig ScaleConfig::from_json(const nlohmann::json& j) {
    ScaleConfig c;
    const auto defaults = c.to_json();
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) throw std::invalid_argument("scale config: unknown field '" + key + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("feature_dim", c.feature_dim);
    get("encoder_blocks", c.encoder_blocks);
    get("num_patches", c.num_patches);
    get("patch_neighbors", c.patch_neighbors);
    get("attention_heads", c.attention_heads);
    get("tokenizer_hidden", c.tokenizer_hidden);
    get("encoder_mlp_hidden", c.encoder_mlp_hidden);
    get("head_hidden", c.head_hidden);
    get("grouping_seed", c.grouping_seed);
    c.validate();
    return c;
}

ScalePredictor::ScalePredictor(const ScaleConfig& config, uint64_t init_seed) : config_(config) {
    config_.validate();
    net_ = nn::ScaleNet<float>(config_.dims());
    std::mt19937_64 rng(init_seed);
    net_.init(rng);
}

double ScalePredictor::predict_log_scale(const PointCloud& cloud) const {
    if (cloud.scale_state != ScaleState::Normalized) {
        throw std::invalid_argument("scale prediction needs a Normalized cloud; normalize first");
    }
    const auto g = group_points(cloud.points, config_.num_patches, config_.patch_neighbors, config_.grouping_seed);
    return net_.forward(g.relative.cast<float>(), g.centers.cast<float>(), g.k);
}

double ScalePredictor::predict_scale(const PointCloud& cloud) const { return std::exp(predict_log_scale(cloud)); }

std::string ScalePredictor::fingerprint() const {
    std::vector<std::pair<std::string, const nn::Param<float>*>> params;
    const_cast<nn::ScaleNet<float>&>(net_).visit(
        [&](const std::string& n, nn::Param<float>& p) { params.emplace_back(n, &p); });
    return fingerprint_params(params);
}

Archive ScalePredictor::to_archive() const {
    Archive a("scale");
    a.meta()["version"] = kVersion;
    a.meta()["config"] = config_.to_json();
    a.meta()["input"] = "normalized_bbox_center_0.9";
    a.meta()["training"] = {{"step", training_.step}, {"loss_history", training_.loss_history}};
    store_params(a, const_cast<nn::ScaleNet<float>&>(net_));
    return a;
}

ScalePredictor ScalePredictor::from_archive(const Archive& a) {
    if (a.kind() != "scale") throw std::runtime_error("archive kind '" + a.kind() + "' is not a scale predictor");
    const auto& m = a.meta();
    if (!m.contains("version")) throw std::runtime_error("scale checkpoint lacks a version field");
    if (m.at("version").get<int>() != kVersion) throw std::runtime_error("unsupported scale checkpoint version");
    ScalePredictor p(ScaleConfig::from_json(m.at("config")));
    load_params_into(a, p.net_);
    if (m.contains("training")) {
        p.training_.step = m["training"].value("step", int64_t{0});
        p.training_.loss_history = m["training"].value("loss_history", std::vector<double>{});
    }
    return p;
}

void ScalePredictor::save(const std::string& path) const { to_archive().save(path); }
ScalePredictor ScalePredictor::load(const std::string& path) { return from_archive(Archive::load(path)); }

}  // namespace omnifit
