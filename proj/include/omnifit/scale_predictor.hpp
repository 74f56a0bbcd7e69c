#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "omnifit/geometry.hpp"
#include "omnifit/predictor.hpp"

namespace omnifit {

struct ScaleConfig {
    int feature_dim = 128;
    int encoder_blocks = 3;
    int num_patches = 64;
    int patch_neighbors = 16;
    int attention_heads = 4;
    int tokenizer_hidden = 64;
    int encoder_mlp_hidden = 256;
    int head_hidden = 64;
    uint64_t grouping_seed = 0;

    // Twelve encoder blocks.
    static ScaleConfig paper_scale();

    void validate() const;
    nn::ScaleDims dims() const;
    nlohmann::json to_json() const;
    static ScaleConfig from_json(const nlohmann::json& j);
    bool operator==(const ScaleConfig&) const = default;
};

// Regresses the factor S that maps a Normalized cloud back to canonical
// size. The head outputs log S, so S is always positive.
class ScalePredictor {
public:
    static constexpr int kVersion = 1;

    explicit ScalePredictor(const ScaleConfig& config, uint64_t init_seed = 0);

    const ScaleConfig& config() const { return config_; }

    // Throws "normalize first" for Metric clouds.
    double predict_scale(const PointCloud& cloud) const;
    double predict_log_scale(const PointCloud& cloud) const;

    nn::ScaleNet<float>& net() { return net_; }
    const nn::ScaleNet<float>& net() const { return net_; }
    TrainingState& training() { return training_; }
    const TrainingState& training() const { return training_; }
    std::string fingerprint() const;

    Archive to_archive() const;
    static ScalePredictor from_archive(const Archive& a);
    void save(const std::string& path) const;
    static ScalePredictor load(const std::string& path);

private:
    ScaleConfig config_;
    nn::ScaleNet<float> net_;
    TrainingState training_;
};

}  // namespace omnifit
