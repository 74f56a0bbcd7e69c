#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "omnifit/archive.hpp"
#include "omnifit/nn/networks.hpp"
#include "omnifit/types.hpp"

namespace omnifit {

using FeatureMatrix = nn::Mat<float>;

struct PredictorConfig {
    int num_landmarks = 600;
    int feature_dim = 128;
    int encoder_blocks = 4;
    int decoder_blocks = 4;
    int num_patches = 64;
    int patch_neighbors = 16;
    int attention_heads = 4;
    std::vector<int> mlp_hidden_dims = {128, 128};  // output head
    int tokenizer_hidden = 64;
    int encoder_mlp_hidden = 256;
    uint64_t grouping_seed = 0;  // picks the first farthest-point sample

    static PredictorConfig desk_scale(int num_landmarks = 600);
    // Decoder depth 24 and a 16-block encoder.
    static PredictorConfig paper_scale(int num_landmarks = 600);

    void validate() const;
    nn::PredictorDims dims() const;
    nlohmann::json to_json() const;
    static PredictorConfig from_json(const nlohmann::json& j);
    bool operator==(const PredictorConfig&) const = default;
};

// Farthest-point centers plus k nearest neighbors per center.
struct PatchGrouping {
    Points centers;                 // g x 3
    std::vector<int> center_index;  // g, into the input
    std::vector<int> neighbors;     // g x k, patch-major
    int k = 0;
    Points relative;                // (g * k) x 3 neighbor offsets from their center
};

// The first center is a seed-chosen point; ties go to the lowest index.
// k is capped at the point count. Throws when there are fewer than g points.
PatchGrouping group_points(const Points& points, int num_patches, int neighbors, uint64_t seed);

struct ImageFeatures {
    FeatureMatrix tokens;  // p x c_img
    std::string source_id;
};

// Per-layer image cross-attention branch plus the fingerprint of the base
// predictor it was created for.
struct AdapterWeights {
    static constexpr int kVersion = 1;

    nn::AdapterNet<float> net;
    std::string base_fingerprint;
    std::string image_source;  // provider id the branch was trained with

    int layers() const { return static_cast<int>(net.branches.size()); }
    int image_dim() const { return net.image_dim; }

    static AdapterWeights create(const PredictorConfig& base, int image_dim, uint64_t seed,
                                 std::string base_fingerprint = "", std::string image_source = "");

    Archive to_archive() const;
    static AdapterWeights from_archive(const Archive& a);
    void save(const std::string& path) const;
    static AdapterWeights load(const std::string& path);
    std::string fingerprint() const;
};

struct TrainingState {
    int64_t step = 0;
    std::vector<double> loss_history;
};

struct DecodeResult {
    Points landmarks;  // M x 3, in the frame of the point features
    // Point cross-attention probabilities: [layer][head], M x g each.
    std::vector<std::vector<FeatureMatrix>> attention;
};

struct Prediction {
    Points landmarks;   // M x 3, input frame
    Points centers;     // g x 3 patch centers, input frame
    Eigen::Vector3d frame_center = Eigen::Vector3d::Zero();
    std::vector<std::vector<FeatureMatrix>> attention;
};

// Point tokenizer, point encoder and Perceiver-style landmark decoder.
// Inputs are shifted to their bounding-box center before tokenizing and
// predictions are shifted back, so landmarks come out in the input frame.
class LandmarkPredictor {
public:
    static constexpr int kVersion = 1;

    explicit LandmarkPredictor(const PredictorConfig& config, uint64_t init_seed = 0);
    LandmarkPredictor(const LandmarkPredictor& other);
    LandmarkPredictor& operator=(const LandmarkPredictor& other);
    LandmarkPredictor(LandmarkPredictor&&) noexcept = default;
    LandmarkPredictor& operator=(LandmarkPredictor&&) noexcept = default;

    const PredictorConfig& config() const { return config_; }

    struct Tokens {
        FeatureMatrix embeddings;  // g x c
        Points centers;            // g x 3, in the frame of the given points
    };
    Tokens tokenize(const Points& points) const;
    FeatureMatrix encode(const FeatureMatrix& embeddings) const;
    // Image features require an attached adapter.
    DecodeResult decode(const FeatureMatrix& point_features, const ImageFeatures* image = nullptr,
                        bool keep_attention = true) const;

    Prediction run(const Points& points, const ImageFeatures* image = nullptr, bool keep_attention = false) const;
    Points predict(const Points& points, const ImageFeatures* image = nullptr) const;

    // Throws if an adapter is already attached, layer counts differ, or the
    // adapter records a different base fingerprint.
    void attach(AdapterWeights adapter);
    AdapterWeights detach();
    bool has_adapter() const { return adapter_ != nullptr; }
    const AdapterWeights* adapter() const { return adapter_.get(); }
    AdapterWeights* adapter() { return adapter_.get(); }

    // SHA-256 over the base tensors (names, shapes, bytes); adapters excluded.
    std::string fingerprint() const;

    nn::PredictorNet<float>& net() { return net_; }
    const nn::PredictorNet<float>& net() const { return net_; }
    TrainingState& training() { return training_; }
    const TrainingState& training() const { return training_; }

    Archive to_archive() const;
    static LandmarkPredictor from_archive(const Archive& a);
    void save(const std::string& path) const;
    static LandmarkPredictor load(const std::string& path);

private:
    PredictorConfig config_;
    nn::PredictorNet<float> net_;
    std::unique_ptr<AdapterWeights> adapter_;
    TrainingState training_;
};

// Landmark loss: mean over landmarks of the squared Euclidean error.
double landmark_loss(const Points& predicted, const Points& target);

// Writes every parameter of a network into an archive as float32, or reads
// them back checking names and shapes.
template <class Net>
void store_params(Archive& a, Net& net) {
    net.visit([&](const std::string& name, nn::Param<float>& p) {
        a.add_f32(name, {p.value.rows(), p.value.cols()}, std::span<const float>(p.value.data(), p.value.size()));
    });
}

template <class Net>
void load_params_into(const Archive& a, Net& net) {
    net.visit([&](const std::string& name, nn::Param<float>& p) {
        if (!a.has(name)) throw DimensionError("archive lacks tensor '" + name + "'");
        const auto& shape = a.at(name).shape;
        if (shape != std::vector<int64_t>{p.value.rows(), p.value.cols()}) {
            throw DimensionError("tensor '" + name + "' has the wrong shape for the configured network");
        }
        const auto data = a.f32(name, p.value.size());
        std::copy(data.begin(), data.end(), p.value.data());
        p.grad.setZero();
    });
}

std::string fingerprint_params(const std::vector<std::pair<std::string, const nn::Param<float>*>>& params);

}  // namespace omnifit
