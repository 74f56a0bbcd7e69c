#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "omnifit/archive.hpp"
#include "omnifit/geometry.hpp"
#include "omnifit/predictor.hpp"
#include "omnifit/scale_predictor.hpp"

namespace omnifit {

struct AdamWSettings {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

using NamedParams = std::vector<std::pair<std::string, nn::Param<float>*>>;

template <class Net>
NamedParams named_params(Net& net) {
    NamedParams out;
    net.visit([&](const std::string& n, nn::Param<float>& p) { out.emplace_back(n, &p); });
    return out;
}

// Decoupled weight decay Adam. State is keyed by parameter name.
class AdamW {
public:
    explicit AdamW(AdamWSettings settings = {}) : s_(settings) {}

    const AdamWSettings& settings() const { return s_; }
    void set_lr(double lr) { s_.lr = lr; }
    int64_t steps() const { return t_; }
    void step(const NamedParams& params);

    // Moments go into tensors "<prefix>m.<name>" / "<prefix>v.<name>".
    void store(Archive& a, const std::string& prefix = "optim.") const;
    // Restores whatever state the archive holds; missing entries start at zero.
    void restore(const Archive& a, const std::string& prefix = "optim.");

private:
    AdamWSettings s_;
    int64_t t_ = 0;
    std::map<std::string, std::pair<FeatureMatrix, FeatureMatrix>> state_;
};

struct TrainLogEntry {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_time = 0.0;  // seconds since the run started

    nlohmann::json to_json() const;
};

using TrainLogSink = std::function<void(const TrainLogEntry&)>;
// Appends one JSON object per line.
TrainLogSink jsonl_log(std::ostream& out);

struct TrainOptions {
    AdamWSettings optimizer;
    int epochs = 1;
    int steps_per_epoch = 1;
    int batch_size = 8;
    int checkpoint_every = 0;  // steps; 0 writes only at the end
    std::string checkpoint_path;  // empty disables checkpoint files
    TrainLogSink log;

    void validate() const;
};

struct TrainSummary {
    int64_t first_step = 0;
    int64_t last_step = 0;
    std::vector<double> losses;  // batch loss of every step of this run
    int rejected_samples = 0;
};

struct LandmarkSample {
    Points points;
    Points targets;  // M x 3, same frame as points
    std::optional<ImageFeatures> image;
};

using LandmarkBatchSource = std::function<std::vector<LandmarkSample>(int batch_size)>;

// Gradient steps on a landmark predictor. In adapter mode only the attached
// adapter is updated; base tensors are never written.
class LandmarkTrainer {
public:
    enum class Mode { Base, Adapter };

    LandmarkTrainer(LandmarkPredictor& model, Mode mode, AdamWSettings settings = {});

    // Checks every sample before touching any gradient, then takes one step.
    // Returns the batch mean of the per-sample landmark losses (before the update).
    double step(const std::vector<LandmarkSample>& batch);

    AdamW& optimizer() { return opt_; }
    Mode mode() const { return mode_; }
    // Model (or adapter) archive plus optimizer state.
    Archive checkpoint() const;
    void restore_optimizer(const Archive& a) { opt_.restore(a); }

private:
    LandmarkPredictor& model_;
    Mode mode_;
    AdamW opt_;
};

// Runs epochs * steps_per_epoch steps, continuing the model's step counter.
TrainSummary train_predictor(LandmarkPredictor& model, const LandmarkBatchSource& source, const TrainOptions& options,
                             const Archive* resume = nullptr);
// Fresh predictor from config and seed, then train_predictor.
LandmarkPredictor train(const LandmarkBatchSource& source, const PredictorConfig& config, const TrainOptions& options,
                        uint64_t seed = 0);
// Requires an attached adapter and image features on every sample.
TrainSummary train_adapter(LandmarkPredictor& model, const LandmarkBatchSource& source, const TrainOptions& options,
                           const Archive* resume = nullptr);

struct ScaleSample {
    PointCloud cloud;  // Normalized
    double scale = 1.0;
};

using ScaleBatchSource = std::function<std::vector<ScaleSample>(int batch_size)>;

class ScaleTrainer {
public:
    ScaleTrainer(ScalePredictor& model, AdamWSettings settings = {});
    // Mean of (S - S_hat)^2 over the accepted samples; samples with
    // non-positive S_hat are rejected and counted.
    double step(const std::vector<ScaleSample>& batch, int* rejected = nullptr);
    AdamW& optimizer() { return opt_; }
    Archive checkpoint() const;

private:
    ScalePredictor& model_;
    AdamW opt_;
};

TrainSummary train_scale(ScalePredictor& model, const ScaleBatchSource& source, const TrainOptions& options,
                         const Archive* resume = nullptr);

// Ground truth for a Normalized cloud: metric extent / 0.9, as produced by normalize_unit.
ScaleSample make_scale_sample(const PointCloud& metric_cloud);

}  // namespace omnifit
