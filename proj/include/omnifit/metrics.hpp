#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "omnifit/body_model.hpp"
#include "omnifit/fitter.hpp"
#include "omnifit/types.hpp"

namespace omnifit {

// Index sets of the head / body / hand regions. They partition the indices
// when built from a label vector.
struct RegionSets {
    std::vector<int> hands;
    std::vector<int> head;
    std::vector<int> body;

    static RegionSets from_labels(const std::vector<Region>& labels);
    size_t total() const { return hands.size() + head.size() + body.size(); }
};

RegionSets vertex_region_sets(const BodyModelAssets& assets);
RegionSets joint_region_sets(const BodyModelAssets& assets);

struct MetricOptions {
    // Similarity-align the prediction to the ground truth first.
    bool procrustes = false;
};

// Mean Euclidean distances in centimeters (inputs in meters). A region value
// is empty when its index set is.
struct RegionMetric {
    double all = 0.0;
    std::optional<double> hands;
    std::optional<double> head;
    std::optional<double> body;

    nlohmann::json to_json() const;
};

RegionMetric v2v(const Points& pred_vertices, const Points& gt_vertices, const RegionSets& regions,
                 const MetricOptions& options = {});
RegionMetric mpjpe(const Points& pred_joints, const Points& gt_joints, const RegionSets& regions,
                   const MetricOptions& options = {});

// Least-squares rotation, uniform scale and translation taking src onto dst.
Points procrustes_align(const Points& src, const Points& dst);

struct EvalResult {
    RegionMetric v2v_cm;
    RegionMetric mpjpe_cm;
    int samples = 0;

    nlohmann::json to_json() const;
    // Fixed-width table with All / Hands / Head / Body columns.
    std::string text_table() const;
};

// Running means over samples; every sample counts equally.
class MetricAccumulator {
public:
    MetricAccumulator(const BodyModelAssets& assets, MetricOptions options = {});

    void add(const BodyParams& predicted, const BodyParams& ground_truth);
    EvalResult result() const;

private:
    const BodyModelAssets& assets_;
    MetricOptions options_;
    RegionSets vertex_sets_;
    RegionSets joint_sets_;
    std::vector<RegionMetric> v2v_;
    std::vector<RegionMetric> mpjpe_;
};

struct EvalItem {
    FitReport fit;
    BodyParams ground_truth;
};

EvalResult evaluate_dataset(const std::vector<EvalItem>& items, const BodyModelAssets& assets,
                            const MetricOptions& options = {});

}  // namespace omnifit
