#pragma once

#include <functional>
#include <optional>

#include <nlohmann/json_fwd.hpp>

#include "omnifit/body_model.hpp"
#include "omnifit/fitter.hpp"
#include "omnifit/geometry.hpp"
#include "omnifit/landmark_spec.hpp"
#include "omnifit/predictor.hpp"
#include "omnifit/scale_predictor.hpp"

namespace omnifit {

// Landmarks (M x 3) for a metric point set, in the same frame.
using LandmarkFn = std::function<Points(const Points&)>;

LandmarkFn predictor_landmarks(const LandmarkPredictor& predictor, const ImageFeatures* image = nullptr);

// How a Normalized cloud gets back to metric size. Metric clouds ignore it.
struct ScaleSource {
    const ScalePredictor* predictor = nullptr;
    std::optional<double> fixed;
    // Treat a Normalized cloud as if it were metric (no restoration).
    bool assume_metric = false;
};

// Returns the metric cloud and the factor that was applied.
std::pair<PointCloud, double> to_metric(const PointCloud& cloud, const ScaleSource& scale);

struct PipelineOptions {
    FitSchedule schedule = default_schedule();
    // Drop landmarks farther than mask_threshold from every input point.
    bool mask_untrusted = false;
    double mask_threshold = 0.10;
};

struct PipelineResult {
    FitReport fit;
    Points landmarks;  // predicted, metric frame
    std::vector<bool> mask;
    double scale = 1.0;
    PointCloud cloud;  // the metric cloud the landmarks came from

    // {params, rmse, per_stage_losses, timing, scale, active_landmarks}
    nlohmann::json to_json() const;
};

// Scale restoration, landmark prediction, then the staged fit from the zero pose.
PipelineResult fit_point_cloud(const BodyModelAssets& assets, const LandmarkSpec& spec, const PointCloud& cloud,
                               const LandmarkFn& landmarks, const ScaleSource& scale = {},
                               const PipelineOptions& options = {});

nlohmann::json fit_report_to_json(const FitReport& report);

}  // namespace omnifit
