#include "omnifit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <nlohmann/json.hpp>

#include "omnifit/body_model_io.hpp"

namespace omnifit {

LandmarkFn predictor_landmarks(const LandmarkPredictor& predictor, const ImageFeatures* image) {
    if (image && !predictor.has_adapter()) {
        throw std::invalid_argument("image features given but no adapter is attached");
    }
    return [&predictor, image](const Points& points) { return predictor.predict(points, image); };
}

std::pair<PointCloud, double> to_metric(const PointCloud& cloud, const ScaleSource& scale) {
    if (cloud.scale_state == ScaleState::Metric) return {cloud, 1.0};
    if (scale.assume_metric) {
        PointCloud c = cloud;
        c.scale_state = ScaleState::Metric;
        return {c, 1.0};
    }
    double s = 0.0;
    if (scale.fixed) {
        s = *scale.fixed;
    } else if (scale.predictor) {
        s = scale.predictor->predict_scale(cloud);
    } else {
        throw std::invalid_argument("normalized input needs a scale predictor, a fixed scale or assume-metric");
    }
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("scale must be positive and finite");
    return {restore_scale(cloud, s), s};
}

PipelineResult fit_point_cloud(const BodyModelAssets& assets, const LandmarkSpec& spec, const PointCloud& cloud,
                               const LandmarkFn& landmarks, const ScaleSource& scale,
                               const PipelineOptions& options) {
    cloud.validate();
    PipelineResult r;
    std::tie(r.cloud, r.scale) = to_metric(cloud, scale);
    r.landmarks = landmarks(r.cloud.points);
    if (r.landmarks.rows() != spec.size()) {
        throw DimensionError("landmark source returned " + std::to_string(r.landmarks.rows()) + " rows, spec has " +
                             std::to_string(spec.size()));
    }
    const BodyParams init = BodyParams::zeros(assets);
    if (options.mask_untrusted) {
        r.mask = visibility_mask(r.landmarks, r.cloud.points, options.mask_threshold);
        r.fit = fit_masked_partial(assets, spec, r.landmarks, r.mask, options.schedule, init);
    } else {
        r.mask.assign(static_cast<size_t>(spec.size()), true);
        r.fit = fit(assets, spec, r.landmarks, options.schedule, r.mask, init);
    }
    return r;
}

nlohmann::json fit_report_to_json(const FitReport& report) {
    double total = 0.0;
    for (double s : report.stage_seconds) total += s;
    return {{"params", params_to_json(report.params)},
            {"rmse", report.landmark_rmse},
            {"final_loss", report.final_loss},
            {"per_stage_losses", report.stage_losses},
            {"timing", {{"stage_seconds", report.stage_seconds}, {"total_seconds", total}}}};
}

nlohmann::json PipelineResult::to_json() const {
    auto j = fit_report_to_json(fit);
    j["scale"] = scale;
    j["active_landmarks"] = std::count(mask.begin(), mask.end(), true);
    return j;
}

}  // namespace omnifit
