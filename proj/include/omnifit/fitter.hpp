#pragma once

#include <string>
#include <vector>

#include "omnifit/body_model.hpp"
#include "omnifit/landmark_spec.hpp"
#include "omnifit/types.hpp"

namespace omnifit {

// Which coordinates of BodyParams a stage may move.
struct ParamSubset {
    static constexpr int kAllBetas = -1;

    int betas = 0;  // leading beta coefficients; kAllBetas for every one
    bool theta = false;
    bool psi = false;
    bool trans = false;

    static ParamSubset everything() { return {kAllBetas, true, true, true}; }
    bool empty() const { return betas == 0 && !theta && !psi && !trans; }
    // Boolean mask over the flattened parameter layout.
    std::vector<bool> coordinate_mask(int num_betas, int num_joints, int num_expressions) const;
    bool operator==(const ParamSubset&) const = default;
};

struct FitStage {
    ParamSubset active;
    int steps = 1;
    double lr = 0.1;
    bool operator==(const FitStage&) const = default;
};

enum class FitOptimizer {
    // Limited-memory quasi-Newton on Jacobi-scaled coordinates; each step
    // runs up to `max_iterations` two-loop updates with a strong-Wolfe line
    // search. The stage lr scales the very first trial step; later trials
    // start at the full quasi-Newton step.
    Lbfgs,
    // Adaptive moments; each step is one update of size lr.
    Adam,
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct LbfgsSettings {
    int history = 100;
    int max_iterations = 20;
    double tolerance_grad = 1e-12;
    double tolerance_change = 1e-20;
};

struct FitSchedule {
    std::vector<FitStage> stages;
    FitOptimizer optimizer = FitOptimizer::Lbfgs;
    AdamSettings adam;
    LbfgsSettings lbfgs;
    // Per-axis clamp applied to theta after every step.
    double theta_limit = 3.141592653589793;

    void validate() const;
};

struct DefaultScheduleOptions {
    // The second stage updates only beta[:2] and theta unless this is set.
    bool stage2_translation = false;
};

// Translation (20 steps, lr 0.5), then beta[:2] + theta (30, 0.5), then
// everything (20, 0.2).
FitSchedule default_schedule(const DefaultScheduleOptions& options = {});

struct FitReport {
    BodyParams params;
    std::vector<std::vector<double>> stage_losses;  // objective after each step
    std::vector<double> stage_seconds;
    double landmark_rmse = 0.0;  // over the active landmarks
    double final_loss = 0.0;
};

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Minimizes the masked landmark alignment objective stage by stage.
// Inactive coordinates are never written.
FitReport fit(const BodyModelAssets& assets, const LandmarkSpec& spec, const Points& target_landmarks,
              const FitSchedule& schedule, const std::vector<bool>& mask, const BodyParams& init);

// Masks landmarks whose nearest input point lies farther than threshold.
std::vector<bool> visibility_mask(const Points& landmarks, const Points& cloud, double threshold = 0.10);

// fit() with a visibility mask; requires at least four active landmarks that
// are not collinear.
FitReport fit_masked_partial(const BodyModelAssets& assets, const LandmarkSpec& spec, const Points& targets,
                             const std::vector<bool>& visibility, const FitSchedule& schedule,
                             const BodyParams& init);

double landmark_rmse(const BodyModelAssets& assets, const BodyParams& params, const Points& targets,
                     const LandmarkSpec& spec, const std::vector<bool>& mask);

}  // namespace omnifit
