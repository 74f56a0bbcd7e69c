#pragma once

#include <vector>

#include "omnifit/body_model.hpp"
#include "omnifit/landmark_spec.hpp"

namespace omnifit {

struct ObjectiveResult {
    double loss = 0.0;
    BodyParams gradient;
};

// Landmark alignment objective sum_i mask_i * |l~_i - l_i|^2 and its exact
// gradient with respect to beta, theta, psi and trans. Only the landmark rows
// of the posed mesh are evaluated.
ObjectiveResult objective_gradient(const BodyModelAssets& assets, const BodyParams& params,
                                   const Points& target_landmarks, const LandmarkSpec& spec,
                                   const std::vector<bool>& mask);

// Same objective, loss only.
double objective_value(const BodyModelAssets& assets, const BodyParams& params, const Points& target_landmarks,
                       const LandmarkSpec& spec, const std::vector<bool>& mask);

// Posed positions of the active landmarks, in mask order. Matches the rows of
// lbs_forward without evaluating the rest of the mesh.
Points posed_landmarks(const BodyModelAssets& assets, const BodyParams& params, const LandmarkSpec& spec,
                       const std::vector<bool>& mask);

}  // namespace omnifit
