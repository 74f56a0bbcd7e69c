#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "omnifit/archive.hpp"
#include "omnifit/body_model.hpp"

namespace omnifit {

// Body-model container: archive kind "body_model" whose header carries
// dims {V, J, B_shape, B_expr, F}. Tensors, in order: template, shape_dirs,
// pose_dirs, expr_dirs, joint_regressor, skin_weights (float64), parents,
// faces (int32) and the optional joint_regions (int32: 0 head, 1 body, 2 hand).
Archive body_model_to_archive(const BodyModelAssets& assets);
// Validates all invariants, then renormalizes skin-weight rows whose sum is
// off by more than 1e-12.
BodyModelAssets body_model_from_archive(const Archive& archive);

void save_body_model(const std::string& path, const BodyModelAssets& assets);
BodyModelAssets load_body_model(const std::string& path);

// Parameter record: {"beta": [...], "theta": [[x,y,z], ...], "psi": [...], "trans": [x,y,z]}.
nlohmann::json params_to_json(const BodyParams& params);
BodyParams params_from_json(const nlohmann::json& j);
void save_params(const std::string& path, const BodyParams& params);
// Accepts a bare parameter record or any object with a "params" member
// (such as a fit result file).
BodyParams load_params(const std::string& path);

}  // namespace omnifit
