#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "omnifit/types.hpp"

namespace omnifit {

// All tensors of a parametric body model. Blendshape bases are stored as
// (3V) x K matrices whose row index is 3 * vertex + axis, matching a row-major
// V x 3 x K layout.
struct BodyModelAssets {
    Points template_vertices;      // V x 3, rest pose
    RowMatrixXd shape_dirs;        // 3V x B_shape
    RowMatrixXd pose_dirs;         // 3V x 9(J-1)
    RowMatrixXd expr_dirs;         // 3V x B_expr
    RowMatrixXd joint_regressor;   // J x V
    RowMatrixXd skin_weights;      // V x J
    std::vector<int32_t> parents;  // J, root = -1
    Faces faces;                   // F x 3
    std::vector<Region> joint_regions;  // J, drives the head/body/hand vertex partition

    int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
    int num_joints() const { return static_cast<int>(parents.size()); }
    int num_betas() const { return static_cast<int>(shape_dirs.cols()); }
    int num_expressions() const { return static_cast<int>(expr_dirs.cols()); }
    int num_faces() const { return static_cast<int>(faces.rows()); }

    // Throws InvariantError / DimensionError on the first violated invariant.
    void validate() const;

    // Joints ordered so that every parent precedes its children.
    std::vector<int> topological_order() const;
};

struct BodyParams {
    Eigen::VectorXd beta;   // B_shape
    RowMatrixXd theta;      // J x 3 axis-angle, radians
    Eigen::VectorXd psi;    // B_expr
    Eigen::Vector3d trans = Eigen::Vector3d::Zero();

    static BodyParams zeros(const BodyModelAssets& assets);
    static BodyParams zeros(int num_betas, int num_joints, int num_expressions);

    // Flat layout: [beta, theta (row-major), psi, trans].
    int size() const { return static_cast<int>(beta.size() + theta.size() + psi.size() + 3); }
    Eigen::VectorXd flatten() const;
    void assign(const Eigen::VectorXd& flat);
    bool all_finite() const;
};

// Throws DimensionError naming the first parameter that disagrees with assets.
void check_dimensions(const BodyModelAssets& assets, const BodyParams& params);

// Rodrigues rotation. Below kSmallAngle the second-order Taylor expansion is used.
inline constexpr double kSmallAngle = 1e-8;
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle);
// Partial derivatives dR/d(axis_angle[k]) for k = 0, 1, 2.
std::array<Eigen::Matrix3d, 3> axis_angle_jacobian(const Eigen::Vector3d& axis_angle);

// T(beta, theta, psi) = template + B_S(beta) + B_P(theta) + B_E(psi).
Points shaped_template(const BodyModelAssets& assets, const BodyParams& params);

// joint_regressor * rest_vertices.
Points regress_joints(const BodyModelAssets& assets, const Points& rest_vertices);

struct LbsResult {
    Points vertices;  // V x 3
    Points joints;    // J x 3
};

// Full forward pass: blendshapes, joint regression on the identity-pose
// shaped mesh, kinematic chain and skinning, then translation.
LbsResult lbs_forward(const BodyModelAssets& assets, const BodyParams& params);

// Deterministic synthetic model: a tube-shaped "body" along +y with a chain
// skeleton. Shape direction 0 stretches height and direction 1 scales girth;
// the remaining bases are small smooth random fields.
BodyModelAssets make_toy_model(int num_vertices, int num_joints, uint64_t seed);

// Joint-region table for the 55-joint SMPL-X skeleton.
std::vector<Region> smplx_joint_regions();

// Per-vertex region by skin-weight dominance over joint_regions.
std::vector<Region> vertex_regions(const BodyModelAssets& assets);

}  // namespace omnifit
