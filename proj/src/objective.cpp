#include "omnifit/objective.hpp"

#include <string>

namespace omnifit {

namespace {

struct Prepared {
    std::vector<int> active;  // landmark positions entering the sum
};

Prepared prepare(const BodyModelAssets& assets, const BodyParams& params, const Points& targets,
                 const LandmarkSpec& spec, const std::vector<bool>& mask) {
    check_dimensions(assets, params);
    if (targets.rows() != spec.size()) {
        throw DimensionError("target_landmarks has " + std::to_string(targets.rows()) + " rows, spec has " +
                             std::to_string(spec.size()) + " entries");
    }
    if (static_cast<int>(mask.size()) != spec.size()) {
        throw DimensionError("mask has " + std::to_string(mask.size()) + " entries, spec has " +
                             std::to_string(spec.size()));
    }
    Prepared p;
    for (int i = 0; i < spec.size(); ++i) {
        if (!mask[i]) continue;
        const int v = spec.entries[i].vertex;
        if (v < 0 || v >= assets.num_vertices()) {
            throw std::out_of_range("landmark vertex " + std::to_string(v) + " outside the model");
        }
        p.active.push_back(i);
    }
    if (p.active.empty()) throw std::invalid_argument("no active landmarks");
    return p;
}

template <bool WithGradient>
double evaluate(const BodyModelAssets& assets, const BodyParams& params, const Points& targets,
                const LandmarkSpec& spec, const std::vector<bool>& mask, BodyParams* grad,
                Points* posed_out = nullptr) {
    const Prepared prep = prepare(assets, params, targets, spec, mask);
    const int J = assets.num_joints();
    const int V = assets.num_vertices();

    Eigen::VectorXd identity_flat = Eigen::Map<const Eigen::VectorXd>(assets.template_vertices.data(), 3 * V);
    if (params.beta.size() > 0) identity_flat.noalias() += assets.shape_dirs * params.beta;
    if (params.psi.size() > 0) identity_flat.noalias() += assets.expr_dirs * params.psi;
    const Eigen::Map<const Points> identity(identity_flat.data(), V, 3);
    const Points rest_joints = assets.joint_regressor * identity;

    std::vector<Eigen::Matrix3d> rot(J);
    for (int j = 0; j < J; ++j) rot[j] = axis_angle_to_matrix(params.theta.row(j).transpose());
    Eigen::VectorXd feature(9 * (J - 1));
    for (int j = 1; j < J; ++j) {
        const Eigen::Matrix3d d = rot[j] - Eigen::Matrix3d::Identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) feature[9 * (j - 1) + 3 * r + c] = d(r, c);
    }

    const std::vector<int> order = assets.topological_order();
    std::vector<Eigen::Matrix3d> world_rot(J);
    std::vector<Eigen::Vector3d> world_trans(J), offset(J);
    for (int j : order) {
        const Eigen::Vector3d rest = rest_joints.row(j).transpose();
        const int p = assets.parents[j];
        if (p < 0) {
            world_rot[j] = rot[j];
            world_trans[j] = rest;
        } else {
            world_rot[j] = world_rot[p] * rot[j];
            world_trans[j] = world_rot[p] * (rest - rest_joints.row(p).transpose()) + world_trans[p];
        }
    }
    for (int j = 0; j < J; ++j) offset[j] = world_trans[j] - world_rot[j] * rest_joints.row(j).transpose();

    const int A = static_cast<int>(prep.active.size());
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rest_lm(A, 3), adj(A, 3);
    std::vector<Eigen::Matrix3d> blend_rot(A);
    double loss = 0.0;
    if (posed_out) posed_out->resize(A, 3);
    for (int k = 0; k < A; ++k) {
        const int i = prep.active[k];
        const int v = spec.entries[i].vertex;
        Eigen::Vector3d x = identity.row(v).transpose();
        if (J > 1) x.noalias() += assets.pose_dirs.middleRows<3>(3 * v) * feature;
        rest_lm.row(k) = x.transpose();
        Eigen::Matrix3d br = Eigen::Matrix3d::Zero();
        Eigen::Vector3d bt = Eigen::Vector3d::Zero();
        for (int j = 0; j < J; ++j) {
            const double w = assets.skin_weights(v, j);
            if (w == 0.0) continue;
            br.noalias() += w * world_rot[j];
            bt.noalias() += w * offset[j];
        }
        blend_rot[k] = br;
        const Eigen::Vector3d posed = br * x + bt + params.trans;
        if (posed_out) posed_out->row(k) = posed.transpose();
        const Eigen::Vector3d r = posed - targets.row(i).transpose();
        loss += r.squaredNorm();
        adj.row(k) = (2.0 * r).transpose();
    }
    if constexpr (!WithGradient) {
        return loss;
    } else {
        BodyParams& g = *grad;
        g = BodyParams::zeros(assets);

        std::vector<Eigen::Matrix3d> d_world_rot(J, Eigen::Matrix3d::Zero());
        std::vector<Eigen::Vector3d> d_world_trans(J, Eigen::Vector3d::Zero());
        Points d_rest_joints = Points::Zero(J, 3);
        Eigen::VectorXd d_identity = Eigen::VectorXd::Zero(3 * V);
        Eigen::VectorXd d_feature = Eigen::VectorXd::Zero(9 * (J - 1));

        for (int k = 0; k < A; ++k) {
            const int v = spec.entries[prep.active[k]].vertex;
            const Eigen::Vector3d a = adj.row(k).transpose();
            const Eigen::Vector3d x = rest_lm.row(k).transpose();
            g.trans += a;
            const Eigen::Matrix3d a_xt = a * x.transpose();
            for (int j = 0; j < J; ++j) {
                const double w = assets.skin_weights(v, j);
                if (w == 0.0) continue;
                d_world_rot[j].noalias() += w * a_xt;
                // offset_j = world_trans_j - world_rot_j * rest_j
                d_world_trans[j].noalias() += w * a;
                d_world_rot[j].noalias() -= w * a * rest_joints.row(j);
                d_rest_joints.row(j).noalias() -= (w * world_rot[j].transpose() * a).transpose();
            }
            const Eigen::Vector3d dx = blend_rot[k].transpose() * a;
            d_identity.segment<3>(3 * v) += dx;
            if (J > 1) d_feature.noalias() += assets.pose_dirs.middleRows<3>(3 * v).transpose() * dx;
        }

        std::vector<Eigen::Matrix3d> d_rot(J, Eigen::Matrix3d::Zero());
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const int j = *it;
            const int p = assets.parents[j];
            if (p < 0) {
                d_rot[j] += d_world_rot[j];
                d_rest_joints.row(j) += d_world_trans[j].transpose();
                continue;
            }
            const Eigen::Vector3d bone = (rest_joints.row(j) - rest_joints.row(p)).transpose();
            d_world_rot[p].noalias() += d_world_rot[j] * rot[j].transpose() + d_world_trans[j] * bone.transpose();
            d_rot[j].noalias() += world_rot[p].transpose() * d_world_rot[j];
            const Eigen::Vector3d d_bone = world_rot[p].transpose() * d_world_trans[j];
            d_rest_joints.row(j) += d_bone.transpose();
            d_rest_joints.row(p) -= d_bone.transpose();
            d_world_trans[p] += d_world_trans[j];
        }

        for (int j = 1; j < J; ++j) {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) d_rot[j](r, c) += d_feature[9 * (j - 1) + 3 * r + c];
        }
        for (int j = 0; j < J; ++j) {
            const auto jac = axis_angle_jacobian(params.theta.row(j).transpose());
            for (int c = 0; c < 3; ++c) g.theta(j, c) = (d_rot[j].array() * jac[c].array()).sum();
        }

        Eigen::Map<Points>(d_identity.data(), V, 3).noalias() += assets.joint_regressor.transpose() * d_rest_joints;
        if (g.beta.size() > 0) g.beta.noalias() = assets.shape_dirs.transpose() * d_identity;
        if (g.psi.size() > 0) g.psi.noalias() = assets.expr_dirs.transpose() * d_identity;
        return loss;
    }
}

}  // namespace

ObjectiveResult objective_gradient(const BodyModelAssets& assets, const BodyParams& params,
                                   const Points& target_landmarks, const LandmarkSpec& spec,
                                   const std::vector<bool>& mask) {
    ObjectiveResult out;
    out.loss = evaluate<true>(assets, params, target_landmarks, spec, mask, &out.gradient);
    return out;
}

double objective_value(const BodyModelAssets& assets, const BodyParams& params, const Points& target_landmarks,
                       const LandmarkSpec& spec, const std::vector<bool>& mask) {
    return evaluate<false>(assets, params, target_landmarks, spec, mask, nullptr);
}

Points posed_landmarks(const BodyModelAssets& assets, const BodyParams& params, const LandmarkSpec& spec,
                       const std::vector<bool>& mask) {
    Points posed;
    evaluate<false>(assets, params, Points::Zero(spec.size(), 3), spec, mask, nullptr, &posed);
    return posed;
}

}  // namespace omnifit
