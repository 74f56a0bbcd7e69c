#include "omnifit/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace omnifit {

std::string_view region_name(Region r) {
    switch (r) {
        case Region::Head: return "head";
        case Region::Body: return "body";
        case Region::Hand: return "hand";
    }
    return "body";
}

Region parse_region(std::string_view name) {
    if (name == "head") return Region::Head;
    if (name == "body") return Region::Body;
    if (name == "hand" || name == "hands") return Region::Hand;
    throw std::invalid_argument("unknown region label '" + std::string(name) + "'");
}

namespace {

std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
    std::ostringstream os;
    os << rows << "x" << cols;
    return os.str();
}

void expect_shape(const char* name, Eigen::Index rows, Eigen::Index cols, Eigen::Index want_rows,
                  Eigen::Index want_cols) {
    if (rows != want_rows || cols != want_cols) {
        throw DimensionError(std::string(name) + " has shape " + shape_str(rows, cols) + ", expected " +
                             shape_str(want_rows, want_cols));
    }
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d k;
    k << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return k;
}

}  // namespace

void BodyModelAssets::validate() const {
    const Eigen::Index V = template_vertices.rows();
    const Eigen::Index J = static_cast<Eigen::Index>(parents.size());
    if (V == 0) throw InvariantError("template has no vertices");
    if (J == 0) throw InvariantError("skeleton has no joints");
    expect_shape("shape_dirs", shape_dirs.rows(), shape_dirs.cols(), 3 * V, shape_dirs.cols());
    expect_shape("pose_dirs", pose_dirs.rows(), pose_dirs.cols(), 3 * V, 9 * (J - 1));
    expect_shape("expr_dirs", expr_dirs.rows(), expr_dirs.cols(), 3 * V, expr_dirs.cols());
    expect_shape("joint_regressor", joint_regressor.rows(), joint_regressor.cols(), J, V);
    expect_shape("skin_weights", skin_weights.rows(), skin_weights.cols(), V, J);
    if (!joint_regions.empty() && static_cast<Eigen::Index>(joint_regions.size()) != J) {
        throw DimensionError("joint_regions has " + std::to_string(joint_regions.size()) + " entries, expected " +
                             std::to_string(J));
    }

    if (!template_vertices.allFinite() || !shape_dirs.allFinite() || !pose_dirs.allFinite() ||
        !expr_dirs.allFinite() || !joint_regressor.allFinite() || !skin_weights.allFinite()) {
        throw InvariantError("model tensors contain non-finite values");
    }

    for (Eigen::Index v = 0; v < V; ++v) {
        if ((skin_weights.row(v).array() < 0.0).any()) {
            throw InvariantError("skin_weights row " + std::to_string(v) + " has negative entries");
        }
        const double s = skin_weights.row(v).sum();
        if (std::abs(s - 1.0) > 1e-6) {
            throw InvariantError("skin_weights row " + std::to_string(v) + " sums to " + std::to_string(s));
        }
    }
    for (Eigen::Index j = 0; j < J; ++j) {
        if ((joint_regressor.row(j).array() < 0.0).any()) {
            throw InvariantError("joint_regressor row " + std::to_string(j) + " has negative entries");
        }
        const double s = joint_regressor.row(j).sum();
        if (std::abs(s - 1.0) > 1e-5) {
            throw InvariantError("joint_regressor row " + std::to_string(j) + " sums to " + std::to_string(s));
        }
    }

    if (parents[0] != -1) throw InvariantError("joint 0 must be the root (parent -1)");
    for (Eigen::Index j = 1; j < J; ++j) {
        if (parents[j] < 0 || parents[j] >= J || parents[j] == j) {
            throw InvariantError("joint " + std::to_string(j) + " has invalid parent " + std::to_string(parents[j]));
        }
    }
    // Every joint must reach the root without revisiting a joint.
    for (Eigen::Index j = 1; j < J; ++j) {
        int cur = static_cast<int>(j);
        for (Eigen::Index steps = 0; cur != 0; ++steps) {
            if (steps > J) throw InvariantError("kinematic tree has a cycle through joint " + std::to_string(j));
            cur = parents[cur];
        }
    }

    if (faces.size() > 0 && (faces.minCoeff() < 0 || faces.maxCoeff() >= V)) {
        throw InvariantError("face index out of range [0, " + std::to_string(V) + ")");
    }
}

std::vector<int> BodyModelAssets::topological_order() const {
    const int J = num_joints();
    std::vector<int> depth(J, 0);
    for (int j = 0; j < J; ++j) {
        int d = 0;
        for (int cur = j; parents[cur] >= 0 && d <= J; cur = parents[cur]) ++d;
        depth[j] = d;
    }
    std::vector<int> order(J);
    for (int j = 0; j < J; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return depth[a] < depth[b]; });
    return order;
}

BodyParams BodyParams::zeros(const BodyModelAssets& assets) {
    return zeros(assets.num_betas(), assets.num_joints(), assets.num_expressions());
}

BodyParams BodyParams::zeros(int num_betas, int num_joints, int num_expressions) {
    BodyParams p;
    p.beta = Eigen::VectorXd::Zero(num_betas);
    p.theta = RowMatrixXd::Zero(num_joints, 3);
    p.psi = Eigen::VectorXd::Zero(num_expressions);
    p.trans.setZero();
    return p;
}

Eigen::VectorXd BodyParams::flatten() const {
    Eigen::VectorXd flat(size());
    Eigen::Index o = 0;
    flat.segment(o, beta.size()) = beta;
    o += beta.size();
    flat.segment(o, theta.size()) = Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
    o += theta.size();
    flat.segment(o, psi.size()) = psi;
    o += psi.size();
    flat.segment<3>(o) = trans;
    return flat;
}

void BodyParams::assign(const Eigen::VectorXd& flat) {
    if (flat.size() != size()) {
        throw DimensionError("flat parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                             std::to_string(size()));
    }
    Eigen::Index o = 0;
    beta = flat.segment(o, beta.size());
    o += beta.size();
    Eigen::Map<Eigen::VectorXd>(theta.data(), theta.size()) = flat.segment(o, theta.size());
    o += theta.size();
    psi = flat.segment(o, psi.size());
    o += psi.size();
    trans = flat.segment<3>(o);
}

bool BodyParams::all_finite() const {
    return beta.allFinite() && theta.allFinite() && psi.allFinite() && trans.allFinite();
}

void check_dimensions(const BodyModelAssets& assets, const BodyParams& params) {
    if (params.beta.size() != assets.num_betas()) {
        throw DimensionError("beta has " + std::to_string(params.beta.size()) + " coefficients, shape_dirs has " +
                             std::to_string(assets.num_betas()));
    }
    if (params.theta.rows() != assets.num_joints() || params.theta.cols() != 3) {
        throw DimensionError("theta has shape " + shape_str(params.theta.rows(), params.theta.cols()) +
                             ", expected " + shape_str(assets.num_joints(), 3));
    }
    if (params.psi.size() != assets.num_expressions()) {
        throw DimensionError("psi has " + std::to_string(params.psi.size()) + " coefficients, expr_dirs has " +
                             std::to_string(assets.num_expressions()));
    }
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle) {
    if (!axis_angle.allFinite()) throw std::domain_error("non-finite axis-angle rotation");
    const double angle = axis_angle.norm();
    const Eigen::Matrix3d k = skew(axis_angle);
    double a, b;
    if (angle < kSmallAngle) {
        a = 1.0;
        b = 0.5;
    } else {
        a = std::sin(angle) / angle;
        const double h = std::sin(0.5 * angle) / angle;
        b = 2.0 * h * h;
    }
    return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

std::array<Eigen::Matrix3d, 3> axis_angle_jacobian(const Eigen::Vector3d& axis_angle) {
    if (!axis_angle.allFinite()) throw std::domain_error("non-finite axis-angle rotation");
    const double angle = axis_angle.norm();
    const double t2 = angle * angle;
    const Eigen::Matrix3d k = skew(axis_angle);
    const Eigen::Matrix3d k2 = k * k;

    double a, b, da_over, db_over;  // da/dangle / angle, db/dangle / angle
    if (angle < kSmallAngle) {
        a = 1.0;
        b = 0.5;
    } else {
        a = std::sin(angle) / angle;
        const double h = std::sin(0.5 * angle) / angle;
        b = 2.0 * h * h;
    }
    if (angle < 1e-2) {
        da_over = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0;
        db_over = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0;
    } else {
        const double s = std::sin(angle), c = std::cos(angle);
        da_over = (angle * c - s) / (t2 * angle);
        db_over = (angle * s - 2.0 * (1.0 - c)) / (t2 * t2);
    }

    std::array<Eigen::Matrix3d, 3> out;
    for (int i = 0; i < 3; ++i) {
        const Eigen::Matrix3d ei = skew(Eigen::Vector3d::Unit(i));
        out[i] = a * ei + b * (ei * k + k * ei) + (da_over * axis_angle[i]) * k + (db_over * axis_angle[i]) * k2;
    }
    return out;
}

namespace {

Eigen::VectorXd shaped_identity_flat(const BodyModelAssets& assets, const BodyParams& params) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(assets.template_vertices.data(),
                                                          assets.template_vertices.size());
    if (params.beta.size() > 0) v.noalias() += assets.shape_dirs * params.beta;
    if (params.psi.size() > 0) v.noalias() += assets.expr_dirs * params.psi;
    return v;
}

Eigen::VectorXd pose_feature(const std::vector<Eigen::Matrix3d>& rotations) {
    const int J = static_cast<int>(rotations.size());
    Eigen::VectorXd f(9 * (J - 1));
    for (int j = 1; j < J; ++j) {
        const Eigen::Matrix3d d = rotations[j] - Eigen::Matrix3d::Identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) f[9 * (j - 1) + 3 * r + c] = d(r, c);
    }
    return f;
}

Points as_points(const Eigen::VectorXd& flat) {
    return Eigen::Map<const Points>(flat.data(), flat.size() / 3, 3);
}

}  // namespace

Points shaped_template(const BodyModelAssets& assets, const BodyParams& params) {
    check_dimensions(assets, params);
    Eigen::VectorXd v = shaped_identity_flat(assets, params);
    const int J = assets.num_joints();
    if (J > 1) {
        std::vector<Eigen::Matrix3d> rotations(J);
        for (int j = 0; j < J; ++j) rotations[j] = axis_angle_to_matrix(params.theta.row(j).transpose());
        v.noalias() += assets.pose_dirs * pose_feature(rotations);
    }
    return as_points(v);
}

Points regress_joints(const BodyModelAssets& assets, const Points& rest_vertices) {
    if (rest_vertices.rows() != assets.num_vertices()) {
        throw DimensionError("rest_vertices has " + std::to_string(rest_vertices.rows()) + " rows, expected " +
                             std::to_string(assets.num_vertices()));
    }
    return assets.joint_regressor * rest_vertices;
}

LbsResult lbs_forward(const BodyModelAssets& assets, const BodyParams& params) {
    check_dimensions(assets, params);
    if (!params.trans.allFinite()) throw std::domain_error("non-finite translation");
    const int J = assets.num_joints();
    const int V = assets.num_vertices();

    const Eigen::VectorXd identity_flat = shaped_identity_flat(assets, params);
    const Points identity_shaped = as_points(identity_flat);
    const Points rest_joints = assets.joint_regressor * identity_shaped;

    std::vector<Eigen::Matrix3d> rotations(J);
    for (int j = 0; j < J; ++j) rotations[j] = axis_angle_to_matrix(params.theta.row(j).transpose());

    Eigen::VectorXd posed_rest_flat = identity_flat;
    if (J > 1) posed_rest_flat.noalias() += assets.pose_dirs * pose_feature(rotations);
    const Points posed_rest = as_points(posed_rest_flat);

    std::vector<Eigen::Matrix3d> world_rot(J);
    std::vector<Eigen::Vector3d> world_trans(J);
    for (int j : assets.topological_order()) {
        const Eigen::Vector3d rest = rest_joints.row(j).transpose();
        const int p = assets.parents[j];
        if (p < 0) {
            world_rot[j] = rotations[j];
            world_trans[j] = rest;
        } else {
            world_rot[j] = world_rot[p] * rotations[j];
            world_trans[j] = world_rot[p] * (rest - rest_joints.row(p).transpose()) + world_trans[p];
        }
    }

    // Relative transforms map rest-pose positions to posed positions.
    Eigen::Matrix<double, Eigen::Dynamic, 12, Eigen::RowMajor> rel(J, 12);
    for (int j = 0; j < J; ++j) {
        const Eigen::Vector3d offset = world_trans[j] - world_rot[j] * rest_joints.row(j).transpose();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) rel(j, 4 * r + c) = world_rot[j](r, c);
            rel(j, 4 * r + 3) = offset[r];
        }
    }
    const Eigen::Matrix<double, Eigen::Dynamic, 12, Eigen::RowMajor> blended = assets.skin_weights * rel;

    LbsResult out;
    out.vertices.resize(V, 3);
    for (int v = 0; v < V; ++v) {
        const Eigen::Vector3d x = posed_rest.row(v).transpose();
        for (int r = 0; r < 3; ++r) {
            out.vertices(v, r) = blended(v, 4 * r) * x[0] + blended(v, 4 * r + 1) * x[1] +
                                 blended(v, 4 * r + 2) * x[2] + blended(v, 4 * r + 3) + params.trans[r];
        }
    }
    out.joints.resize(J, 3);
    for (int j = 0; j < J; ++j) out.joints.row(j) = (world_trans[j] + params.trans).transpose();
    return out;
}

std::vector<Region> smplx_joint_regions() {
    std::vector<Region> regions(55, Region::Body);
    for (int j : {15, 22, 23, 24}) regions[j] = Region::Head;  // head, jaw, eyes
    regions[20] = regions[21] = Region::Hand;                   // wrists
    for (int j = 25; j < 55; ++j) regions[j] = Region::Hand;    // fingers
    return regions;
}

std::vector<Region> vertex_regions(const BodyModelAssets& assets) {
    std::vector<Region> joint_regions = assets.joint_regions;
    if (joint_regions.empty()) {
        if (assets.num_joints() != 55) {
            throw InvariantError("model has no joint_regions table and is not a 55-joint skeleton");
        }
        joint_regions = smplx_joint_regions();
    }
    std::vector<Region> out(assets.num_vertices());
    for (int v = 0; v < assets.num_vertices(); ++v) {
        Eigen::Index best = 0;
        assets.skin_weights.row(v).maxCoeff(&best);
        out[v] = joint_regions[best];
    }
    return out;
}

BodyModelAssets make_toy_model(int num_vertices, int num_joints, uint64_t seed) {
    if (num_joints < 2 || num_vertices < num_joints) {
        throw std::invalid_argument("make_toy_model requires num_verts >= num_joints >= 2 (got " +
                                    std::to_string(num_vertices) + ", " + std::to_string(num_joints) + ")");
    }
    constexpr double kHeight = 1.7;
    constexpr int kBetas = 10;
    constexpr int kExpr = 10;
    const int V = num_vertices;
    const int J = num_joints;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const int segs = std::clamp(static_cast<int>(std::lround(std::sqrt(V / 4.0))), 3, 24);
    const int rings = (V + segs - 1) / segs;

    BodyModelAssets a;
    a.template_vertices.resize(V, 3);
    std::vector<double> ring_y(rings);
    for (int r = 0; r < rings; ++r) ring_y[r] = rings == 1 ? 0.5 * kHeight : kHeight * r / (rings - 1);
    for (int v = 0; v < V; ++v) {
        const int r = v / segs;
        const int s = v % segs;
        const double y = ring_y[r];
        const double phi = 2.0 * std::numbers::pi * s / segs + 0.15 * y;
        const double radius = 0.14 + 0.04 * std::sin(3.0 * std::numbers::pi * y / kHeight);
        a.template_vertices(v, 0) = 1.3 * radius * std::cos(phi) + 0.003 * normal(rng);
        a.template_vertices(v, 1) = y + 0.003 * normal(rng);
        a.template_vertices(v, 2) = 0.8 * radius * std::sin(phi) + 0.003 * normal(rng);
    }

    a.parents.resize(J);
    std::vector<double> joint_y(J);
    for (int j = 0; j < J; ++j) {
        a.parents[j] = j - 1;
        joint_y[j] = kHeight * (j + 0.5) / J;
    }

    const double sigma = 0.6 * kHeight / J;
    a.skin_weights.resize(V, J);
    for (int v = 0; v < V; ++v) {
        const double y = a.template_vertices(v, 1);
        for (int j = 0; j < J; ++j) {
            const double d = (y - joint_y[j]) / sigma;
            a.skin_weights(v, j) = std::exp(-0.5 * d * d) + 1e-6;
        }
        a.skin_weights.row(v) /= a.skin_weights.row(v).sum();
    }

    a.joint_regressor.resize(J, V);
    for (int j = 0; j < J; ++j) {
        for (int v = 0; v < V; ++v) {
            const double d = (a.template_vertices(v, 1) - joint_y[j]) / (0.5 * sigma);
            a.joint_regressor(j, v) = std::exp(-0.5 * d * d) + 1e-12;
        }
        a.joint_regressor.row(j) /= a.joint_regressor.row(j).sum();
    }

    // Smooth random displacement field: a radial harmonic around the tube axis
    // modulated along y, plus a weaker axial term.
    auto smooth_field = [&](double amplitude, const std::vector<double>* weight) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const int m_radial = std::uniform_int_distribution<int>(0, 3)(rng);
        const int m_axial = std::uniform_int_distribution<int>(0, 3)(rng);
        const double f_radial = 1.0 + 7.0 * unit(rng), f_axial = 1.0 + 7.0 * unit(rng);
        const double p0 = 2 * std::numbers::pi * unit(rng), p1 = 2 * std::numbers::pi * unit(rng);
        const double p2 = 2 * std::numbers::pi * unit(rng), p3 = 2 * std::numbers::pi * unit(rng);
        Eigen::VectorXd field = Eigen::VectorXd::Zero(3 * V);
        for (int v = 0; v < V; ++v) {
            const double x = a.template_vertices(v, 0), y = a.template_vertices(v, 1) / kHeight,
                         z = a.template_vertices(v, 2);
            const double phi = std::atan2(z, x);
            const Eigen::Vector3d radial(std::cos(phi), 0.0, std::sin(phi));
            const double w = weight ? (*weight)[v] : 1.0;
            const double r = std::cos(m_radial * phi + p0) * std::cos(std::numbers::pi * f_radial * y + p1);
            const double t = 0.5 * std::sin(m_axial * phi + p2) * std::cos(std::numbers::pi * f_axial * y + p3);
            field.segment<3>(3 * v) = amplitude * w * (r * radial + Eigen::Vector3d(0.0, t, 0.0));
        }
        return field;
    };

    a.shape_dirs.resize(3 * V, kBetas);
    for (int v = 0; v < V; ++v) {
        const Eigen::Vector3d p = a.template_vertices.row(v).transpose();
        a.shape_dirs.block<3, 1>(3 * v, 0) = Eigen::Vector3d(0.0, 0.1 * p.y(), 0.0);
        a.shape_dirs.block<3, 1>(3 * v, 1) = Eigen::Vector3d(0.1 * p.x(), 0.0, 0.1 * p.z());
    }
    for (int b = 2; b < kBetas; ++b) a.shape_dirs.col(b) = smooth_field(0.01, nullptr);

    a.joint_regions.assign(J, Region::Body);
    const int num_head = J >= 3 ? std::max(1, J / 6) : 1;
    const int num_hand = J >= 4 ? std::max(1, J / 4) : 0;
    for (int j = J - num_head; j < J; ++j) a.joint_regions[j] = Region::Head;
    for (int j = J - num_head - num_hand; j < J - num_head; ++j) a.joint_regions[j] = Region::Hand;

    std::vector<double> head_weight(V, 0.0);
    for (int v = 0; v < V; ++v) {
        for (int j = 0; j < J; ++j) {
            if (a.joint_regions[j] == Region::Head) head_weight[v] += a.skin_weights(v, j);
        }
    }
    a.expr_dirs.resize(3 * V, kExpr);
    for (int e = 0; e < kExpr; ++e) a.expr_dirs.col(e) = smooth_field(0.01, &head_weight);

    a.pose_dirs.resize(3 * V, 9 * (J - 1));
    for (int j = 1; j < J; ++j) {
        std::vector<double> w(V);
        for (int v = 0; v < V; ++v) w[v] = a.skin_weights(v, j);
        for (int k = 0; k < 9; ++k) a.pose_dirs.col(9 * (j - 1) + k) = smooth_field(0.01, &w);
    }

    // Tube quads plus fan caps on complete end rings.
    std::vector<Eigen::Vector3i> tris;
    for (int r = 0; r + 1 < rings; ++r) {
        for (int s = 0; s < segs; ++s) {
            const int i00 = r * segs + s, i01 = r * segs + (s + 1) % segs;
            const int i10 = (r + 1) * segs + s, i11 = (r + 1) * segs + (s + 1) % segs;
            if (i10 < V && i11 < V) {
                tris.emplace_back(i00, i10, i11);
                tris.emplace_back(i00, i11, i01);
            }
        }
    }
    if (segs >= 3 && V >= segs) {
        for (int s = 1; s + 1 < segs; ++s) tris.emplace_back(0, s, s + 1);
    }
    if (rings >= 2 && rings * segs == V) {
        const int base = (rings - 1) * segs;
        for (int s = 1; s + 1 < segs; ++s) tris.emplace_back(base, base + s + 1, base + s);
    }
    a.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
    for (size_t f = 0; f < tris.size(); ++f) a.faces.row(static_cast<Eigen::Index>(f)) = tris[f].transpose();

    return a;
}

}  // namespace omnifit
