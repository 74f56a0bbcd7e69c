#pragma once

// Test-only reference computations. Each oracle takes a route independent of
// the implementation it is used to check.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "omnifit/body_model.hpp"
#include "omnifit/geometry.hpp"
#include "omnifit/landmark_spec.hpp"

namespace oracle {

using namespace omnifit;

inline Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& v) {
    const double angle = v.norm();
    if (angle == 0.0) return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, v / angle).toRotationMatrix();
}

// Uniform in [-s, s] per coefficient; translation uniform in [-0.2, 0.2].
inline BodyParams random_params(const BodyModelAssets& m, std::mt19937_64& rng, double theta_scale,
                                double beta_scale, double psi_scale) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto p = BodyParams::zeros(m);
    for (int i = 0; i < p.beta.size(); ++i) p.beta[i] = beta_scale * u(rng);
    for (int i = 0; i < p.theta.size(); ++i) p.theta.data()[i] = theta_scale * u(rng);
    for (int i = 0; i < p.psi.size(); ++i) p.psi[i] = psi_scale * u(rng);
    for (int i = 0; i < 3; ++i) p.trans[i] = 0.2 * u(rng);
    return p;
}

// Explicit loops over the V x 3 x K blendshape tensors.
inline Points shaped_template_naive(const BodyModelAssets& m, const BodyParams& p) {
    const int V = m.num_vertices(), J = m.num_joints();
    std::vector<double> feature;
    for (int j = 1; j < J; ++j) {
        const Eigen::Matrix3d r = rotation_from_axis_angle(p.theta.row(j).transpose());
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) feature.push_back(r(a, b) - (a == b ? 1.0 : 0.0));
    }
    Points out(V, 3);
    for (int v = 0; v < V; ++v) {
        for (int d = 0; d < 3; ++d) {
            double acc = m.template_vertices(v, d);
            for (int b = 0; b < m.num_betas(); ++b) acc += m.shape_dirs(3 * v + d, b) * p.beta[b];
            for (int e = 0; e < m.num_expressions(); ++e) acc += m.expr_dirs(3 * v + d, e) * p.psi[e];
            for (size_t k = 0; k < feature.size(); ++k) acc += m.pose_dirs(3 * v + d, static_cast<int>(k)) * feature[k];
            out(v, d) = acc;
        }
    }
    return out;
}

// Evenly spaced vertices; allocation derived from the labels actually picked.
inline LandmarkSpec small_spec(const BodyModelAssets& m, int count) {
    const auto labels = vertex_regions(m);
    LandmarkSpec spec;
    spec.name = "test";
    spec.allocation = {0, 0, 0};
    for (int i = 0; i < count; ++i) {
        const int v = static_cast<int>((static_cast<long>(i) * m.num_vertices()) / count);
        spec.entries.push_back({v, labels[v]});
        switch (labels[v]) {
            case Region::Head: ++spec.allocation.head; break;
            case Region::Body: ++spec.allocation.body; break;
            case Region::Hand: ++spec.allocation.hands; break;
        }
    }
    return spec;
}

// Loss through the public forward pass, independent of the objective code.
inline double landmark_loss(const BodyModelAssets& m, const BodyParams& p, const Points& target,
                            const LandmarkSpec& spec, const std::vector<bool>& mask) {
    const Points verts = lbs_forward(m, p).vertices;
    double loss = 0.0;
    for (int i = 0; i < spec.size(); ++i) {
        if (!mask[i]) continue;
        loss += (verts.row(spec.entries[i].vertex) - target.row(i)).squaredNorm();
    }
    return loss;
}

inline Eigen::VectorXd finite_difference_gradient(const BodyModelAssets& m, const BodyParams& p, const Points& target,
                                                  const LandmarkSpec& spec, const std::vector<bool>& mask, double h) {
    const Eigen::VectorXd x = p.flatten();
    Eigen::VectorXd g(x.size());
    BodyParams q = p;
    for (int i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        q.assign(xp);
        const double fp = landmark_loss(m, q, target, spec, mask);
        q.assign(xm);
        const double fm = landmark_loss(m, q, target, spec, mask);
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

// Per-coordinate |a - b| / max(|a|, |b|, 1e-6); the floor keeps coordinates
// whose true gradient vanishes from dividing finite-difference noise by zero.
inline double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double worst = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Axis-aligned cube [-h, h]^3 with outward winding.
inline TriMesh cube(double h = 1.0) {
    TriMesh m;
    m.vertices.resize(8, 3);
    for (int i = 0; i < 8; ++i) m.vertices.row(i) << (i & 1 ? h : -h), (i & 2 ? h : -h), (i & 4 ? h : -h);
    m.faces.resize(12, 3);
    m.faces << 0, 2, 1, 1, 2, 3,  // -z
        4, 5, 6, 5, 7, 6,         // +z
        0, 1, 4, 1, 5, 4,         // -y
        2, 6, 3, 3, 6, 7,         // +y
        0, 4, 2, 2, 4, 6,         // -x
        1, 3, 5, 3, 7, 5;         // +x
    return m;
}

// Barycentric containment with a plane-distance tolerance.
inline bool point_in_face(const TriMesh& m, int f, const Eigen::Vector3d& p, double tol) {
    const Eigen::Vector3d a = m.vertices.row(m.faces(f, 0)), b = m.vertices.row(m.faces(f, 1)),
                          c = m.vertices.row(m.faces(f, 2));
    const Eigen::Vector3d n = (b - a).cross(c - a);
    if (std::abs(n.normalized().dot(p - a)) > tol) return false;
    const double area = n.norm();
    const double wa = (c - b).cross(p - b).dot(n) / (area * area);
    const double wb = (a - c).cross(p - c).dot(n) / (area * area);
    const double wc = (b - a).cross(p - a).dot(n) / (area * area);
    return wa >= -tol && wb >= -tol && wc >= -tol;
}

}  // namespace oracle
