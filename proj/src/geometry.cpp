#include "omnifit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Geometry>

namespace omnifit {

void PointCloud::validate() const {
    if (points.rows() == 0) throw InvariantError("point cloud is empty");
    if (!points.allFinite()) throw InvariantError("point cloud has non-finite coordinates");
    if (scale_state == ScaleState::Normalized && points.cwiseAbs().maxCoeff() > kNormalizedExtent + 1e-6) {
        throw InvariantError("normalized cloud exceeds [-0.9, 0.9]");
    }
}

void TriMesh::validate() const {
    if (vertices.rows() == 0 || faces.rows() == 0) throw InvariantError("mesh has no vertices or no faces");
    if (!vertices.allFinite()) throw InvariantError("mesh has non-finite vertices");
    if (faces.minCoeff() < 0 || faces.maxCoeff() >= vertices.rows()) {
        throw InvariantError("mesh face index outside [0, " + std::to_string(vertices.rows()) + ")");
    }
}

double TriMesh::face_area(int f) const {
    const Eigen::Vector3d a = vertices.row(faces(f, 0)), b = vertices.row(faces(f, 1)), c = vertices.row(faces(f, 2));
    return 0.5 * (b - a).cross(c - a).norm();
}

Eigen::Vector3d TriMesh::face_normal(int f) const {
    const Eigen::Vector3d a = vertices.row(faces(f, 0)), b = vertices.row(faces(f, 1)), c = vertices.row(faces(f, 2));
    return (b - a).cross(c - a).normalized();
}

TriMesh remove_degenerate_faces(const TriMesh& mesh, double min_area) {
    mesh.validate();
    std::vector<int> keep;
    for (int f = 0; f < mesh.num_faces(); ++f)
        if (mesh.face_area(f) > min_area) keep.push_back(f);
    TriMesh out;
    out.vertices = mesh.vertices;
    out.faces.resize(static_cast<Eigen::Index>(keep.size()), 3);
    for (size_t i = 0; i < keep.size(); ++i) out.faces.row(static_cast<Eigen::Index>(i)) = mesh.faces.row(keep[i]);
    return out;
}

SurfaceSamples sample_faces(const TriMesh& mesh, int n, uint64_t seed, const std::vector<int>& faces) {
    if (n < 1) throw std::invalid_argument("sample count must be >= 1");
    mesh.validate();
    std::vector<int> ids = faces;
    if (ids.empty()) {
        ids.resize(static_cast<size_t>(mesh.num_faces()));
        std::iota(ids.begin(), ids.end(), 0);
    }
    std::vector<double> cumulative(ids.size());
    double total = 0.0;
    for (size_t i = 0; i < ids.size(); ++i) {
        total += mesh.face_area(ids[i]);
        cumulative[i] = total;
    }
    if (!(total > 0.0)) throw std::invalid_argument("mesh has zero surface area");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SurfaceSamples out;
    out.points.resize(n, 3);
    out.face.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double pick = unit(rng) * total;
        size_t k = static_cast<size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
        k = std::min(k, ids.size() - 1);
        const int f = ids[k];
        const double r1 = std::sqrt(unit(rng)), r2 = unit(rng);
        const Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0)), b = mesh.vertices.row(mesh.faces(f, 1)),
                                 c = mesh.vertices.row(mesh.faces(f, 2));
        out.points.row(i) = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
        out.face[static_cast<size_t>(i)] = f;
    }
    return out;
}

PointCloud sample_surface(const TriMesh& mesh, int n, uint64_t seed) {
    PointCloud cloud;
    cloud.points = sample_faces(mesh, n, seed).points;
    return cloud;
}

Eigen::Vector3d bbox_center(const Points& points) {
    if (points.rows() == 0) throw std::invalid_argument("bbox of an empty point set");
    return 0.5 * (points.colwise().minCoeff() + points.colwise().maxCoeff()).transpose();
}

Normalization normalize_unit(const PointCloud& cloud) {
    cloud.validate();
    if (cloud.scale_state != ScaleState::Metric) throw std::invalid_argument("cloud is already normalized");
    Normalization out;
    out.center = bbox_center(cloud.points);
    const Points centered = cloud.points.rowwise() - out.center.transpose();
    const double extent = centered.cwiseAbs().maxCoeff();
    if (!(extent > 0.0)) throw std::invalid_argument("cannot normalize a zero-extent cloud");
    out.inv_scale = extent / kNormalizedExtent;
    out.cloud.points = centered * (kNormalizedExtent / extent);
    out.cloud.scale_state = ScaleState::Normalized;
    out.cloud.completeness = cloud.completeness;
    return out;
}

PointCloud unnormalize(const PointCloud& cloud, const Eigen::Vector3d& center, double inv_scale) {
    PointCloud out = cloud;
    out.points = (cloud.points * inv_scale).rowwise() + center.transpose();
    out.scale_state = ScaleState::Metric;
    return out;
}

PointCloud restore_scale(const PointCloud& cloud, double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("scale must be positive and finite");
    PointCloud out = cloud;
    out.points = cloud.points * s;
    out.scale_state = ScaleState::Metric;
    return out;
}

PartialResult simulate_partial_detailed(const TriMesh& mesh, const Eigen::Vector3d& view_dir, int n, uint64_t seed,
                                        const PartialOptions& options) {
    mesh.validate();
    if (!(view_dir.norm() > 0.0) || !view_dir.allFinite()) throw std::invalid_argument("view direction must be non-zero");
    if (options.resolution < 1) throw std::invalid_argument("resolution must be >= 1");
    const Eigen::Vector3d d = view_dir.normalized();
    const Eigen::Vector3d helper = std::abs(d.y()) < 0.9 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitX();
    const Eigen::Vector3d u = helper.cross(d).normalized();
    const Eigen::Vector3d v = d.cross(u);

    const int V = mesh.num_vertices();
    Eigen::MatrixX3d proj(V, 3);  // (u, v, depth)
    for (int i = 0; i < V; ++i) {
        const Eigen::Vector3d p = mesh.vertices.row(i).transpose();
        proj.row(i) << p.dot(u), p.dot(v), p.dot(d);
    }
    const double u0 = proj.col(0).minCoeff(), v0 = proj.col(1).minCoeff();
    const double span = std::max(proj.col(0).maxCoeff() - u0, proj.col(1).maxCoeff() - v0);
    const int R = options.resolution;
    const double pixel = span > 0.0 ? span / R : 1.0;

    std::vector<double> depth(static_cast<size_t>(R) * R, std::numeric_limits<double>::infinity());
    std::vector<int> owner(static_cast<size_t>(R) * R, -1);
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const Eigen::Vector3d a = proj.row(mesh.faces(f, 0)), b = proj.row(mesh.faces(f, 1)),
                              c = proj.row(mesh.faces(f, 2));
        const double area2 = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
        const double edge_scale = std::max({(b - a).head<2>().squaredNorm(), (c - a).head<2>().squaredNorm(),
                                            (c - b).head<2>().squaredNorm()});
        if (std::abs(area2) <= 1e-12 * edge_scale || edge_scale == 0.0) continue;  // edge-on
        const double umin = std::min({a.x(), b.x(), c.x()}), umax = std::max({a.x(), b.x(), c.x()});
        const double vmin = std::min({a.y(), b.y(), c.y()}), vmax = std::max({a.y(), b.y(), c.y()});
        const int i0 = std::max(0, static_cast<int>(std::floor((umin - u0) / pixel - 0.5)));
        const int i1 = std::min(R - 1, static_cast<int>(std::ceil((umax - u0) / pixel - 0.5)));
        const int j0 = std::max(0, static_cast<int>(std::floor((vmin - v0) / pixel - 0.5)));
        const int j1 = std::min(R - 1, static_cast<int>(std::ceil((vmax - v0) / pixel - 0.5)));
        for (int j = j0; j <= j1; ++j) {
            const double pv = v0 + (j + 0.5) * pixel;
            for (int i = i0; i <= i1; ++i) {
                const double pu = u0 + (i + 0.5) * pixel;
                const double w0 = ((b.x() - pu) * (c.y() - pv) - (c.x() - pu) * (b.y() - pv)) / area2;
                const double w1 = ((c.x() - pu) * (a.y() - pv) - (a.x() - pu) * (c.y() - pv)) / area2;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                const double z = w0 * a.z() + w1 * b.z() + w2 * c.z();
                const size_t k = static_cast<size_t>(j) * R + i;
                if (z < depth[k]) {
                    depth[k] = z;
                    owner[k] = f;
                }
            }
        }
    }

    PartialResult out;
    out.visible_faces.assign(static_cast<size_t>(mesh.num_faces()), false);
    for (int f : owner)
        if (f >= 0) out.visible_faces[static_cast<size_t>(f)] = true;
    std::vector<int> kept;
    for (int f = 0; f < mesh.num_faces(); ++f)
        if (out.visible_faces[static_cast<size_t>(f)] && mesh.face_area(f) > 0.0) kept.push_back(f);
    if (kept.empty()) throw std::runtime_error("no faces visible from the requested view");
    auto samples = sample_faces(mesh, n, seed, kept);
    out.cloud.points = std::move(samples.points);
    out.cloud.completeness = Completeness::Partial;
    out.sample_face = std::move(samples.face);
    return out;
}

PointCloud simulate_partial(const TriMesh& mesh, const Eigen::Vector3d& view_dir, int resolution, int n,
                            uint64_t seed) {
    return simulate_partial_detailed(mesh, view_dir, n, seed, PartialOptions{resolution}).cloud;
}

namespace {

Eigen::Matrix3d draw_rotation(std::mt19937_64& rng, const AugmentOptions& options) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (options.full_rotation) {
        std::normal_distribution<double> normal;
        Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
        return q.normalized().toRotationMatrix();
    }
    const double yaw = 2.0 * std::numbers::pi * unit(rng);
    const double axis_angle = 2.0 * std::numbers::pi * unit(rng);
    const double tilt = options.max_tilt_degrees * std::numbers::pi / 180.0 * unit(rng);
    const Eigen::Vector3d axis(std::cos(axis_angle), 0.0, std::sin(axis_angle));
    return (Eigen::AngleAxisd(tilt, axis) * Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY())).toRotationMatrix();
}

}  // namespace

Eigen::Matrix3d random_rotation(uint64_t seed, const AugmentOptions& options) {
    std::mt19937_64 rng(seed);
    return draw_rotation(rng, options);
}

AugmentResult augment(const PointCloud& cloud, uint64_t seed, const AugmentOptions& options) {
    cloud.validate();
    if (options.min_points < 1 || options.max_points < options.min_points) {
        throw std::invalid_argument("augment needs 1 <= min_points <= max_points");
    }
    std::mt19937_64 rng(seed);
    AugmentResult out;
    out.rotation = draw_rotation(rng, options);
    const int count = std::uniform_int_distribution<int>(options.min_points, options.max_points)(rng);
    const int N = cloud.size();

    std::vector<int> pick;
    pick.reserve(static_cast<size_t>(count));
    if (count <= N) {
        std::vector<int> order(static_cast<size_t>(N));
        std::iota(order.begin(), order.end(), 0);
        for (int i = 0; i < count; ++i) {
            const int j = std::uniform_int_distribution<int>(i, N - 1)(rng);
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
            pick.push_back(order[static_cast<size_t>(i)]);
        }
    } else {
        for (int i = 0; i < N; ++i) pick.push_back(i);
        std::uniform_int_distribution<int> any(0, N - 1);
        while (static_cast<int>(pick.size()) < count) pick.push_back(any(rng));
    }
    out.cloud.scale_state = cloud.scale_state;
    out.cloud.completeness = cloud.completeness;
    out.cloud.points.resize(count, 3);
    for (int i = 0; i < count; ++i) {
        out.cloud.points.row(i) = (out.rotation * cloud.points.row(pick[static_cast<size_t>(i)]).transpose()).transpose();
    }
    return out;
}

}  // namespace omnifit
