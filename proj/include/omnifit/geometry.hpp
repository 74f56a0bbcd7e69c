#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "omnifit/types.hpp"

namespace omnifit {

enum class ScaleState { Metric, Normalized };
enum class Completeness { Full, Partial };

struct PointCloud {
    Points points;
    ScaleState scale_state = ScaleState::Metric;
    Completeness completeness = Completeness::Full;

    int size() const { return static_cast<int>(points.rows()); }
    // Throws InvariantError on an empty or non-finite cloud, or on a
    // Normalized cloud outside [-0.9, 0.9].
    void validate() const;
};

struct TriMesh {
    Points vertices;
    Faces faces;

    int num_vertices() const { return static_cast<int>(vertices.rows()); }
    int num_faces() const { return static_cast<int>(faces.rows()); }
    void validate() const;
    double face_area(int f) const;
    Eigen::Vector3d face_normal(int f) const;  // unit, from winding
};

// Drops faces whose area is at most min_area.
TriMesh remove_degenerate_faces(const TriMesh& mesh, double min_area = 1e-14);

struct SurfaceSamples {
    Points points;
    std::vector<int> face;  // source face of each sample
};

// Area-weighted uniform samples over the faces listed in `faces`
// (all faces when empty).
SurfaceSamples sample_faces(const TriMesh& mesh, int n, uint64_t seed, const std::vector<int>& faces = {});
PointCloud sample_surface(const TriMesh& mesh, int n, uint64_t seed);

struct Normalization {
    PointCloud cloud;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double inv_scale = 1.0;  // metric extent / 0.9
};

inline constexpr double kNormalizedExtent = 0.9;

// Centers on the bounding-box center and scales so max |coordinate| is 0.9.
Normalization normalize_unit(const PointCloud& cloud);
// Inverse of normalize_unit: x * inv_scale + center.
PointCloud unnormalize(const PointCloud& cloud, const Eigen::Vector3d& center, double inv_scale);
// Multiplies a Normalized cloud by s > 0 and marks it Metric.
PointCloud restore_scale(const PointCloud& cloud, double s);
// Center of the axis-aligned bounding box.
Eigen::Vector3d bbox_center(const Points& points);

struct PartialOptions {
    int resolution = 512;
};

struct PartialResult {
    PointCloud cloud;
    std::vector<bool> visible_faces;  // faces that won at least one depth test
    std::vector<int> sample_face;
};

// Orthographic z-buffer along view_dir (the camera looks along it; smaller
// p . view_dir is nearer), then n samples on the faces that won a pixel.
PartialResult simulate_partial_detailed(const TriMesh& mesh, const Eigen::Vector3d& view_dir, int n, uint64_t seed,
                                        const PartialOptions& options = {});
PointCloud simulate_partial(const TriMesh& mesh, const Eigen::Vector3d& view_dir, int resolution, int n,
                            uint64_t seed);

struct AugmentOptions {
    int min_points = 5000;
    int max_points = 20000;
    double max_tilt_degrees = 10.0;
    bool full_rotation = false;  // uniform SO(3) instead of yaw + tilt
};

struct AugmentResult {
    PointCloud cloud;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // applied about the origin
};

AugmentResult augment(const PointCloud& cloud, uint64_t seed, const AugmentOptions& options = {});

// Rotation drawn the way augment draws it.
Eigen::Matrix3d random_rotation(uint64_t seed, const AugmentOptions& options = {});

}  // namespace omnifit
