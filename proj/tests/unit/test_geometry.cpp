#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "omnifit/body_model_io.hpp"
#include "omnifit/dataset.hpp"
#include "omnifit/geometry.hpp"
#include "omnifit/mesh_io.hpp"
#include "oracles.hpp"

using namespace omnifit;
using oracle::cube;
using oracle::point_in_face;
namespace fs = std::filesystem;

namespace {

TriMesh unit_square(double z = 0.0) {
    TriMesh m;
    m.vertices.resize(4, 3);
    m.vertices << 0, 0, z, 1, 0, z, 1, 1, z, 0, 1, z;
    m.faces.resize(2, 3);
    m.faces << 0, 1, 2, 0, 2, 3;
    return m;
}

TriMesh uv_sphere(int rings, int segs) {
    TriMesh m;
    std::vector<Eigen::Vector3d> v{{0, 1, 0}};
    for (int r = 1; r < rings; ++r) {
        const double t = std::numbers::pi * r / rings;
        for (int s = 0; s < segs; ++s) {
            const double p = 2 * std::numbers::pi * s / segs;
            v.emplace_back(std::sin(t) * std::cos(p), std::cos(t), std::sin(t) * std::sin(p));
        }
    }
    v.emplace_back(0, -1, 0);
    std::vector<Eigen::Vector3i> f;
    auto idx = [&](int r, int s) { return 1 + (r - 1) * segs + (s % segs); };
    for (int s = 0; s < segs; ++s) f.emplace_back(0, idx(1, s + 1), idx(1, s));
    for (int r = 1; r + 1 < rings; ++r)
        for (int s = 0; s < segs; ++s) {
            f.emplace_back(idx(r, s), idx(r, s + 1), idx(r + 1, s));
            f.emplace_back(idx(r, s + 1), idx(r + 1, s + 1), idx(r + 1, s));
        }
    const int south = static_cast<int>(v.size()) - 1;
    for (int s = 0; s < segs; ++s) f.emplace_back(south, idx(rings - 1, s), idx(rings - 1, s + 1));
    m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
    for (size_t i = 0; i < v.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
    m.faces.resize(static_cast<Eigen::Index>(f.size()), 3);
    for (size_t i = 0; i < f.size(); ++i) m.faces.row(static_cast<Eigen::Index>(i)) = f[i].transpose();
    return m;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("omnifit_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("uniform square sampling has the analytic centroid") {
    const auto cloud = sample_surface(unit_square(), 100000, 1);
    const Eigen::RowVector3d mean = cloud.points.colwise().mean();
    CHECK(std::abs(mean.x() - 0.5) < 0.01);
    CHECK(std::abs(mean.y() - 0.5) < 0.01);
    CHECK(std::abs(mean.z()) < 1e-12);
    CHECK(cloud.scale_state == ScaleState::Metric);
    CHECK(cloud.completeness == Completeness::Full);
}

TEST_CASE("single sample lies on a face plane") {
    const auto m = cube(0.7);
    const auto s = sample_faces(m, 1, 3);
    REQUIRE(s.points.rows() == 1);
    CHECK(point_in_face(m, s.face[0], s.points.row(0).transpose(), 1e-9));
}

TEST_CASE("sampling is deterministic per seed") {
    const auto m = cube();
    CHECK(sample_surface(m, 500, 9).points == sample_surface(m, 500, 9).points);
    CHECK(sample_surface(m, 500, 9).points != sample_surface(m, 500, 10).points);
}

TEST_CASE("per-face counts follow area proportions") {
    // Six triangles with areas 1..6 along the x axis.
    TriMesh m;
    m.vertices.resize(18, 3);
    m.faces.resize(6, 3);
    for (int f = 0; f < 6; ++f) {
        const double x = 10.0 * f, side = std::sqrt(2.0 * (f + 1));
        m.vertices.row(3 * f) << x, 0, 0;
        m.vertices.row(3 * f + 1) << x + side, 0, 0;
        m.vertices.row(3 * f + 2) << x, side, 0;
        m.faces.row(f) << 3 * f, 3 * f + 1, 3 * f + 2;
    }
    const int n = 100000;
    const auto s = sample_faces(m, n, 21);
    std::vector<int> counts(6, 0);
    for (int f : s.face) ++counts[f];
    double chi2 = 0.0;
    for (int f = 0; f < 6; ++f) {
        const double expected = n * (f + 1) / 21.0;
        chi2 += (counts[f] - expected) * (counts[f] - expected) / expected;
    }
    // Upper 0.001 quantile of chi-square with 5 degrees of freedom.
    CHECK(chi2 < 20.515);
    for (int i = 0; i < n; i += 997) CHECK(point_in_face(m, s.face[i], s.points.row(i).transpose(), 1e-9));
}

TEST_CASE("sampling errors") {
    CHECK_THROWS(sample_surface(TriMesh{}, 10, 0));
    CHECK_THROWS_AS(sample_surface(unit_square(), 0, 0), std::invalid_argument);
}

TEST_CASE("normalize_unit") {
    PointCloud corners;
    corners.points = cube().vertices;
    SUBCASE("cube corners at +-1") {
        const auto n = normalize_unit(corners);
        CHECK((n.cloud.points.cwiseAbs().array() - 0.9).abs().maxCoeff() < 1e-15);
        CHECK(n.inv_scale == doctest::Approx(1.0 / 0.9).epsilon(1e-15));
        CHECK(n.cloud.scale_state == ScaleState::Normalized);
    }
    SUBCASE("already at +-0.9 and off-center") {
        PointCloud c;
        c.points = (cube(0.9).vertices.rowwise() + Eigen::RowVector3d(3, -2, 1)).eval();
        const auto n = normalize_unit(c);
        CHECK(n.inv_scale == doctest::Approx(1.0).epsilon(1e-15));
        CHECK((n.cloud.points - cube(0.9).vertices).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((n.center - Eigen::Vector3d(3, -2, 1)).norm() < 1e-12);
    }
    SUBCASE("random clouds round trip") {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> g(0.0, 2.0);
        for (int t = 0; t < 10; ++t) {
            PointCloud c;
            c.points.resize(300, 3);
            for (int i = 0; i < c.points.size(); ++i) c.points.data()[i] = g(rng) + 5.0 * t;
            const auto n = normalize_unit(c);
            CHECK(n.cloud.points.cwiseAbs().maxCoeff() <= 0.9 + 1e-15);
            const auto back = unnormalize(n.cloud, n.center, n.inv_scale);
            CHECK((back.points - c.points).cwiseAbs().maxCoeff() < 1e-9);
            // Scale restoration alone preserves extent.
            const auto restored = restore_scale(n.cloud, n.inv_scale);
            const Eigen::RowVector3d ext_in = c.points.colwise().maxCoeff() - c.points.colwise().minCoeff();
            const Eigen::RowVector3d ext_out = restored.points.colwise().maxCoeff() - restored.points.colwise().minCoeff();
            CHECK((ext_in - ext_out).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
    SUBCASE("errors") {
        PointCloud flat;
        flat.points = Points::Constant(5, 3, 2.0);
        CHECK_THROWS_AS(normalize_unit(flat), std::invalid_argument);
        auto n = normalize_unit(corners);
        CHECK_THROWS_AS(normalize_unit(n.cloud), std::invalid_argument);
    }
}

TEST_CASE("restore_scale") {
    PointCloud c;
    c.points = cube(0.5).vertices;
    c.scale_state = ScaleState::Normalized;
    CHECK(restore_scale(c, 1.0).points == c.points);
    const auto diag = [](const Points& p) { return (p.colwise().maxCoeff() - p.colwise().minCoeff()).norm(); };
    CHECK(diag(restore_scale(c, 2.0).points) == doctest::Approx(2.0 * diag(c.points)));
    CHECK(restore_scale(c, 2.0).scale_state == ScaleState::Metric);
    CHECK_THROWS_AS(restore_scale(c, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(restore_scale(c, -1.0), std::invalid_argument);
}

TEST_CASE("partial view of two parallel squares keeps only the near one") {
    TriMesh m = unit_square(0.0);
    const TriMesh far = unit_square(-1.0);
    m.vertices.conservativeResize(8, 3);
    m.vertices.bottomRows(4) = far.vertices;
    m.faces.conservativeResize(4, 3);
    m.faces.bottomRows(2) = far.faces.array() + 4;
    const auto r = simulate_partial_detailed(m, Eigen::Vector3d(0, 0, -1), 2000, 3, {128});
    CHECK(r.visible_faces == std::vector<bool>{true, true, false, false});
    CHECK(r.cloud.points.col(2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.cloud.completeness == Completeness::Partial);
}

TEST_CASE("closed cube keeps exactly the facing area") {
    const auto m = cube(1.0);
    const int R = 512;
    const double pixel = 2.0 / R;
    SUBCASE("axis view") {
        const auto r = simulate_partial_detailed(m, Eigen::Vector3d(0, 0, -1), 100, 1, {R});
        double area = 0.0;
        for (int f = 0; f < m.num_faces(); ++f)
            if (r.visible_faces[f]) area += m.face_area(f);
        CHECK(std::abs(area - 4.0) <= pixel * pixel);
        for (int f = 0; f < m.num_faces(); ++f)
            if (r.visible_faces[f]) CHECK(m.face_normal(f).z() == doctest::Approx(1.0));
    }
    SUBCASE("corner view sees three faces") {
        const auto r = simulate_partial_detailed(m, Eigen::Vector3d(-1, -1, -1), 100, 1, {R});
        double area = 0.0;
        for (int f = 0; f < m.num_faces(); ++f)
            if (r.visible_faces[f]) area += m.face_area(f);
        CHECK(area == doctest::Approx(12.0));
    }
}

TEST_CASE("convex sphere keeps front-facing area") {
    const auto m = uv_sphere(24, 48);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g;
    for (int t = 0; t < 4; ++t) {
        const Eigen::Vector3d d(g(rng), g(rng), g(rng));
        const auto r = simulate_partial_detailed(m, d, 3000, t, {256});
        double front = 0.0, total = 0.0;
        for (int f = 0; f < m.num_faces(); ++f) {
            if (!r.visible_faces[f]) continue;
            total += m.face_area(f);
            if (m.face_normal(f).dot(d) < 0.0) front += m.face_area(f);
        }
        CHECK(front / total >= 0.99);
        // Every sample sits on a face the z-buffer marked visible.
        int on_visible = 0;
        for (int i = 0; i < r.cloud.size(); ++i) {
            const Eigen::Vector3d p = r.cloud.points.row(i).transpose();
            for (int f = 0; f < m.num_faces(); ++f) {
                if (r.visible_faces[f] && point_in_face(m, f, p, 1e-9)) {
                    ++on_visible;
                    break;
                }
            }
        }
        CHECK(on_visible == r.cloud.size());
    }
}

TEST_CASE("partial errors") {
    CHECK_THROWS_AS(simulate_partial(unit_square(), Eigen::Vector3d::Zero(), 64, 10, 0), std::invalid_argument);
    // Edge-on single square: nothing wins a pixel.
    CHECK_THROWS_AS(simulate_partial(unit_square(), Eigen::Vector3d(1, 0, 0), 64, 10, 0), std::runtime_error);
}

TEST_CASE("augment") {
    const auto base = sample_surface(cube(), 8000, 2);
    SUBCASE("count range, isometry, determinism") {
        int below = 0, above = 0;
        for (uint64_t seed = 0; seed < 40; ++seed) {
            const auto a = augment(base, seed);
            CHECK(a.cloud.size() >= 5000);
            CHECK(a.cloud.size() <= 20000);
            below += a.cloud.size() < 8000;
            above += a.cloud.size() > 8000;
            CHECK((a.rotation.transpose() * a.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(a.rotation.determinant() == doctest::Approx(1.0));
            const double tilt = std::acos(std::clamp((a.rotation * Eigen::Vector3d::UnitY()).y(), -1.0, 1.0));
            CHECK(tilt <= 10.0 * std::numbers::pi / 180.0 + 1e-12);
        }
        CHECK(below > 0);
        CHECK(above > 0);
        const auto a = augment(base, 7), b = augment(base, 7);
        CHECK(a.cloud.points == b.cloud.points);
        CHECK(a.rotation == random_rotation(7));
    }
    SUBCASE("pairwise distances survive") {
        AugmentOptions o;
        o.min_points = o.max_points = 200;
        PointCloud small;
        small.points = base.points.topRows(200);
        const auto a = augment(small, 3, o);
        // Every output point is R times some input point.
        const Points unrotated = a.cloud.points * a.rotation;
        for (int i = 0; i < 200; i += 7) {
            const double best = (small.points.rowwise() - unrotated.row(i)).rowwise().norm().minCoeff();
            CHECK(best < 1e-12);
        }
        for (int i = 0; i < 50; ++i) {
            for (int j = i + 1; j < 50; ++j) {
                const double din = (unrotated.row(i) - unrotated.row(j)).norm();
                const double dout = (a.cloud.points.row(i) - a.cloud.points.row(j)).norm();
                CHECK(std::abs(din - dout) < 1e-6);
            }
        }
    }
    SUBCASE("full rotation option leaves the up axis anywhere") {
        AugmentOptions o;
        o.full_rotation = true;
        double lowest = 1.0;
        for (uint64_t s = 0; s < 50; ++s) lowest = std::min(lowest, (random_rotation(s, o) * Eigen::Vector3d::UnitY()).y());
        CHECK(lowest < std::cos(10.0 * std::numbers::pi / 180.0));
    }
}

}  // TEST_SUITE

TEST_SUITE("mesh-io") {

TEST_CASE("ply and obj round trips") {
    const auto dir = temp_dir("meshio");
    const auto m = cube(0.3);
    for (const char* name : {"m.ply", "m.obj"}) {
        const auto path = (dir / name).string();
        save_mesh(path, m);
        const auto back = load_mesh(path);
        CHECK(back.vertices == m.vertices);
        CHECK(back.faces == m.faces);
    }
    std::ostringstream ascii;
    write_ply(ascii, m.vertices, &m.faces, false);
    std::istringstream in(ascii.str());
    const auto back = read_ply_mesh(in);
    CHECK((back.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(back.faces == m.faces);
}

TEST_CASE("obj quads, slashes and negative indices") {
    std::istringstream in(
        "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1 4/1/1\nf -4 -2 -1\n");
    const auto m = read_obj_mesh(in);
    REQUIRE(m.num_faces() == 3);
    CHECK(m.faces.row(0) == Eigen::RowVector3i(0, 1, 2));
    CHECK(m.faces.row(1) == Eigen::RowVector3i(0, 2, 3));
    CHECK(m.faces.row(2) == Eigen::RowVector3i(0, 2, 3));
}

TEST_CASE("binary big endian ply with extra properties") {
    std::string header =
        "ply\nformat binary_big_endian 1.0\ncomment x\nelement vertex 3\nproperty float x\nproperty float y\n"
        "property float z\nproperty uchar red\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n";
    std::string body;
    auto put_be = [&](const void* p, size_t n) {
        const auto* b = static_cast<const char*>(p);
        for (size_t i = 0; i < n; ++i) body.push_back(b[n - 1 - i]);
    };
    const float coords[9] = {0, 0, 0, 2, 0, 0, 0, 3, 0};
    for (int v = 0; v < 3; ++v) {
        for (int d = 0; d < 3; ++d) put_be(&coords[3 * v + d], 4);
        body.push_back(static_cast<char>(200));
    }
    body.push_back(3);
    for (uint32_t i : {0u, 1u, 2u}) put_be(&i, 4);
    std::istringstream in(header + body);
    const auto m = read_ply_mesh(in);
    CHECK(m.vertices(1, 0) == 2.0);
    CHECK(m.vertices(2, 1) == 3.0);
    CHECK(m.face_area(0) == doctest::Approx(3.0));
}

TEST_CASE("point cloud files") {
    const auto dir = temp_dir("cloudio");
    PointCloud c = sample_surface(cube(), 50, 1);
    for (const char* name : {"c.ply", "c.xyz"}) {
        const auto path = (dir / name).string();
        save_point_cloud(path, c);
        CHECK(load_point_cloud(path).points == c.points);
    }
    std::ofstream(dir / "bad.xyz") << "1 2 3\n4 five 6\n";
    CHECK_THROWS_WITH_AS(load_point_cloud((dir / "bad.xyz").string()), doctest::Contains("line 2"), FormatError);
    std::ofstream(dir / "c.stl") << "solid";
    CHECK_THROWS_AS(load_point_cloud((dir / "c.stl").string()), FormatError);
    CHECK_THROWS(load_mesh((dir / "missing.ply").string()));
    std::ofstream(dir / "trunc.ply") << "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                                        "property float z\nend_header\n0 0 0\n1 1 1\n";
    CHECK_THROWS_AS(load_point_cloud((dir / "trunc.ply").string()), FormatError);
}

}  // TEST_SUITE

TEST_SUITE("dataset") {

TEST_CASE("manifest parsing") {
    SUBCASE("relative paths resolve against the manifest directory") {
        std::istringstream in(
            "{\"mesh_path\": \"a.ply\", \"params_path\": \"a.json\"}\n\n"
            "{\"mesh_path\": \"/abs/b.obj\", \"params_path\": \"b.json\", \"image_path\": \"b.png\"}\n");
        const auto e = parse_manifest(in, "/data");
        REQUIRE(e.size() == 2);
        CHECK(e[0].mesh_path == "/data/a.ply");
        CHECK_FALSE(e[0].image_path.has_value());
        CHECK(e[1].mesh_path == "/abs/b.obj");
        CHECK(*e[1].image_path == "/data/b.png");
    }
    SUBCASE("schema errors name the line") {
        std::istringstream bad_json("{\"mesh_path\": \"a.ply\"}\n{oops\n");
        CHECK_THROWS_WITH(parse_manifest(bad_json), doctest::Contains("line 2"));
        std::istringstream missing("{\"params_path\": \"a.json\"}\n");
        CHECK_THROWS_WITH(parse_manifest(missing), doctest::Contains("mesh_path"));
        std::istringstream unknown("{\"mesh_path\": \"a.ply\", \"extra\": 1}\n");
        CHECK_THROWS_WITH(parse_manifest(unknown), doctest::Contains("unknown field 'extra'"));
        std::istringstream wrong_type("{\"mesh_path\": 3}\n");
        CHECK_THROWS_WITH(parse_manifest(wrong_type), doctest::Contains("must be a string"));
    }
}

TEST_CASE("training stream") {
    const auto model = make_toy_model(200, 6, 1);
    const auto spec = oracle::small_spec(model, 30);
    auto records = make_toy_records(model, 5, 3);

    StreamOptions small;
    small.surface_points = 16;
    small.partial.resolution = 16;
    small.augment.min_points = small.augment.max_points = 16;

    SUBCASE("partial fraction extremes") {
        for (double frac : {0.0, 1.0}) {
            small.partial_fraction = frac;
            TrainingStream s(model, spec, std::make_shared<InMemoryDataset>(records), small, 1);
            for (int i = 0; i < 50; ++i)
                CHECK(s.next().cloud.completeness == (frac == 0.0 ? Completeness::Full : Completeness::Partial));
        }
    }
    SUBCASE("bernoulli share at one half") {
        small.partial_fraction = 0.5;
        TrainingStream s(model, spec, std::make_shared<InMemoryDataset>(records), small, 2);
        int partial = 0;
        const int n = 10000;
        for (int i = 0; i < n; ++i) partial += s.next().cloud.completeness == Completeness::Partial;
        CHECK(partial >= 0.47 * n);
        CHECK(partial <= 0.53 * n);
    }
    SUBCASE("targets follow the cloud rotation") {
        TrainingStream s(model, spec, std::make_shared<InMemoryDataset>(records), small, 3);
        for (int i = 0; i < 10; ++i) {
            const auto sample = s.next();
            const Points lm = extract_landmarks(lbs_forward(model, *records[sample.record].params).vertices, spec);
            const Points expected = (sample.rotation * lm.transpose()).transpose();
            CHECK((sample.targets - expected).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("deterministic per seed") {
        TrainingStream a(model, spec, std::make_shared<InMemoryDataset>(records), small, 4);
        TrainingStream b(model, spec, std::make_shared<InMemoryDataset>(records), small, 4);
        for (int i = 0; i < 12; ++i) {
            const auto x = a.next(), y = b.next();
            CHECK(x.cloud.points == y.cloud.points);
            CHECK(x.record == y.record);
        }
    }
    SUBCASE("records without params are skipped with one warning") {
        records[1].params.reset();
        records[1].missing_reason = "no params_path";
        std::vector<std::string> warnings;
        TrainingStream s(model, spec, std::make_shared<InMemoryDataset>(records), small, 5,
                         [&](const std::string& w) { warnings.push_back(w); });
        for (int i = 0; i < 40; ++i) CHECK(s.next().record != 1);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("record 1") != std::string::npos);
    }
    SUBCASE("manifest-backed dataset") {
        const auto dir = temp_dir("manifest");
        std::vector<ManifestEntry> entries;
        for (int i = 0; i < 3; ++i) {
            const auto mesh = (dir / ("m" + std::to_string(i) + ".ply")).string();
            save_mesh(mesh, records[i].mesh);
            std::string params;
            if (i != 2) {
                params = (dir / ("p" + std::to_string(i) + ".json")).string();
                save_params(params, *records[i].params);
            }
            entries.push_back({mesh, params, std::nullopt});
        }
        save_manifest((dir / "train.jsonl").string(), entries);
        auto data = std::make_shared<ManifestDataset>(ManifestDataset::from_file((dir / "train.jsonl").string()));
        std::vector<std::string> warnings;
        TrainingStream s(model, spec, data, small, 6, [&](const std::string& w) { warnings.push_back(w); });
        for (int i = 0; i < 10; ++i) CHECK(s.next().record != 2);
        CHECK(warnings.size() == 1);
    }
    SUBCASE("nothing usable") {
        for (auto& r : records) r.params.reset();
        TrainingStream s(model, spec, std::make_shared<InMemoryDataset>(records), small, 7, [](const std::string&) {});
        CHECK_THROWS_AS(s.next(), std::runtime_error);
    }
}

}  // TEST_SUITE
