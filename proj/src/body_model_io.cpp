#include "omnifit/body_model_io.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace omnifit {

namespace {

template <typename Mat>
std::span<const double> span_of(const Mat& m) {
    return {m.data(), static_cast<size_t>(m.size())};
}

template <typename Mat>
Mat read_matrix(const Archive& a, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const auto data = a.f64(name, static_cast<int64_t>(rows * cols));
    Mat m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

}  // namespace

Archive body_model_to_archive(const BodyModelAssets& assets) {
    assets.validate();
    const int64_t V = assets.num_vertices(), J = assets.num_joints(), B = assets.num_betas(),
                  E = assets.num_expressions(), F = assets.num_faces();
    Archive a("body_model");
    a.meta()["dims"] = {{"V", V}, {"J", J}, {"B_shape", B}, {"B_expr", E}, {"F", F}};
    a.add_f64("template", {V, 3}, span_of(assets.template_vertices));
    a.add_f64("shape_dirs", {V, 3, B}, span_of(assets.shape_dirs));
    a.add_f64("pose_dirs", {V, 3, 9 * (J - 1)}, span_of(assets.pose_dirs));
    a.add_f64("expr_dirs", {V, 3, E}, span_of(assets.expr_dirs));
    a.add_f64("joint_regressor", {J, V}, span_of(assets.joint_regressor));
    a.add_f64("skin_weights", {V, J}, span_of(assets.skin_weights));
    a.add_i32("parents", {J}, assets.parents);
    a.add_i32("faces", {F, 3}, {assets.faces.data(), static_cast<size_t>(assets.faces.size())});
    if (!assets.joint_regions.empty()) {
        std::vector<int32_t> regions;
        for (Region r : assets.joint_regions) regions.push_back(static_cast<int32_t>(r));
        a.add_i32("joint_regions", {J}, regions);
    }
    return a;
}

BodyModelAssets body_model_from_archive(const Archive& a) {
    if (a.kind() != "body_model") throw std::runtime_error("archive kind is '" + a.kind() + "', expected body_model");
    const auto& dims = a.meta().at("dims");
    const Eigen::Index V = dims.at("V").get<Eigen::Index>(), J = dims.at("J").get<Eigen::Index>(),
                       B = dims.at("B_shape").get<Eigen::Index>(), E = dims.at("B_expr").get<Eigen::Index>(),
                       F = dims.at("F").get<Eigen::Index>();
    if (V <= 0 || J <= 0 || B < 0 || E < 0 || F < 0) throw InvariantError("body model header has invalid dims");

    BodyModelAssets m;
    m.template_vertices = read_matrix<Points>(a, "template", V, 3);
    m.shape_dirs = read_matrix<RowMatrixXd>(a, "shape_dirs", 3 * V, B);
    m.pose_dirs = read_matrix<RowMatrixXd>(a, "pose_dirs", 3 * V, 9 * (J - 1));
    m.expr_dirs = read_matrix<RowMatrixXd>(a, "expr_dirs", 3 * V, E);
    m.joint_regressor = read_matrix<RowMatrixXd>(a, "joint_regressor", J, V);
    m.skin_weights = read_matrix<RowMatrixXd>(a, "skin_weights", V, J);
    m.parents = a.i32("parents", J);
    const auto faces = a.i32("faces", 3 * F);
    m.faces.resize(F, 3);
    std::copy(faces.begin(), faces.end(), m.faces.data());
    if (a.has("joint_regions")) {
        for (int32_t r : a.i32("joint_regions", J)) {
            if (r < 0 || r > 2) throw InvariantError("joint_regions entry " + std::to_string(r) + " out of range");
            m.joint_regions.push_back(static_cast<Region>(r));
        }
    }
    m.validate();
    // Rows stored in single precision upstream sum to one only within ~1e-7.
    for (Eigen::Index v = 0; v < V; ++v) {
        const double s = m.skin_weights.row(v).sum();
        if (std::abs(s - 1.0) > 1e-12) m.skin_weights.row(v) /= s;
    }
    return m;
}

void save_body_model(const std::string& path, const BodyModelAssets& assets) {
    body_model_to_archive(assets).save(path);
}

BodyModelAssets load_body_model(const std::string& path) { return body_model_from_archive(Archive::load(path)); }

nlohmann::json params_to_json(const BodyParams& p) {
    nlohmann::json j;
    j["beta"] = std::vector<double>(p.beta.data(), p.beta.data() + p.beta.size());
    auto theta = nlohmann::json::array();
    for (Eigen::Index r = 0; r < p.theta.rows(); ++r) theta.push_back({p.theta(r, 0), p.theta(r, 1), p.theta(r, 2)});
    j["theta"] = std::move(theta);
    j["psi"] = std::vector<double>(p.psi.data(), p.psi.data() + p.psi.size());
    j["trans"] = {p.trans.x(), p.trans.y(), p.trans.z()};
    return j;
}

BodyParams params_from_json(const nlohmann::json& j) {
    const auto beta = j.at("beta").get<std::vector<double>>();
    const auto theta = j.at("theta").get<std::vector<std::vector<double>>>();
    const auto psi = j.at("psi").get<std::vector<double>>();
    const auto trans = j.at("trans").get<std::vector<double>>();
    if (trans.size() != 3) throw DimensionError("trans must have 3 entries");
    BodyParams p = BodyParams::zeros(static_cast<int>(beta.size()), static_cast<int>(theta.size()),
                                     static_cast<int>(psi.size()));
    for (size_t i = 0; i < beta.size(); ++i) p.beta[static_cast<Eigen::Index>(i)] = beta[i];
    for (size_t r = 0; r < theta.size(); ++r) {
        if (theta[r].size() != 3) throw DimensionError("theta row " + std::to_string(r) + " must have 3 entries");
        for (int c = 0; c < 3; ++c) p.theta(static_cast<Eigen::Index>(r), c) = theta[r][c];
    }
    for (size_t i = 0; i < psi.size(); ++i) p.psi[static_cast<Eigen::Index>(i)] = psi[i];
    p.trans = Eigen::Vector3d(trans[0], trans[1], trans[2]);
    if (!p.all_finite()) throw std::invalid_argument("parameter record contains non-finite values");
    return p;
}

void save_params(const std::string& path, const BodyParams& params) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write params '" + path + "'");
    out << params_to_json(params).dump(2) << "\n";
}

BodyParams load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read params '" + path + "'");
    try {
        const auto j = nlohmann::json::parse(in);
        return params_from_json(j.contains("params") ? j.at("params") : j);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed params '" + path + "': " + e.what());
    }
}

}  // namespace omnifit
