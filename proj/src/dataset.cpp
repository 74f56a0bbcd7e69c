#include "omnifit/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "omnifit/body_model_io.hpp"
#include "omnifit/mesh_io.hpp"

namespace omnifit {

namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& base, const std::string& p) {
    if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::string& base_dir) {
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "manifest line " + std::to_string(lineno) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + "invalid JSON (" + e.what() + ")");
        }
        if (!j.is_object()) throw std::runtime_error(where + "expected an object");
        for (const auto& [key, value] : j.items()) {
            if (key != "mesh_path" && key != "params_path" && key != "image_path") {
                throw std::runtime_error(where + "unknown field '" + key + "'");
            }
            if (!value.is_string() && !(key != "mesh_path" && value.is_null())) {
                throw std::runtime_error(where + "field '" + key + "' must be a string");
            }
        }
        if (!j.contains("mesh_path")) throw std::runtime_error(where + "missing required field 'mesh_path'");
        ManifestEntry e;
        e.mesh_path = resolve(base_dir, j["mesh_path"].get<std::string>());
        if (j.contains("params_path") && j["params_path"].is_string()) {
            e.params_path = resolve(base_dir, j["params_path"].get<std::string>());
        }
        if (j.contains("image_path") && j["image_path"].is_string()) {
            e.image_path = resolve(base_dir, j["image_path"].get<std::string>());
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest '" + path + "'");
    try {
        return parse_manifest(in, fs::path(path).parent_path().string());
    } catch (const std::runtime_error& e) {
        throw std::runtime_error("'" + path + "': " + e.what());
    }
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
    for (const auto& e : entries) {
        nlohmann::json j{{"mesh_path", e.mesh_path}, {"params_path", e.params_path}};
        if (e.image_path) j["image_path"] = *e.image_path;
        out << j.dump() << "\n";
    }
}

DatasetRecord ManifestDataset::get(size_t index) const {
    const auto& e = entries_.at(index);
    DatasetRecord r;
    r.mesh = load_mesh(e.mesh_path);
    r.image_path = e.image_path;
    if (e.params_path.empty()) {
        r.missing_reason = "no params_path";
    } else if (!fs::exists(e.params_path)) {
        r.missing_reason = "params file '" + e.params_path + "' not found";
    } else {
        try {
            r.params = load_params(e.params_path);
        } catch (const std::exception& ex) {
            r.missing_reason = std::string("unreadable params: ") + ex.what();
        }
    }
    return r;
}

std::string ManifestDataset::describe(size_t index) const {
    return "record " + std::to_string(index) + " (" + entries_.at(index).mesh_path + ")";
}

TriMesh posed_mesh(const BodyModelAssets& assets, const BodyParams& params) {
    return TriMesh{lbs_forward(assets, params).vertices, assets.faces};
}

BodyParams sample_toy_params(const BodyModelAssets& assets, std::mt19937_64& rng, const ToyParamRanges& ranges) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto p = BodyParams::zeros(assets);
    for (int i = 0; i < p.beta.size(); ++i) p.beta[i] = ranges.beta * u(rng);
    for (int j = 1; j < p.theta.rows(); ++j)
        for (int c = 0; c < 3; ++c) p.theta(j, c) = ranges.theta * u(rng);
    for (int i = 0; i < p.psi.size(); ++i) p.psi[i] = ranges.psi * u(rng);
    return p;
}

std::vector<DatasetRecord> make_toy_records(const BodyModelAssets& assets, int count, uint64_t seed,
                                            const ToyParamRanges& ranges) {
    std::mt19937_64 rng(seed);
    std::vector<DatasetRecord> out;
    for (int i = 0; i < count; ++i) {
        DatasetRecord r;
        r.params = sample_toy_params(assets, rng, ranges);
        r.mesh = posed_mesh(assets, *r.params);
        out.push_back(std::move(r));
    }
    return out;
}

ScaledBody make_allometric_body(const BodyModelAssets& assets, double scale, std::mt19937_64& rng,
                                const AllometricOptions& options) {
    if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
    ToyParamRanges ranges;
    ranges.beta = options.beta_noise;
    ranges.theta = options.theta;
    ranges.psi = options.psi;
    ScaledBody b;
    b.params = sample_toy_params(assets, rng, ranges);
    if (b.params.beta.size() > 0) b.params.beta[0] = 0.0;
    if (b.params.beta.size() > 1) b.params.beta[1] = options.girth_per_doubling * std::log2(scale);
    b.scale = scale;
    b.mesh = posed_mesh(assets, b.params);
    b.mesh.vertices *= scale;
    return b;
}

ScaledBody sample_allometric_body(const BodyModelAssets& assets, std::mt19937_64& rng,
                                  const AllometricOptions& options) {
    if (!(options.min_scale > 0.0 && options.max_scale >= options.min_scale)) {
        throw std::invalid_argument("allometric scale range must satisfy 0 < min <= max");
    }
    std::uniform_real_distribution<double> u(std::log(options.min_scale), std::log(options.max_scale));
    const double s = std::exp(u(rng));
    return make_allometric_body(assets, s, rng, options);
}

void warn_to_stderr(const std::string& message) { std::cerr << "warning: " << message << "\n"; }

TrainingStream::TrainingStream(const BodyModelAssets& assets, const LandmarkSpec& spec,
                               std::shared_ptr<const DatasetSource> data, StreamOptions options, uint64_t seed,
                               WarningSink warn)
    : assets_(assets), spec_(spec), data_(std::move(data)), options_(options), warn_(std::move(warn)), rng_(seed) {
    if (!data_ || data_->size() == 0) throw std::invalid_argument("training stream needs a non-empty dataset");
    if (!(options_.partial_fraction >= 0.0 && options_.partial_fraction <= 1.0)) {
        throw std::invalid_argument("partial_fraction must lie in [0, 1]");
    }
    if (options_.surface_points < 1) throw std::invalid_argument("surface_points must be >= 1");
    warned_.assign(data_->size(), false);
    usable_.assign(data_->size(), true);
}

size_t TrainingStream::next_record() {
    if (cursor_ >= order_.size()) {
        order_.clear();
        for (size_t i = 0; i < data_->size(); ++i)
            if (usable_[i]) order_.push_back(i);
        if (order_.empty()) throw std::runtime_error("no dataset record carries ground-truth params");
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }
    return order_[cursor_++];
}

TrainingSample TrainingStream::next() {
    for (;;) {
        const size_t index = next_record();
        DatasetRecord rec = data_->get(index);
        if (!rec.params) {
            usable_[index] = false;
            if (!warned_[index]) {
                warned_[index] = true;
                warn_("skipping " + data_->describe(index) + ": " +
                      (rec.missing_reason.empty() ? std::string("missing ground-truth params") : rec.missing_reason));
            }
            continue;
        }
        const bool partial = std::bernoulli_distribution(options_.partial_fraction)(rng_);
        const uint64_t sample_seed = rng_(), augment_seed = rng_();
        const double yaw = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng_);

        PointCloud cloud;
        if (partial) {
            const Eigen::Vector3d view =
                options_.random_view ? Eigen::Vector3d(std::sin(yaw), 0.0, -std::cos(yaw)) : Eigen::Vector3d(0, 0, -1);
            cloud = simulate_partial_detailed(rec.mesh, view, options_.surface_points, sample_seed, options_.partial).cloud;
        } else {
            cloud = sample_surface(rec.mesh, options_.surface_points, sample_seed);
        }
        auto aug = augment(cloud, augment_seed, options_.augment);

        TrainingSample s;
        s.cloud = std::move(aug.cloud);
        s.rotation = aug.rotation;
        s.targets = extract_landmarks(lbs_forward(assets_, *rec.params).vertices, spec_) * aug.rotation.transpose();
        s.image_path = rec.image_path;
        s.record = index;
        return s;
    }
}

std::vector<TrainingSample> TrainingStream::next_batch(int batch_size) {
    std::vector<TrainingSample> out;
    out.reserve(static_cast<size_t>(std::max(batch_size, 0)));
    for (int i = 0; i < batch_size; ++i) out.push_back(next());
    return out;
}

}  // namespace omnifit
