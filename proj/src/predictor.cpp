#include "omnifit/predictor.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "omnifit/geometry.hpp"

namespace omnifit {

PredictorConfig PredictorConfig::desk_scale(int num_landmarks) {
    PredictorConfig c;
    c.num_landmarks = num_landmarks;
    return c;
}

PredictorConfig PredictorConfig::paper_scale(int num_landmarks) {
    PredictorConfig c;
    c.num_landmarks = num_landmarks;
    c.feature_dim = 384;
    c.attention_heads = 6;
    c.encoder_blocks = 16;
    c.decoder_blocks = 24;
    c.num_patches = 256;
    c.patch_neighbors = 32;
    c.encoder_mlp_hidden = 1536;
    c.mlp_hidden_dims = {384, 384};
    c.tokenizer_hidden = 128;
    return c;
}

void PredictorConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("predictor config: " + what);
    };
    need(num_landmarks >= 1, "num_landmarks must be >= 1");
    need(feature_dim >= 1 && attention_heads >= 1, "feature_dim and attention_heads must be >= 1");
    need(feature_dim % attention_heads == 0, "feature_dim must be divisible by attention_heads");
    need(encoder_blocks >= 0, "encoder_blocks must be >= 0");
    need(decoder_blocks >= 1, "decoder_blocks must be >= 1");
    need(num_patches >= 1 && patch_neighbors >= 1, "num_patches and patch_neighbors must be >= 1");
    need(tokenizer_hidden >= 1 && encoder_mlp_hidden >= 1, "hidden sizes must be >= 1");
    for (int h : mlp_hidden_dims) need(h >= 1, "mlp_hidden_dims entries must be >= 1");
}

nn::PredictorDims PredictorConfig::dims() const {
    return {num_landmarks, feature_dim, encoder_blocks, decoder_blocks, attention_heads, tokenizer_hidden,
            encoder_mlp_hidden, mlp_hidden_dims};
}

nlohmann::json PredictorConfig::to_json() const {
    return {{"num_landmarks", num_landmarks},     {"feature_dim", feature_dim},
            {"encoder_blocks", encoder_blocks},   {"decoder_blocks", decoder_blocks},
            {"num_patches", num_patches},         {"patch_neighbors", patch_neighbors},
            {"attention_heads", attention_heads}, {"mlp_hidden_dims", mlp_hidden_dims},
            {"tokenizer_hidden", tokenizer_hidden}, {"encoder_mlp_hidden", encoder_mlp_hidden},
            {"grouping_seed", grouping_seed}};
}

PredictorConfig PredictorConfig::from_json(const nlohmann::json& j) {
    PredictorConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    for (const auto& [key, value] : j.items()) {
        static const char* known[] = {"num_landmarks",   "feature_dim",      "encoder_blocks",     "decoder_blocks",
                                      "num_patches",     "patch_neighbors",  "attention_heads",    "mlp_hidden_dims",
                                      "tokenizer_hidden", "encoder_mlp_hidden", "grouping_seed"};
        if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; })) {
            throw std::invalid_argument("predictor config: unknown field '" + key + "'");
        }
    }
    get("num_landmarks", c.num_landmarks);
    get("feature_dim", c.feature_dim);
    get("encoder_blocks", c.encoder_blocks);
    get("decoder_blocks", c.decoder_blocks);
    get("num_patches", c.num_patches);
    get("patch_neighbors", c.patch_neighbors);
    get("attention_heads", c.attention_heads);
    get("mlp_hidden_dims", c.mlp_hidden_dims);
    get("tokenizer_hidden", c.tokenizer_hidden);
    get("encoder_mlp_hidden", c.encoder_mlp_hidden);
    get("grouping_seed", c.grouping_seed);
    c.validate();
    return c;
}

PatchGrouping group_points(const Points& points, int num_patches, int neighbors, uint64_t seed) {
    const int n = static_cast<int>(points.rows());
    if (num_patches < 1 || neighbors < 1) throw std::invalid_argument("num_patches and neighbors must be >= 1");
    if (n < num_patches) {
        throw std::invalid_argument("point cloud has " + std::to_string(n) + " points but the tokenizer needs at least " +
                                    std::to_string(num_patches) + "; upsample the input");
    }
    if (!points.allFinite()) throw std::invalid_argument("point cloud contains non-finite coordinates");
    PatchGrouping out;
    out.k = std::min(neighbors, n);
    std::mt19937_64 rng(seed);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    int current = order[0];
    std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    for (int c = 0; c < num_patches; ++c) {
        out.center_index.push_back(current);
        const Eigen::RowVector3d p = points.row(current);
        int best = 0;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            const double d = (points.row(i) - p).squaredNorm();
            if (d < dist[i]) dist[i] = d;
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        current = best;
    }
    out.centers.resize(num_patches, 3);
    out.neighbors.resize(static_cast<size_t>(num_patches) * out.k);
    std::vector<std::pair<double, int>> d(static_cast<size_t>(n));
    for (int c = 0; c < num_patches; ++c) {
        const Eigen::RowVector3d p = points.row(out.center_index[c]);
        out.centers.row(c) = p;
        for (int i = 0; i < n; ++i) d[i] = {(points.row(i) - p).squaredNorm(), i};
        std::partial_sort(d.begin(), d.begin() + out.k, d.end());
        for (int j = 0; j < out.k; ++j) out.neighbors[static_cast<size_t>(c) * out.k + j] = d[j].second;
    }
    out.relative.resize(static_cast<Eigen::Index>(out.neighbors.size()), 3);
    for (size_t r = 0; r < out.neighbors.size(); ++r) {
        out.relative.row(static_cast<Eigen::Index>(r)) =
            points.row(out.neighbors[r]) - out.centers.row(static_cast<Eigen::Index>(r) / out.k);
    }
    return out;
}

namespace {

FeatureMatrix to_float(const Points& p) { return p.cast<float>(); }

template <class Net>
std::vector<std::pair<std::string, const nn::Param<float>*>> param_list(const Net& net) {
    std::vector<std::pair<std::string, const nn::Param<float>*>> out;
    const_cast<Net&>(net).visit([&](const std::string& n, nn::Param<float>& p) { out.emplace_back(n, &p); });
    return out;
}

}  // namespace

std::string fingerprint_params(const std::vector<std::pair<std::string, const nn::Param<float>*>>& params) {
    std::vector<uint8_t> buf;
    for (const auto& [name, p] : params) {
        buf.insert(buf.end(), name.begin(), name.end());
        buf.push_back(0);
        const int64_t shape[2] = {p->value.rows(), p->value.cols()};
        const auto* sb = reinterpret_cast<const uint8_t*>(shape);
        buf.insert(buf.end(), sb, sb + sizeof(shape));
        const auto* db = reinterpret_cast<const uint8_t*>(p->value.data());
        buf.insert(buf.end(), db, db + p->value.size() * sizeof(float));
    }
    return sha256_hex(buf);
}

AdapterWeights AdapterWeights::create(const PredictorConfig& base, int image_dim, uint64_t seed,
                                      std::string base_fingerprint, std::string image_source) {
    if (image_dim < 1) throw std::invalid_argument("adapter image_dim must be >= 1");
    base.validate();
    AdapterWeights w;
    w.net = nn::AdapterNet<float>(base.decoder_blocks, base.feature_dim, base.attention_heads, image_dim);
    std::mt19937_64 rng(seed);
    w.net.init(rng);
    w.base_fingerprint = std::move(base_fingerprint);
    w.image_source = std::move(image_source);
    return w;
}

Archive AdapterWeights::to_archive() const {
    Archive a("adapter");
    a.meta()["version"] = kVersion;
    a.meta()["layers"] = layers();
    a.meta()["feature_dim"] = net.branches.empty() ? 0 : net.branches[0].adapt.out();
    a.meta()["heads"] = net.branches.empty() ? 0 : net.branches[0].attn.heads;
    a.meta()["image_dim"] = image_dim();
    a.meta()["base_fingerprint"] = base_fingerprint;
    a.meta()["image_source"] = image_source;
    store_params(a, const_cast<nn::AdapterNet<float>&>(net));
    return a;
}

AdapterWeights AdapterWeights::from_archive(const Archive& a) {
    if (a.kind() != "adapter") throw std::runtime_error("archive kind '" + a.kind() + "' is not an adapter");
    const auto& m = a.meta();
    if (!m.contains("version")) throw std::runtime_error("adapter archive lacks a version field");
    if (m.at("version").get<int>() != kVersion) throw std::runtime_error("unsupported adapter version");
    AdapterWeights w;
    w.net = nn::AdapterNet<float>(m.at("layers").get<int>(), m.at("feature_dim").get<int>(), m.at("heads").get<int>(),
                                  m.at("image_dim").get<int>());
    load_params_into(a, w.net);
    w.base_fingerprint = m.value("base_fingerprint", "");
    w.image_source = m.value("image_source", "");
    return w;
}

void AdapterWeights::save(const std::string& path) const { to_archive().save(path); }
AdapterWeights AdapterWeights::load(const std::string& path) { return from_archive(Archive::load(path)); }
std::string AdapterWeights::fingerprint() const { return fingerprint_params(param_list(net)); }

LandmarkPredictor::LandmarkPredictor(const PredictorConfig& config, uint64_t init_seed) : config_(config) {
    config_.validate();
    net_ = nn::PredictorNet<float>(config_.dims());
    std::mt19937_64 rng(init_seed);
    net_.init(rng);
}

LandmarkPredictor::LandmarkPredictor(const LandmarkPredictor& other)
    : config_(other.config_),
      net_(other.net_),
      adapter_(other.adapter_ ? std::make_unique<AdapterWeights>(*other.adapter_) : nullptr),
      training_(other.training_) {}

LandmarkPredictor& LandmarkPredictor::operator=(const LandmarkPredictor& other) {
    if (this != &other) *this = LandmarkPredictor(other);
    return *this;
}

LandmarkPredictor::Tokens LandmarkPredictor::tokenize(const Points& points) const {
    const auto g = group_points(points, config_.num_patches, config_.patch_neighbors, config_.grouping_seed);
    Tokens t;
    t.embeddings = net_.tokenizer.forward(to_float(g.relative), to_float(g.centers), g.k);
    t.centers = g.centers;
    return t;
}

FeatureMatrix LandmarkPredictor::encode(const FeatureMatrix& embeddings) const {
    if (embeddings.cols() != config_.feature_dim) {
        throw DimensionError("patch embeddings have " + std::to_string(embeddings.cols()) + " channels, expected " +
                             std::to_string(config_.feature_dim));
    }
    return net_.encoder.forward(embeddings);
}

DecodeResult LandmarkPredictor::decode(const FeatureMatrix& point_features, const ImageFeatures* image,
                                       bool keep_attention) const {
    if (point_features.cols() != config_.feature_dim) {
        throw DimensionError("point features have " + std::to_string(point_features.cols()) + " channels, expected " +
                             std::to_string(config_.feature_dim));
    }
    if (image && !adapter_) throw std::invalid_argument("image features given but no adapter is attached");
    DecodeResult r;
    const FeatureMatrix out = net_.decode(point_features, adapter_ ? &adapter_->net : nullptr,
                                          image ? &image->tokens : nullptr, nullptr,
                                          keep_attention ? &r.attention : nullptr);
    r.landmarks = out.cast<double>();
    return r;
}

Prediction LandmarkPredictor::run(const Points& points, const ImageFeatures* image, bool keep_attention) const {
    if (points.rows() == 0) throw std::invalid_argument("empty point cloud");
    Prediction p;
    p.frame_center = bbox_center(points);
    const Points local = points.rowwise() - p.frame_center.transpose();
    const Tokens t = tokenize(local);
    auto d = decode(encode(t.embeddings), image, keep_attention);
    p.landmarks = d.landmarks.rowwise() + p.frame_center.transpose();
    p.centers = t.centers.rowwise() + p.frame_center.transpose();
    p.attention = std::move(d.attention);
    return p;
}

Points LandmarkPredictor::predict(const Points& points, const ImageFeatures* image) const {
    return run(points, image, false).landmarks;
}

void LandmarkPredictor::attach(AdapterWeights adapter) {
    if (adapter_) throw std::logic_error("an adapter is already attached; detach it first");
    if (adapter.layers() != config_.decoder_blocks) {
        throw std::invalid_argument("adapter has " + std::to_string(adapter.layers()) + " branches, decoder has " +
                                    std::to_string(config_.decoder_blocks) + " layers");
    }
    if (adapter.layers() > 0 && adapter.net.branches[0].adapt.out() != config_.feature_dim) {
        throw std::invalid_argument("adapter feature width does not match the predictor");
    }
    if (!adapter.base_fingerprint.empty() && adapter.base_fingerprint != fingerprint()) {
        throw std::invalid_argument("adapter was created for a different base predictor (fingerprint mismatch)");
    }
    adapter_ = std::make_unique<AdapterWeights>(std::move(adapter));
}

AdapterWeights LandmarkPredictor::detach() {
    if (!adapter_) throw std::logic_error("no adapter is attached");
    AdapterWeights a = std::move(*adapter_);
    adapter_.reset();
    return a;
}

std::string LandmarkPredictor::fingerprint() const { return fingerprint_params(param_list(net_)); }

Archive LandmarkPredictor::to_archive() const {
    Archive a("landmark_predictor");
    a.meta()["version"] = kVersion;
    a.meta()["config"] = config_.to_json();
    a.meta()["frame"] = "bbox_center";
    a.meta()["training"] = {{"step", training_.step}, {"loss_history", training_.loss_history}};
    store_params(a, const_cast<nn::PredictorNet<float>&>(net_));
    return a;
}

LandmarkPredictor LandmarkPredictor::from_archive(const Archive& a) {
    if (a.kind() != "landmark_predictor") {
        throw std::runtime_error("archive kind '" + a.kind() + "' is not a landmark predictor");
    }
    const auto& m = a.meta();
    if (!m.contains("version")) throw std::runtime_error("predictor checkpoint lacks a version field");
    if (m.at("version").get<int>() != kVersion) {
        throw std::runtime_error("unsupported predictor checkpoint version " + m.at("version").dump());
    }
    LandmarkPredictor p(PredictorConfig::from_json(m.at("config")));
    load_params_into(a, p.net_);
    if (m.contains("training")) {
        p.training_.step = m["training"].value("step", int64_t{0});
        p.training_.loss_history = m["training"].value("loss_history", std::vector<double>{});
    }
    return p;
}

void LandmarkPredictor::save(const std::string& path) const { to_archive().save(path); }
LandmarkPredictor LandmarkPredictor::load(const std::string& path) { return from_archive(Archive::load(path)); }

double landmark_loss(const Points& predicted, const Points& target) {
    if (predicted.rows() != target.rows()) {
        throw DimensionError("predicted landmarks have " + std::to_string(predicted.rows()) + " rows, targets have " +
                             std::to_string(target.rows()));
    }
    if (predicted.rows() == 0) throw std::invalid_argument("no landmarks");
    return (predicted - target).rowwise().squaredNorm().sum() / static_cast<double>(predicted.rows());
}

}  // namespace omnifit
