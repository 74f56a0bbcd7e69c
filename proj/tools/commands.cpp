#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "omnifit/body_model_io.hpp"
#include "omnifit/dataset.hpp"
#include "omnifit/image.hpp"
#include "omnifit/mesh_io.hpp"
#include "omnifit/metrics.hpp"
#include "omnifit/pipeline.hpp"
#include "omnifit/training.hpp"

namespace fs = std::filesystem;

namespace omnifit::cli {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw UsageError(message);
}

void require_file(const std::string& path, const std::string& flag) {
    require(!path.empty(), flag + " is required");
    if (!fs::exists(path)) throw std::runtime_error(flag + ": no such file '" + path + "'");
}

void prepare_out_dir(const std::string& dir, const std::string& resolved_config) {
    require(!dir.empty(), "--out is required");
    fs::create_directories(dir);
    std::ofstream(fs::path(dir) / "config.toml") << resolved_config;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

LandmarkSpec spec_for(const std::string& path, const BodyModelAssets& assets) {
    LandmarkSpec spec = path.empty() ? default_spec(assets) : LandmarkSpec::load(path);
    spec.validate(assets.num_vertices());
    return spec;
}

bool is_point_file(const std::string& path) {
    const auto ext = fs::path(path).extension().string();
    return ext == ".xyz" || ext == ".txt";
}

// Meshes are surface-sampled; vertex-only files are used as they are.
PointCloud load_input(const std::string& path, int points, uint64_t seed) {
    if (is_point_file(path)) return load_point_cloud(path);
    const TriMesh mesh = load_mesh(path);
    if (mesh.num_faces() == 0) return load_point_cloud(path);
    return sample_surface(mesh, points, seed);
}

PredictorConfig predictor_config(const ArchitectureArgs& a, int num_landmarks) {
    PredictorConfig c;
    if (a.preset == "desk") {
        c = PredictorConfig::desk_scale(num_landmarks);
    } else if (a.preset == "paper") {
        c = PredictorConfig::paper_scale(num_landmarks);
    } else {
        throw UsageError("--preset must be desk or paper");
    }
    if (a.feature_dim) c.feature_dim = *a.feature_dim;
    if (a.encoder_blocks) c.encoder_blocks = *a.encoder_blocks;
    if (a.decoder_blocks) c.decoder_blocks = *a.decoder_blocks;
    if (a.patches) c.num_patches = *a.patches;
    if (a.neighbors) c.patch_neighbors = *a.neighbors;
    if (a.heads) c.attention_heads = *a.heads;
    c.validate();
    return c;
}

TrainOptions train_options(const TrainArgs& a, const fs::path& checkpoint, std::ostream& log) {
    TrainOptions o;
    o.optimizer.lr = a.lr;
    o.optimizer.weight_decay = a.weight_decay;
    o.epochs = a.epochs;
    o.steps_per_epoch = a.steps_per_epoch;
    o.batch_size = a.batch_size;
    o.checkpoint_every = a.checkpoint_every;
    o.checkpoint_path = checkpoint.string();
    o.log = jsonl_log(log);
    o.validate();
    return o;
}

StreamOptions stream_options(const TrainArgs& a) {
    StreamOptions s;
    s.partial_fraction = a.partial_fraction;
    s.surface_points = a.surface_points;
    s.augment.min_points = a.min_points;
    s.augment.max_points = a.max_points;
    return s;
}

// Image features are computed once per file.
class ImageCache {
public:
    explicit ImageCache(const ImageFeatureProvider& provider) : provider_(provider) {}
    const ImageFeatures& get(const std::string& path) {
        auto it = cache_.find(path);
        if (it == cache_.end()) it = cache_.emplace(path, extract_image_features(load_image(path), provider_)).first;
        return it->second;
    }

private:
    const ImageFeatureProvider& provider_;
    std::map<std::string, ImageFeatures> cache_;
};

LandmarkBatchSource landmark_source(TrainingStream& stream, ImageCache* images) {
    return [&stream, images](int batch_size) {
        std::vector<LandmarkSample> out;
        for (auto& s : stream.next_batch(batch_size)) {
            LandmarkSample l{std::move(s.cloud.points), std::move(s.targets), std::nullopt};
            if (images) {
                if (!s.image_path) throw std::runtime_error("adapter training record has no image_path");
                l.image = images->get(*s.image_path);
            }
            out.push_back(std::move(l));
        }
        return out;
    };
}

void print_summary(const TrainSummary& s) {
    std::cout << "steps " << s.first_step << " -> " << s.last_step;
    if (!s.losses.empty()) std::cout << ", loss " << s.losses.front() << " -> " << s.losses.back();
    std::cout << "\n";
}

}  // namespace

int run_fit(const FitArgs& a, const std::string& resolved_config) {
    require(!a.inputs.empty(), "--input is required");
    require(!a.image.empty() ? !a.adapter.empty() : true, "--image needs --adapter (image branch weights)");
    require(a.adapter.empty() || !a.image.empty(), "--adapter needs --image");
    require(!(a.normalized && a.normalize), "--normalized and --normalize are exclusive");
    const bool scale_given = !a.scale_checkpoint.empty() || a.scale.has_value();
    require(!(scale_given && a.assume_metric), "--assume-metric conflicts with a scale option");
    require(!(a.scale_checkpoint.size() && a.scale), "give --scale-checkpoint or --scale, not both");
    require(!((a.normalized || a.normalize) && !scale_given && !a.assume_metric),
            "normalized input needs --scale-checkpoint, --scale or --assume-metric");
    require(a.jobs >= 1, "--jobs must be >= 1");
    require(a.optimizer == "lbfgs" || a.optimizer == "adam", "--optimizer must be lbfgs or adam");
    require(a.points >= 1, "--points must be >= 1");
    const bool given_landmarks = !a.landmarks.empty();
    require(!given_landmarks || a.landmarks.size() == a.inputs.size(), "--landmarks needs one file per --input");
    require(!given_landmarks || a.checkpoint.empty(), "--landmarks replaces --checkpoint; give one of them");
    require(!given_landmarks || a.image.empty(), "--landmarks cannot be combined with --image");
    require(!given_landmarks || !(a.normalized || a.normalize), "--landmarks needs metric input");
    require_file(a.model, "--model");
    if (given_landmarks) {
        for (const auto& l : a.landmarks) require_file(l, "--landmarks");
    } else {
        require_file(a.checkpoint, "--checkpoint");
    }
    if (!a.image.empty()) require_file(a.image, "--image");
    if (!a.adapter.empty()) require_file(a.adapter, "--adapter");
    if (!a.scale_checkpoint.empty()) require_file(a.scale_checkpoint, "--scale-checkpoint");
    for (const auto& in : a.inputs) require_file(in, "--input");
    prepare_out_dir(a.out, resolved_config);

    const BodyModelAssets assets = load_body_model(a.model);
    const LandmarkSpec spec = spec_for(a.spec, assets);
    LandmarkPredictor predictor = given_landmarks ? LandmarkPredictor(PredictorConfig::desk_scale(spec.size()))
                                                  : LandmarkPredictor::load(a.checkpoint);
    if (predictor.config().num_landmarks != spec.size()) {
        throw std::runtime_error("checkpoint predicts " + std::to_string(predictor.config().num_landmarks) +
                                 " landmarks but the spec has " + std::to_string(spec.size()));
    }
    std::optional<ImageFeatures> image;
    if (!a.adapter.empty()) {
        AdapterWeights w = AdapterWeights::load(a.adapter);
        const PatchEmbedProvider provider = w.image_source.empty() ? PatchEmbedProvider(16, w.image_dim())
                                                                   : PatchEmbedProvider::from_id(w.image_source);
        if (provider.feature_dim() != w.image_dim()) {
            throw std::runtime_error("adapter image width disagrees with its feature source '" + w.image_source + "'");
        }
        predictor.attach(std::move(w));
        image = extract_image_features(load_image(a.image), provider);
    }
    std::optional<ScalePredictor> scale_model;
    if (!a.scale_checkpoint.empty()) scale_model = ScalePredictor::load(a.scale_checkpoint);

    ScaleSource scale;
    scale.predictor = scale_model ? &*scale_model : nullptr;
    scale.fixed = a.scale;
    scale.assume_metric = a.assume_metric;
    PipelineOptions options;
    options.schedule = default_schedule({a.stage2_translation});
    options.schedule.optimizer = a.optimizer == "adam" ? FitOptimizer::Adam : FitOptimizer::Lbfgs;
    options.mask_untrusted = a.mask_partial;
    options.mask_threshold = a.mask_threshold;
    const LandmarkFn predicted = predictor_landmarks(predictor, image ? &*image : nullptr);

    std::atomic<size_t> next{0};
    std::atomic<int> failures{0};
    std::mutex io;
    auto worker = [&]() {
        for (size_t i = next++; i < a.inputs.size(); i = next++) {
            const std::string& in = a.inputs[i];
            try {
                PointCloud cloud = load_input(in, a.points, a.seed);
                if (a.normalize) cloud = normalize_unit(cloud).cloud;
                if (a.normalized) cloud.scale_state = ScaleState::Normalized;
                LandmarkFn landmarks = predicted;
                if (given_landmarks) {
                    const Points known = load_point_cloud(a.landmarks[i]).points;
                    landmarks = [known](const Points&) { return known; };
                }
                const PipelineResult r = fit_point_cloud(assets, spec, cloud, landmarks, scale, options);
                const auto stem = (fs::path(a.out) / fs::path(in).stem()).string();
                auto j = r.to_json();
                j["input"] = in;
                write_json(stem + ".fit.json", j);
                save_mesh(stem + ".fit.ply", posed_mesh(assets, r.fit.params));
                std::lock_guard lock(io);
                std::cout << in << ": rmse " << r.fit.landmark_rmse << " scale " << r.scale << "\n";
            } catch (const std::exception& e) {
                ++failures;
                std::lock_guard lock(io);
                std::cerr << "error: " << in << ": " << e.what() << "\n";
            }
        }
    };
    const int n = std::min<int>(a.jobs, static_cast<int>(a.inputs.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return failures > 0 ? 1 : 0;
}

int run_train(const TrainArgs& a, const std::string& resolved_config) {
    require_file(a.manifest, "--manifest");
    require_file(a.model, "--model");
    if (!a.resume.empty()) require_file(a.resume, "--resume");
    prepare_out_dir(a.out, resolved_config);
    const BodyModelAssets assets = load_body_model(a.model);
    const LandmarkSpec spec = spec_for(a.spec, assets);
    auto data = std::make_shared<ManifestDataset>(ManifestDataset::from_file(a.manifest));
    TrainingStream stream(assets, spec, data, stream_options(a), a.seed);

    std::optional<Archive> resume;
    LandmarkPredictor model = [&] {
        if (a.resume.empty()) return LandmarkPredictor(predictor_config(a.arch, spec.size()), a.seed);
        resume = Archive::load(a.resume);
        return LandmarkPredictor::from_archive(*resume);
    }();
    if (model.config().num_landmarks != spec.size()) {
        throw std::runtime_error("resumed checkpoint predicts " + std::to_string(model.config().num_landmarks) +
                                 " landmarks but the spec has " + std::to_string(spec.size()));
    }
    std::ofstream log(fs::path(a.out) / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
    const auto opts = train_options(a, fs::path(a.out) / "predictor.bin", log);
    print_summary(train_predictor(model, landmark_source(stream, nullptr), opts, resume ? &*resume : nullptr));
    return 0;
}

int run_train_adapter(const TrainArgs& a, const std::string& resolved_config) {
    require(!a.base.empty(), "--base (trained point-only checkpoint) is required for adapter training");
    require_file(a.base, "--base");
    require_file(a.manifest, "--manifest");
    require_file(a.model, "--model");
    if (!a.resume.empty()) require_file(a.resume, "--resume");
    prepare_out_dir(a.out, resolved_config);
    const BodyModelAssets assets = load_body_model(a.model);
    const LandmarkSpec spec = spec_for(a.spec, assets);
    auto data = std::make_shared<ManifestDataset>(ManifestDataset::from_file(a.manifest));
    TrainingStream stream(assets, spec, data, stream_options(a), a.seed);

    LandmarkPredictor model = LandmarkPredictor::load(a.base);
    const PatchEmbedProvider provider(a.image_patch, a.image_dim, a.image_seed);
    std::optional<Archive> resume;
    if (a.resume.empty()) {
        model.attach(AdapterWeights::create(model.config(), provider.feature_dim(), a.seed, model.fingerprint(),
                                            provider.id()));
    } else {
        resume = Archive::load(a.resume);
        model.attach(AdapterWeights::from_archive(*resume));
    }
    ImageCache images(provider);
    std::ofstream log(fs::path(a.out) / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
    const auto opts = train_options(a, fs::path(a.out) / "adapter.bin", log);
    print_summary(train_adapter(model, landmark_source(stream, &images), opts, resume ? &*resume : nullptr));
    return 0;
}

int run_train_scale(const TrainScaleArgs& a, const std::string& resolved_config) {
    require_file(a.manifest, "--manifest");
    if (!a.resume.empty()) require_file(a.resume, "--resume");
    require(a.preset == "desk" || a.preset == "paper", "--preset must be desk or paper");
    require(a.points >= 1, "--points must be >= 1");
    prepare_out_dir(a.out, resolved_config);
    const ManifestDataset data = ManifestDataset::from_file(a.manifest);
    if (data.size() == 0) throw std::runtime_error("manifest has no records");
    std::vector<TriMesh> meshes;
    for (size_t i = 0; i < data.size(); ++i) meshes.push_back(data.get(i).mesh);

    std::optional<Archive> resume;
    ScalePredictor model = [&] {
        if (a.resume.empty()) return ScalePredictor(a.preset == "paper" ? ScaleConfig::paper_scale() : ScaleConfig{}, a.seed);
        resume = Archive::load(a.resume);
        return ScalePredictor::from_archive(*resume);
    }();
    // Seeded epochs over the meshes; every draw samples a fresh surface.
    std::mt19937_64 rng(a.seed + static_cast<uint64_t>(model.training().step));
    std::vector<size_t> order(meshes.size());
    size_t cursor = order.size();
    const ScaleBatchSource source = [&](int batch_size) {
        std::vector<ScaleSample> out;
        for (int i = 0; i < batch_size; ++i) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), size_t{0});
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            out.push_back(make_scale_sample(sample_surface(meshes[order[cursor++]], a.points, rng())));
        }
        return out;
    };
    TrainOptions o;
    o.optimizer.lr = a.lr;
    o.optimizer.weight_decay = a.weight_decay;
    o.epochs = a.epochs;
    o.steps_per_epoch = a.steps_per_epoch;
    o.batch_size = a.batch_size;
    o.checkpoint_every = a.checkpoint_every;
    o.checkpoint_path = (fs::path(a.out) / "scale.bin").string();
    std::ofstream log(fs::path(a.out) / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
    o.log = jsonl_log(log);
    const auto s = train_scale(model, source, o, resume ? &*resume : nullptr);
    print_summary(s);
    if (s.rejected_samples > 0) std::cout << "rejected samples: " << s.rejected_samples << "\n";
    return 0;
}

int run_simulate_partial(const SimulatePartialArgs& a) {
    require_file(a.input, "--input");
    require(!a.out.empty(), "--out is required");
    require(a.view.size() == 3, "--view takes three numbers");
    require(a.points >= 1 && a.resolution >= 1, "--points and --resolution must be >= 1");
    const Eigen::Vector3d view(a.view[0], a.view[1], a.view[2]);
    require(view.norm() > 0.0, "--view must be non-zero");
    const TriMesh mesh = load_mesh(a.input);
    PartialOptions po;
    po.resolution = a.resolution;
    const auto r = simulate_partial_detailed(mesh, view, a.points, a.seed, po);
    save_point_cloud(a.out, r.cloud);
    const auto visible = std::count(r.visible_faces.begin(), r.visible_faces.end(), true);
    std::cout << "points " << r.cloud.size() << ", visible faces " << visible << " of " << mesh.num_faces() << "\n";
    return 0;
}

int run_eval(const EvalArgs& a) {
    require_file(a.model, "--model");
    require(!a.pred.empty(), "--pred is required");
    require(a.pred.size() == a.gt.size(), "--pred and --gt need the same number of files");
    const BodyModelAssets assets = load_body_model(a.model);
    MetricAccumulator acc(assets, MetricOptions{a.procrustes});
    for (size_t i = 0; i < a.pred.size(); ++i) {
        try {
            acc.add(load_params(a.pred[i]), load_params(a.gt[i]));
        } catch (const std::exception& e) {
            throw std::runtime_error(a.pred[i] + " / " + a.gt[i] + ": " + e.what());
        }
    }
    const EvalResult r = acc.result();
    std::cout << r.text_table();
    if (!a.out.empty()) write_json(a.out, r.to_json());
    return 0;
}

int run_make_spec(const MakeSpecArgs& a) {
    require_file(a.model, "--model");
    require(!a.out.empty(), "--out is required");
    const BodyModelAssets assets = load_body_model(a.model);
    Allocation alloc = kDefaultAllocation;
    if (!a.allocation.empty()) {
        require(a.allocation.size() == 1, "--allocation takes one of A, B, C, D");
        alloc = ablation_allocation(a.allocation[0]);
    }
    if (a.hands) alloc.hands = *a.hands;
    if (a.head) alloc.head = *a.head;
    if (a.body) alloc.body = *a.body;
    const LandmarkSpec spec = a.labels.empty()
                                  ? default_spec(assets, alloc, a.seed)
                                  : default_spec(assets, load_region_labels(a.labels), alloc, a.seed);
    spec.save(a.out);
    std::cout << "landmarks " << spec.size() << " (hands " << alloc.hands << ", head " << alloc.head << ", body "
              << alloc.body << ")\n";
    return 0;
}

int run_make_toy_data(const MakeToyDataArgs& a) {
    require(!a.out.empty(), "--out is required");
    require(a.count >= 0, "--count must be >= 0");
    const fs::path dir(a.out);
    fs::create_directories(dir / "meshes");
    const BodyModelAssets assets = make_toy_model(a.vertices, a.joints, a.seed);
    save_body_model((dir / "body_model.bin").string(), assets);
    std::optional<LandmarkSpec> spec;
    if (!a.spec.empty()) {
        spec = LandmarkSpec::load(a.spec);
        spec->validate(assets.num_vertices());
    }
    std::mt19937_64 rng(a.seed + 1);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < a.count; ++i) {
        const std::string name = "body_" + std::to_string(i);
        BodyParams params;
        TriMesh mesh;
        if (a.with_scale) {
            auto b = sample_allometric_body(assets, rng);
            params = b.params;
            mesh = std::move(b.mesh);
        } else {
            params = sample_toy_params(assets, rng);
            mesh = posed_mesh(assets, params);
        }
        ManifestEntry e{"meshes/" + name + ".ply", "meshes/" + name + ".json", std::nullopt};
        save_mesh((dir / e.mesh_path).string(), mesh);
        save_params((dir / e.params_path).string(), params);
        if (spec) {
            PointCloud l;
            l.points = extract_landmarks(mesh.vertices, *spec);
            save_point_cloud((dir / ("meshes/" + name + ".landmarks.xyz")).string(), l);
        }
        if (a.images) {
            // Flat color that depends on the first two shape coefficients.
            auto squash = [](double v) { return static_cast<float>(1.0 / (1.0 + std::exp(-v))); };
            const double b0 = params.beta.size() > 0 ? params.beta[0] : 0.0;
            const double b1 = params.beta.size() > 1 ? params.beta[1] : 0.0;
            e.image_path = "meshes/" + name + ".png";
            save_png((dir / *e.image_path).string(), Image::filled(64, 64, squash(2 * b0), squash(2 * b1), 0.5f));
        }
        entries.push_back(e);
    }
    save_manifest((dir / "manifest.jsonl").string(), entries);
    std::cout << "wrote " << a.count << " records to " << (dir / "manifest.jsonl").string() << "\n";
    return 0;
}

}  // namespace omnifit::cli
