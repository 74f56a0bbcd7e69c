#include "omnifit/training.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace omnifit {

namespace {

using Clock = std::chrono::steady_clock;

void zero_grads(const NamedParams& params) {
    for (auto& [name, p] : params) p->zero_grad();
}

FeatureMatrix to_float(const Points& p) { return p.cast<float>(); }

}  // namespace

void AdamW::step(const NamedParams& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    const float lr = static_cast<float>(s_.lr);
    const float decay = static_cast<float>(1.0 - s_.lr * s_.weight_decay);
    const float b1 = static_cast<float>(s_.beta1), b2 = static_cast<float>(s_.beta2);
    const float step_size = static_cast<float>(s_.lr / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float eps = static_cast<float>(s_.epsilon);
    for (const auto& [name, p] : params) {
        auto& [m, v] = state_[name];
        if (m.size() == 0) {
            m = FeatureMatrix::Zero(p->value.rows(), p->value.cols());
            v = FeatureMatrix::Zero(p->value.rows(), p->value.cols());
        }
        m = b1 * m + (1.0f - b1) * p->grad;
        v = b2 * v + (1.0f - b2) * p->grad.cwiseAbs2();
        if (lr == 0.0f) continue;
        p->value *= decay;
        p->value.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
    }
}

void AdamW::store(Archive& a, const std::string& prefix) const {
    a.meta()["optimizer"] = {{"type", "adamw"},
                             {"steps", t_},
                             {"lr", s_.lr},
                             {"beta1", s_.beta1},
                             {"beta2", s_.beta2},
                             {"epsilon", s_.epsilon},
                             {"weight_decay", s_.weight_decay}};
    for (const auto& [name, mv] : state_) {
        const std::vector<int64_t> shape{mv.first.rows(), mv.first.cols()};
        a.add_f32(prefix + "m." + name, shape, std::span<const float>(mv.first.data(), mv.first.size()));
        a.add_f32(prefix + "v." + name, shape, std::span<const float>(mv.second.data(), mv.second.size()));
    }
}

void AdamW::restore(const Archive& a, const std::string& prefix) {
    if (!a.meta().contains("optimizer")) return;
    t_ = a.meta()["optimizer"].value("steps", int64_t{0});
    state_.clear();
    const std::string mp = prefix + "m.";
    for (const auto& rec : a.tensors()) {
        if (rec.name.rfind(mp, 0) != 0) continue;
        const std::string name = rec.name.substr(mp.size());
        const std::string vname = prefix + "v." + name;
        if (!a.has(vname) || rec.shape.size() != 2) throw std::runtime_error("incomplete optimizer state for '" + name + "'");
        FeatureMatrix m(rec.shape[0], rec.shape[1]), v(rec.shape[0], rec.shape[1]);
        const auto md = a.f32(rec.name, m.size()), vd = a.f32(vname, v.size());
        std::copy(md.begin(), md.end(), m.data());
        std::copy(vd.begin(), vd.end(), v.data());
        state_[name] = {std::move(m), std::move(v)};
    }
}

nlohmann::json TrainLogEntry::to_json() const {
    return {{"step", step}, {"loss", loss}, {"lr", lr}, {"wall_time", wall_time}};
}

TrainLogSink jsonl_log(std::ostream& out) {
    return [&out](const TrainLogEntry& e) { out << e.to_json().dump() << "\n" << std::flush; };
}

void TrainOptions::validate() const {
    if (epochs < 0 || steps_per_epoch < 0) throw std::invalid_argument("epochs and steps_per_epoch must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
    if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr)) throw std::invalid_argument("lr must be finite and >= 0");
}

LandmarkTrainer::LandmarkTrainer(LandmarkPredictor& model, Mode mode, AdamWSettings settings)
    : model_(model), mode_(mode), opt_(settings) {
    if (mode_ == Mode::Adapter && !model_.has_adapter()) {
        throw std::invalid_argument("adapter training needs an attached adapter");
    }
}

double LandmarkTrainer::step(const std::vector<LandmarkSample>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty training batch");
    const auto& cfg = model_.config();
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        if (s.targets.rows() != cfg.num_landmarks) {
            throw DimensionError("sample " + std::to_string(i) + " has " + std::to_string(s.targets.rows()) +
                                 " target landmarks, the predictor outputs " + std::to_string(cfg.num_landmarks));
        }
        if (!s.targets.allFinite()) throw std::invalid_argument("sample " + std::to_string(i) + " has non-finite targets");
        if (s.points.rows() < cfg.num_patches) {
            throw std::invalid_argument("sample " + std::to_string(i) + " has fewer points than patches");
        }
        if (mode_ == Mode::Adapter && !s.image) {
            throw std::invalid_argument("adapter training needs image features on every sample (sample " +
                                        std::to_string(i) + " has none)");
        }
    }
    auto& net = model_.net();
    nn::AdapterNet<float>* adapter = model_.has_adapter() ? &model_.adapter()->net : nullptr;
    const NamedParams base = named_params(net);
    const NamedParams adapter_params = adapter ? named_params(*adapter) : NamedParams{};
    zero_grads(base);
    zero_grads(adapter_params);

    double total = 0.0;
    const float inv_batch = 1.0f / static_cast<float>(batch.size());
    for (const auto& s : batch) {
        const Eigen::Vector3d center = bbox_center(s.points);
        const Points local = s.points.rowwise() - center.transpose();
        const auto g = group_points(local, cfg.num_patches, cfg.patch_neighbors, cfg.grouping_seed);
        const FeatureMatrix* image = s.image && adapter ? &s.image->tokens : nullptr;
        nn::PredictorNet<float>::Trace trace;
        const FeatureMatrix out = net.forward(to_float(g.relative), to_float(g.centers), g.k, adapter, image, &trace);
        const Points pred = out.cast<double>().rowwise() + center.transpose();
        total += landmark_loss(pred, s.targets);
        const FeatureMatrix target = to_float(s.targets.rowwise() - center.transpose());
        const FeatureMatrix dout = (out - target) * (2.0f * inv_batch / static_cast<float>(cfg.num_landmarks));
        net.backward(trace, dout, adapter, mode_ == Mode::Adapter);
    }
    opt_.step(mode_ == Mode::Adapter ? adapter_params : base);
    zero_grads(base);
    zero_grads(adapter_params);
    return total / static_cast<double>(batch.size());
}

Archive LandmarkTrainer::checkpoint() const {
    Archive a = mode_ == Mode::Adapter ? model_.adapter()->to_archive() : model_.to_archive();
    if (mode_ == Mode::Adapter) {
        a.meta()["training"] = {{"step", model_.training().step}};
    }
    opt_.store(a);
    return a;
}

namespace {

template <class Trainer, class Source, class Model>
TrainSummary run_loop(Trainer& trainer, Model& model, TrainingState& state, const Source& source,
                      const TrainOptions& options) {
    TrainSummary summary;
    summary.first_step = state.step;
    const auto start = Clock::now();
    const int64_t total = static_cast<int64_t>(options.epochs) * options.steps_per_epoch;
    auto save = [&]() {
        if (!options.checkpoint_path.empty()) trainer.checkpoint().save(options.checkpoint_path);
    };
    for (int64_t i = 0; i < total; ++i) {
        auto batch = source(options.batch_size);
        int rejected = 0;
        double loss;
        if constexpr (std::is_same_v<Trainer, ScaleTrainer>) {
            loss = trainer.step(batch, &rejected);
        } else {
            loss = trainer.step(batch);
        }
        summary.rejected_samples += rejected;
        ++state.step;
        state.loss_history.push_back(loss);
        summary.losses.push_back(loss);
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite training loss at step " + std::to_string(state.step));
        if (options.log) {
            options.log({state.step, loss, options.optimizer.lr,
                         std::chrono::duration<double>(Clock::now() - start).count()});
        }
        if (options.checkpoint_every > 0 && state.step % options.checkpoint_every == 0) save();
    }
    (void)model;
    summary.last_step = state.step;
    save();
    return summary;
}

}  // namespace

TrainSummary train_predictor(LandmarkPredictor& model, const LandmarkBatchSource& source, const TrainOptions& options,
                             const Archive* resume) {
    options.validate();
    LandmarkTrainer trainer(model, LandmarkTrainer::Mode::Base, options.optimizer);
    if (resume) trainer.restore_optimizer(*resume);
    return run_loop(trainer, model, model.training(), source, options);
}

LandmarkPredictor train(const LandmarkBatchSource& source, const PredictorConfig& config, const TrainOptions& options,
                        uint64_t seed) {
    LandmarkPredictor model(config, seed);
    train_predictor(model, source, options);
    return model;
}

TrainSummary train_adapter(LandmarkPredictor& model, const LandmarkBatchSource& source, const TrainOptions& options,
                           const Archive* resume) {
    options.validate();
    if (!model.has_adapter()) throw std::invalid_argument("attach an adapter before adapter training");
    LandmarkTrainer trainer(model, LandmarkTrainer::Mode::Adapter, options.optimizer);
    if (resume) trainer.restore_optimizer(*resume);
    // The adapter keeps its own step counter, separate from the base model's.
    TrainingState state;
    if (resume && resume->meta().contains("training")) state.step = resume->meta()["training"].value("step", int64_t{0});
    const int64_t base_step = model.training().step;
    model.training().step = state.step;
    TrainSummary s;
    try {
        s = run_loop(trainer, model, state, source, options);
    } catch (...) {
        model.training().step = base_step;
        throw;
    }
    model.training().step = base_step;
    return s;
}

ScaleTrainer::ScaleTrainer(ScalePredictor& model, AdamWSettings settings) : model_(model), opt_(settings) {}

double ScaleTrainer::step(const std::vector<ScaleSample>& batch, int* rejected) {
    if (batch.empty()) throw std::invalid_argument("empty training batch");
    const auto& cfg = model_.config();
    std::vector<const ScaleSample*> accepted;
    int bad = 0;
    for (const auto& s : batch) {
        if (!(s.scale > 0.0) || !std::isfinite(s.scale)) {
            ++bad;
            continue;
        }
        if (s.cloud.scale_state != ScaleState::Normalized) {
            throw std::invalid_argument("scale training needs Normalized clouds; normalize first");
        }
        if (s.cloud.size() < cfg.num_patches) throw std::invalid_argument("scale sample has fewer points than patches");
        accepted.push_back(&s);
    }
    if (rejected) *rejected = bad;
    if (accepted.empty()) return 0.0;
    auto& net = model_.net();
    const NamedParams params = named_params(net);
    zero_grads(params);
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(accepted.size());
    for (const ScaleSample* s : accepted) {
        const auto g = group_points(s->cloud.points, cfg.num_patches, cfg.patch_neighbors, cfg.grouping_seed);
        nn::ScaleNet<float>::Trace trace;
        const double log_s = net.forward(to_float(g.relative), to_float(g.centers), g.k, &trace);
        const double S = std::exp(log_s);
        total += (S - s->scale) * (S - s->scale);
        net.backward(trace, static_cast<float>(2.0 * (S - s->scale) * S * inv));
    }
    opt_.step(params);
    zero_grads(params);
    return total * inv;
}

Archive ScaleTrainer::checkpoint() const {
    Archive a = model_.to_archive();
    opt_.store(a);
    return a;
}

TrainSummary train_scale(ScalePredictor& model, const ScaleBatchSource& source, const TrainOptions& options,
                         const Archive* resume) {
    options.validate();
    ScaleTrainer trainer(model, options.optimizer);
    if (resume) trainer.optimizer().restore(*resume);
    return run_loop(trainer, model, model.training(), source, options);
}

ScaleSample make_scale_sample(const PointCloud& metric_cloud) {
    const auto n = normalize_unit(metric_cloud);
    return {n.cloud, n.inv_scale};
}

}  // namespace omnifit
