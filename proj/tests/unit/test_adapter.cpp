#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "omnifit/image.hpp"
#include "omnifit/predictor.hpp"
#include "omnifit/scale_predictor.hpp"
#include "omnifit/training.hpp"

using namespace omnifit;
namespace fs = std::filesystem;

namespace {

PredictorConfig small_config() {
    PredictorConfig c;
    c.num_landmarks = 10;
    c.feature_dim = 16;
    c.encoder_blocks = 1;
    c.decoder_blocks = 2;
    c.num_patches = 8;
    c.patch_neighbors = 4;
    c.attention_heads = 2;
    c.mlp_hidden_dims = {16};
    c.tokenizer_hidden = 8;
    c.encoder_mlp_hidden = 32;
    return c;
}

ScaleConfig small_scale_config() {
    ScaleConfig c;
    c.feature_dim = 16;
    c.encoder_blocks = 1;
    c.num_patches = 8;
    c.patch_neighbors = 4;
    c.attention_heads = 2;
    c.tokenizer_hidden = 8;
    c.encoder_mlp_hidden = 32;
    c.head_hidden = 16;
    return c;
}

Points blob(int n, uint64_t seed, const Eigen::Vector3d& axes = {0.3, 0.8, 0.2}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Points p(n, 3);
    for (int i = 0; i < n; ++i) p.row(i) << axes.x() * g(rng), axes.y() * g(rng), axes.z() * g(rng);
    return p;
}

ImageFeatures color_features(float r, float g, float b, uint64_t seed = 0) {
    return extract_image_features(Image::filled(32, 32, r, g, b), PatchEmbedProvider(16, 6, seed));
}

fs::path temp_dir(const std::string& tag) {
    const fs::path d = fs::temp_directory_path() / ("omnifit_adapter_" + tag + "_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
}

template <class T>
LandmarkBatchSource fixed(std::vector<T> samples) {
    return [samples](int) { return samples; };
}

}  // namespace

TEST_SUITE("adapter") {
    TEST_CASE("attach, detach and the zero-initialized identity") {
        const auto cfg = small_config();
        LandmarkPredictor p(cfg, 1);
        const Points pts = blob(120, 1);
        const ImageFeatures img = color_features(0.9f, 0.2f, 0.1f);
        const Points base = p.predict(pts);
        const auto base_hash = p.fingerprint();

        SUBCASE("fresh adapter leaves predictions unchanged for any image") {
            p.attach(AdapterWeights::create(cfg, img.tokens.cols(), 7, p.fingerprint(), img.source_id));
            for (float v : {0.0f, 0.5f, 1.0f}) {
                const auto im = color_features(v, 1.0f - v, v);
                CHECK((p.predict(pts, &im) - base).cwiseAbs().maxCoeff() < 1e-6);
            }
            CHECK(p.fingerprint() == base_hash);
        }
        SUBCASE("attach then detach is bit-identical to the base") {
            auto w = AdapterWeights::create(cfg, img.tokens.cols(), 7);
            w.net.branches[0].attn.o.weight.value.setConstant(0.3f);
            p.attach(w);
            CHECK(p.predict(pts, &img) != base);
            // Without image tokens the branch is skipped entirely.
            CHECK(p.predict(pts) == base);
            const auto back = p.detach();
            CHECK(back.fingerprint() == w.fingerprint());
            CHECK(p.predict(pts) == base);
            CHECK_FALSE(p.has_adapter());
        }
        SUBCASE("state machine") {
            p.attach(AdapterWeights::create(cfg, 6, 1));
            CHECK_THROWS_AS(p.attach(AdapterWeights::create(cfg, 6, 2)), std::logic_error);
            p.detach();
            CHECK_THROWS_AS(p.detach(), std::logic_error);
        }
        SUBCASE("mismatches") {
            auto deeper = cfg;
            deeper.decoder_blocks = 3;
            CHECK_THROWS_WITH(p.attach(AdapterWeights::create(deeper, 6, 1)), doctest::Contains("layers"));
            CHECK_THROWS_WITH(p.attach(AdapterWeights::create(cfg, 6, 1, "0000")), doctest::Contains("fingerprint"));
            CHECK_FALSE(p.has_adapter());
            CHECK_THROWS_WITH(p.predict(pts, &img), doctest::Contains("adapter"));
            p.attach(AdapterWeights::create(cfg, 5, 1));
            CHECK_THROWS_WITH(p.predict(pts, &img), doctest::Contains("channels"));
        }
        SUBCASE("archive round trip") {
            const auto dir = temp_dir("io");
            auto w = AdapterWeights::create(cfg, 6, 3, p.fingerprint(), img.source_id);
            w.save((dir / "a.ofa").string());
            const auto r = AdapterWeights::load((dir / "a.ofa").string());
            CHECK(r.fingerprint() == w.fingerprint());
            CHECK(r.base_fingerprint == p.fingerprint());
            CHECK(r.image_source == img.source_id);
            CHECK(r.layers() == cfg.decoder_blocks);
            CHECK_THROWS(LandmarkPredictor::load((dir / "a.ofa").string()));
            fs::remove_all(dir);
        }
    }

    TEST_CASE("adapter training keeps the base frozen") {
        const auto cfg = small_config();
        LandmarkPredictor p(cfg, 2);
        const auto img = color_features(0.3f, 0.6f, 0.9f);
        std::vector<LandmarkSample> batch;
        for (int i = 0; i < 3; ++i) {
            const Points pts = blob(60, 10 + i);
            batch.push_back({pts, pts.topRows(cfg.num_landmarks), img});
        }
        p.attach(AdapterWeights::create(cfg, 6, 1, p.fingerprint()));
        const auto base_hash = p.fingerprint();
        const auto adapter_hash = p.adapter()->fingerprint();

        SUBCASE("100 steps") {
            TrainOptions o;
            o.optimizer.lr = 1e-3;
            o.steps_per_epoch = 100;
            o.batch_size = 3;
            const auto s = train_adapter(p, fixed(batch), o);
            CHECK(s.losses.size() == 100);
            CHECK(p.fingerprint() == base_hash);
            CHECK(p.adapter()->fingerprint() != adapter_hash);
            CHECK(p.training().step == 0);
        }
        SUBCASE("zero learning rate") {
            TrainOptions o;
            o.optimizer.lr = 0.0;
            o.steps_per_epoch = 3;
            train_adapter(p, fixed(batch), o);
            CHECK(p.adapter()->fingerprint() == adapter_hash);
        }
        SUBCASE("samples without images are refused") {
            auto bad = batch;
            bad[1].image.reset();
            LandmarkTrainer t(p, LandmarkTrainer::Mode::Adapter);
            CHECK_THROWS_WITH(t.step(bad), doctest::Contains("image"));
            LandmarkPredictor bare(cfg, 2);
            CHECK_THROWS(LandmarkTrainer(bare, LandmarkTrainer::Mode::Adapter));
            TrainOptions o;
            CHECK_THROWS(train_adapter(bare, fixed(batch), o));
        }
    }

    TEST_CASE("images disambiguate what points cannot") {
        // The cloud shape never changes; a hidden sign moves every landmark
        // along x, and only the image color reveals the sign.
        const auto cfg = small_config();
        const double delta = 0.5;
        std::vector<LandmarkSample> data;
        for (int i = 0; i < 20; ++i) {
            const double sign = i % 2 ? 1.0 : -1.0;
            const Points pts = blob(64, 100);
            Points targets = blob(cfg.num_landmarks, 7);
            targets.col(0).array() += sign * delta;
            const auto img = sign > 0 ? color_features(1, 0, 0) : color_features(0, 0, 1);
            data.push_back({pts, targets, img});
        }
        std::vector<LandmarkSample> points_only = data;
        for (auto& s : points_only) s.image.reset();

        LandmarkPredictor p(cfg, 4);
        TrainOptions base;
        base.optimizer.lr = 1e-3;
        base.steps_per_epoch = 300;
        base.batch_size = 20;
        train_predictor(p, fixed(points_only), base);
        auto mean_loss = [&](bool with_image) {
            double s = 0.0;
            for (const auto& d : data) s += landmark_loss(p.predict(d.points, with_image ? &*d.image : nullptr), d.targets);
            return s / static_cast<double>(data.size());
        };
        const double baseline = mean_loss(false);

        p.attach(AdapterWeights::create(cfg, 6, 5, p.fingerprint()));
        const auto frozen = p.fingerprint();
        CHECK(mean_loss(true) == doctest::Approx(baseline).epsilon(1e-5));
        TrainOptions ad = base;
        ad.steps_per_epoch = 300;
        train_adapter(p, fixed(data), ad);
        const double adapted = mean_loss(true);
        MESSAGE("point-only " << baseline << ", with adapter " << adapted);
        CHECK(baseline > 0.5 * delta * delta);
        CHECK(adapted < 0.5 * baseline);
        CHECK(p.fingerprint() == frozen);
    }
}

TEST_SUITE("image") {
    TEST_CASE("patch embedding provider") {
        PatchEmbedProvider provider;
        SUBCASE("224 x 224 gives 196 tokens") {
            const auto f = extract_image_features(Image::filled(224, 224, 0.2f, 0.4f, 0.6f), provider);
            CHECK(f.tokens.rows() == 196);
            CHECK(f.tokens.cols() == provider.feature_dim());
            CHECK(f.source_id == provider.id());
        }
        SUBCASE("constant color gives identical tokens") {
            const auto f = extract_image_features(Image::filled(64, 48, 0.7f, 0.1f, 0.3f), provider);
            CHECK(f.tokens.rows() == 12);
            for (Eigen::Index i = 1; i < f.tokens.rows(); ++i) CHECK(f.tokens.row(i) == f.tokens.row(0));
        }
        SUBCASE("deterministic, and distinct images differ") {
            Image im = Image::filled(32, 32, 0, 0, 0);
            std::mt19937 rng(1);
            for (auto& v : im.rgb) v = std::uniform_real_distribution<float>(0, 1)(rng);
            const auto a = provider.extract(im), b = provider.extract(im);
            CHECK(a.tokens == b.tokens);
            CHECK(a.tokens.row(0) != a.tokens.row(3));
            CHECK(PatchEmbedProvider(16, 64, 1).extract(im).tokens != a.tokens);
        }
        SUBCASE("linear in the pixels") {
            const auto a = provider.extract(Image::filled(16, 16, 0.2f, 0.2f, 0.2f));
            const auto b = provider.extract(Image::filled(16, 16, 0.4f, 0.4f, 0.4f));
            CHECK((b.tokens - 2.0f * a.tokens).cwiseAbs().maxCoeff() < 1e-5);
        }
        SUBCASE("sizes that do not tile ask for a resize") {
            CHECK_THROWS_WITH(provider.extract(Image::filled(225, 224, 0, 0, 0)), doctest::Contains("resize"));
            CHECK_THROWS(provider.extract(Image{}));
        }
    }

    TEST_CASE("image files") {
        const auto dir = temp_dir("img");
        Image im = Image::filled(5, 3, 0, 0, 0);
        for (size_t i = 0; i < im.rgb.size(); ++i) im.rgb[i] = static_cast<float>(i * 7 % 256) / 255.0f;
        save_png((dir / "a.png").string(), im);
        const Image back = load_image((dir / "a.png").string());
        CHECK(back.width == 5);
        CHECK(back.height == 3);
        REQUIRE(back.rgb.size() == im.rgb.size());
        for (size_t i = 0; i < im.rgb.size(); ++i) CHECK(back.rgb[i] == doctest::Approx(im.rgb[i]).epsilon(1e-6));

        std::ofstream((dir / "junk.png").string()) << "definitely not an image";
        CHECK_THROWS(load_image((dir / "junk.png").string()));
        CHECK_THROWS(load_image((dir / "missing.png").string()));
        fs::remove_all(dir);
    }
}

TEST_SUITE("scale") {
    namespace {
    PointCloud normalized(const Points& p) {
        PointCloud c;
        c.points = p;
        return normalize_unit(c).cloud;
    }
    }  // namespace

    TEST_CASE("prediction contract") {
        const auto cfg = small_scale_config();
        ScalePredictor s(cfg, 1);
        const PointCloud n = normalized(blob(100, 1));
        const double v = s.predict_scale(n);
        CHECK(v > 0.0);
        CHECK(v == s.predict_scale(n));
        CHECK(std::log(v) == doctest::Approx(s.predict_log_scale(n)));

        PointCloud metric;
        metric.points = blob(100, 1);
        CHECK_THROWS_WITH(s.predict_scale(metric), doctest::Contains("normalize first"));

        // Exponential head keeps S positive even with a huge negative bias.
        s.net().head.layers.back().bias.value.setConstant(-50.0f);
        CHECK(s.predict_scale(n) > 0.0);
    }

    TEST_CASE("ground truth from normalization") {
        PointCloud c;
        c.points = blob(50, 3) * 4.0;
        const auto sample = make_scale_sample(c);
        CHECK(sample.scale == normalize_unit(c).inv_scale);
        const Eigen::Vector3d center = bbox_center(c.points);
        const double extent = (c.points.rowwise() - center.transpose()).cwiseAbs().maxCoeff();
        CHECK(sample.scale == doctest::Approx(extent / 0.9).epsilon(1e-12));
        CHECK(sample.cloud.scale_state == ScaleState::Normalized);
        const auto restored = restore_scale(sample.cloud, sample.scale);
        const double rextent = restored.points.cwiseAbs().maxCoeff();
        CHECK(std::abs(rextent - extent) < 1e-9);
    }

    TEST_CASE("training") {
        const auto cfg = small_scale_config();
        std::vector<ScaleSample> batch;
        for (int i = 0; i < 3; ++i) {
            PointCloud c;
            c.points = blob(80, 20 + i) * (1.0 + 0.4 * i);
            batch.push_back(make_scale_sample(c));
        }

        SUBCASE("batch loss equals a scalar loop") {
            ScalePredictor s(cfg, 2);
            double expected = 0.0;
            for (const auto& b : batch) {
                const double d = s.predict_scale(b.cloud) - b.scale;
                expected += d * d;
            }
            expected /= 3.0;
            ScaleTrainer t(s);
            CHECK(t.step(batch) == doctest::Approx(expected).epsilon(1e-7));
        }
        SUBCASE("zero learning rate") {
            ScalePredictor s(cfg, 2);
            const auto h = s.fingerprint();
            ScaleTrainer t(s, {0.0});
            t.step(batch);
            CHECK(s.fingerprint() == h);
        }
        SUBCASE("non-positive targets are rejected") {
            ScalePredictor s(cfg, 2);
            auto bad = batch;
            bad[0].scale = 0.0;
            bad[1].scale = -2.0;
            int rejected = 0;
            ScaleTrainer t(s);
            t.step(bad, &rejected);
            CHECK(rejected == 2);
            PointCloud metric;
            metric.points = blob(80, 1);
            CHECK_THROWS_WITH(t.step({{metric, 1.0}}), doctest::Contains("normalize first"));
        }
        SUBCASE("single-sample overfit within 1000 steps") {
            ScalePredictor s(cfg, 3);
            const std::vector<ScaleSample> one{batch[2]};
            ScaleTrainer t(s, {1e-3});
            auto loss = [&] {
                const double d = s.predict_scale(one[0].cloud) - one[0].scale;
                return d * d;
            };
            int steps = 0;
            while (steps < 1000 && loss() >= 1e-4) {
                t.step(one);
                ++steps;
            }
            MESSAGE("steps " << steps << " loss " << loss());
            CHECK(steps <= 1000);
            CHECK(loss() < 1e-4);
        }
        SUBCASE("checkpoint round trip") {
            const auto dir = temp_dir("scale");
            ScalePredictor s(cfg, 4);
            TrainOptions o;
            o.optimizer.lr = 1e-3;
            o.steps_per_epoch = 3;
            o.batch_size = 3;
            o.checkpoint_path = (dir / "s.ofa").string();
            train_scale(s, [&](int) { return batch; }, o);
            const auto r = ScalePredictor::load(o.checkpoint_path);
            CHECK(r.config() == cfg);
            CHECK(r.fingerprint() == s.fingerprint());
            CHECK(r.training().step == 3);
            CHECK(r.predict_scale(batch[0].cloud) == s.predict_scale(batch[0].cloud));
            CHECK(Archive::load(o.checkpoint_path).kind() == "scale");
            CHECK(ScaleConfig::paper_scale().encoder_blocks == 12);
            CHECK(ScaleConfig{}.encoder_blocks == 3);
            fs::remove_all(dir);
        }
    }
}
