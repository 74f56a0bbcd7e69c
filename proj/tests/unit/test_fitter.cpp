#include <doctest.h>

#include <cmath>
#include <random>

#include "omnifit/fitter.hpp"
#include "omnifit/objective.hpp"
#include "oracles.hpp"

using namespace omnifit;

namespace {

struct RoundTrip {
    BodyModelAssets model = make_toy_model(500, 12, 7);
    LandmarkSpec spec = default_spec(model, Allocation{40, 30, 80}, 0);
    std::vector<bool> full = std::vector<bool>(spec.entries.size(), true);

    BodyParams sample(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        auto p = BodyParams::zeros(model);
        for (int i = 0; i < p.beta.size(); ++i) p.beta[i] = 0.5 * u(rng);
        for (int i = 0; i < p.theta.size(); ++i) p.theta.data()[i] = 0.1 * u(rng);
        return p;
    }
    Points landmarks(const BodyParams& p) const { return extract_landmarks(lbs_forward(model, p).vertices, spec); }
};

bool same_params(const BodyParams& a, const BodyParams& b) {
    return a.beta == b.beta && a.theta == b.theta && a.psi == b.psi && a.trans == b.trans;
}

}  // namespace

TEST_SUITE("fitter") {

TEST_CASE("default schedule") {
    const auto s = default_schedule();
    REQUIRE(s.stages.size() == 3);
    CHECK(s.stages[0].steps == 20);
    CHECK(s.stages[1].steps == 30);
    CHECK(s.stages[2].steps == 20);
    CHECK(s.stages[0].lr == 0.5);
    CHECK(s.stages[1].lr == 0.5);
    CHECK(s.stages[2].lr == 0.2);
    CHECK(s.stages[0].active == ParamSubset{0, false, false, true});
    CHECK(s.stages[1].active == ParamSubset{2, true, false, false});
    CHECK(s.stages[2].active == ParamSubset::everything());
    CHECK(default_schedule({true}).stages[1].active.trans);

    const auto mask = s.stages[1].active.coordinate_mask(10, 4, 3);
    REQUIRE(mask.size() == 10 + 12 + 3 + 3);
    for (int i = 0; i < 10; ++i) CHECK(mask[i] == (i < 2));
    for (int i = 10; i < 22; ++i) CHECK(mask[i]);
    for (int i = 22; i < 28; ++i) CHECK_FALSE(mask[i]);
}

TEST_CASE("schedule validation") {
    FitSchedule s;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.stages.push_back({ParamSubset{0, false, false, true}, 0, 0.1});
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.stages[0].steps = 1;
    s.stages[0].lr = 0.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.stages[0].lr = 0.1;
    s.stages[0].active = ParamSubset{};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("ground truth init is a fixed point") {
    const RoundTrip rt;
    std::mt19937_64 rng(2);
    const auto gt = rt.sample(rng);
    // Adam is left out: rounding-level gradients still produce lr-sized steps.
    const auto r = fit(rt.model, rt.spec, rt.landmarks(gt), default_schedule(), rt.full, gt);
    CHECK(r.landmark_rmse < 1e-12);
    CHECK((r.params.flatten() - gt.flatten()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("translation stage recovers a pure shift") {
    const RoundTrip rt;
    std::mt19937_64 rng(4);
    const auto init = rt.sample(rng);
    const Eigen::RowVector3d d(0.31, -0.12, 0.07);
    const Points target = rt.landmarks(init).rowwise() + d;
    FitSchedule s = default_schedule();
    s.stages.resize(1);
    const auto r = fit(rt.model, rt.spec, target, s, rt.full, init);
    CHECK((r.params.trans - (init.trans + d.transpose())).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("first adam step moves each active coordinate by lr") {
    const RoundTrip rt;
    const auto init = BodyParams::zeros(rt.model);
    const Eigen::RowVector3d d(0.3, -0.2, 0.1);
    const Points target = rt.landmarks(init).rowwise() + d;
    FitSchedule s;
    s.optimizer = FitOptimizer::Adam;
    s.stages.push_back({ParamSubset{0, false, false, true}, 1, 0.05});
    const auto r = fit(rt.model, rt.spec, target, s, rt.full, init);
    // m/sqrt(v) after bias correction is sign(g) up to epsilon.
    for (int i = 0; i < 3; ++i) CHECK(r.params.trans[i] == doctest::Approx(0.05 * (d[i] > 0 ? 1 : -1)).epsilon(1e-6));
}

TEST_CASE("round trip recovers small perturbations") {
    const RoundTrip rt;
    std::mt19937_64 rng(17);
    int ok = 0;
    for (int t = 0; t < 10; ++t) {
        const auto gt = rt.sample(rng);
        const auto r = fit(rt.model, rt.spec, rt.landmarks(gt), default_schedule(), rt.full, BodyParams::zeros(rt.model));
        ok += r.landmark_rmse < 1e-3;
    }
    CHECK(ok >= 9);
}

TEST_CASE("report shape and loss curves") {
    const RoundTrip rt;
    std::mt19937_64 rng(5);
    const auto gt = rt.sample(rng);
    const auto s = default_schedule();
    const auto r = fit(rt.model, rt.spec, rt.landmarks(gt), s, rt.full, BodyParams::zeros(rt.model));
    REQUIRE(r.stage_losses.size() == 3);
    REQUIRE(r.stage_seconds.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(static_cast<int>(r.stage_losses[i].size()) == s.stages[i].steps);
    CHECK(r.stage_losses.back().back() == doctest::Approx(r.final_loss).epsilon(1e-6));
    CHECK(r.landmark_rmse == doctest::Approx(std::sqrt(r.final_loss / rt.spec.size())));
}

TEST_CASE("inactive parameters are bit-frozen per stage") {
    const RoundTrip rt;
    std::mt19937_64 rng(8);
    const auto gt = rt.sample(rng);
    auto init = rt.sample(rng);
    init.trans << 0.05, -0.02, 0.01;
    const Points target = rt.landmarks(gt);
    for (auto opt : {FitOptimizer::Lbfgs, FitOptimizer::Adam}) {
        FitSchedule one = default_schedule();
        one.optimizer = opt;
        BodyParams current = init;
        for (const auto& stage : default_schedule().stages) {
            one.stages = {stage};
            const auto r = fit(rt.model, rt.spec, target, one, rt.full, current);
            const auto active =
                stage.active.coordinate_mask(rt.model.num_betas(), rt.model.num_joints(), rt.model.num_expressions());
            const Eigen::VectorXd before = current.flatten(), after = r.params.flatten();
            int moved = 0;
            for (int i = 0; i < before.size(); ++i) {
                if (!active[i]) CHECK(before[i] == after[i]);
                else moved += before[i] != after[i];
            }
            CHECK(moved > 0);
            current = r.params;
        }
    }
}

TEST_CASE("fit is deterministic") {
    const RoundTrip rt;
    std::mt19937_64 rng(9);
    const auto gt = rt.sample(rng);
    const Points target = rt.landmarks(gt);
    const auto a = fit(rt.model, rt.spec, target, default_schedule(), rt.full, BodyParams::zeros(rt.model));
    const auto b = fit(rt.model, rt.spec, target, default_schedule(), rt.full, BodyParams::zeros(rt.model));
    CHECK(same_params(a.params, b.params));
    CHECK(a.stage_losses == b.stage_losses);
    CHECK(a.final_loss == b.final_loss);
}

TEST_CASE("translating targets translates the fit") {
    const RoundTrip rt;
    std::mt19937_64 rng(10);
    const Eigen::RowVector3d d(0.2, -0.15, 0.3);
    for (int t = 0; t < 3; ++t) {
        const auto gt = rt.sample(rng);
        const Points target = rt.landmarks(gt);
        const auto a = fit(rt.model, rt.spec, target, default_schedule(), rt.full, BodyParams::zeros(rt.model));
        const auto b = fit(rt.model, rt.spec, Points(target.rowwise() + d), default_schedule(), rt.full,
                           BodyParams::zeros(rt.model));
        CHECK((b.params.trans - a.params.trans - d.transpose()).cwiseAbs().maxCoeff() < 1e-4);
        CHECK((b.params.beta - a.params.beta).cwiseAbs().maxCoeff() < 1e-4);
        CHECK((b.params.theta - a.params.theta).cwiseAbs().maxCoeff() < 1e-4);
        CHECK((b.params.psi - a.params.psi).cwiseAbs().maxCoeff() < 1e-4);
    }
}

TEST_CASE("theta stays within the clamp") {
    const RoundTrip rt;
    std::mt19937_64 rng(12);
    const auto gt = rt.sample(rng);
    auto s = default_schedule();
    s.theta_limit = 0.02;
    const auto r = fit(rt.model, rt.spec, rt.landmarks(gt), s, rt.full, BodyParams::zeros(rt.model));
    CHECK(r.params.theta.cwiseAbs().maxCoeff() <= 0.02);
}

TEST_CASE("fit errors") {
    const RoundTrip rt;
    const auto zero = BodyParams::zeros(rt.model);
    const Points target = rt.landmarks(zero);
    SUBCASE("empty mask") {
        const std::vector<bool> none(rt.spec.entries.size(), false);
        CHECK_THROWS_WITH_AS(fit(rt.model, rt.spec, target, default_schedule(), none, zero), "no active landmarks",
                             std::invalid_argument);
    }
    SUBCASE("mask length") {
        CHECK_THROWS_AS(fit(rt.model, rt.spec, target, default_schedule(), std::vector<bool>(3, true), zero),
                        DimensionError);
    }
    SUBCASE("non-finite targets") {
        Points bad = target;
        bad(2, 1) = std::nan("");
        CHECK_THROWS_AS(fit(rt.model, rt.spec, bad, default_schedule(), rt.full, zero), std::invalid_argument);
    }
    SUBCASE("overflowing loss names stage and step") {
        auto init = zero;
        init.trans << 1e200, 0.0, 0.0;
        CHECK_THROWS_WITH_AS(fit(rt.model, rt.spec, target, default_schedule(), rt.full, init),
                             doctest::Contains("stage 1 step 1"), FitError);
    }
}

TEST_CASE("visibility mask") {
    Points lm(3, 3);
    lm << 0, 0, 0, 1, 0, 0, 0, 0.05, 0;
    Points cloud(2, 3);
    cloud << 0.01, 0, 0, 0, 0.2, 0;
    const auto m = visibility_mask(lm, cloud, 0.10);
    CHECK(m == std::vector<bool>{true, false, true});
    CHECK_THROWS_AS(visibility_mask(lm, Points(0, 3)), std::invalid_argument);
}

TEST_CASE("masked partial fit") {
    const RoundTrip rt;
    std::mt19937_64 rng(13);
    const auto gt = rt.sample(rng);
    const Points target = rt.landmarks(gt);
    const auto zero = BodyParams::zeros(rt.model);

    SUBCASE("full mask reduces to fit") {
        const auto a = fit_masked_partial(rt.model, rt.spec, target, rt.full, default_schedule(), zero);
        const auto b = fit(rt.model, rt.spec, target, default_schedule(), rt.full, zero);
        CHECK(same_params(a.params, b.params));
    }
    SUBCASE("fewer than four landmarks") {
        std::vector<bool> m(rt.spec.entries.size(), false);
        m[0] = m[1] = m[2] = true;
        CHECK_THROWS_AS(fit_masked_partial(rt.model, rt.spec, target, m, default_schedule(), zero),
                        std::invalid_argument);
    }
    SUBCASE("collinear landmarks") {
        Points line = target;
        for (int i = 0; i < line.rows(); ++i) line.row(i) = Eigen::RowVector3d(0, 0.01 * i, 0);
        std::vector<bool> m(rt.spec.entries.size(), false);
        for (int i = 0; i < 6; ++i) m[i] = true;
        CHECK_THROWS_WITH_AS(fit_masked_partial(rt.model, rt.spec, line, m, default_schedule(), zero),
                             doctest::Contains("collinear"), std::invalid_argument);
    }
    SUBCASE("hand landmarks masked") {
        auto m = region_mask(rt.spec, Region::Hand);
        m.flip();
        const auto masked = fit_masked_partial(rt.model, rt.spec, target, m, default_schedule(), zero);
        const auto full = fit(rt.model, rt.spec, target, default_schedule(), rt.full, zero);
        const auto body = region_mask(rt.spec, Region::Body);
        const double rm = landmark_rmse(rt.model, masked.params, target, rt.spec, body);
        const double rf = landmark_rmse(rt.model, full.params, target, rt.spec, body);
        CHECK(rm <= 2.0 * rf);
    }
}

}  // TEST_SUITE
