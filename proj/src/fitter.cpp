#include "omnifit/fitter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include <Eigen/SVD>

#include "omnifit/objective.hpp"

namespace omnifit {

std::vector<bool> ParamSubset::coordinate_mask(int num_betas, int num_joints, int num_expressions) const {
    std::vector<bool> mask;
    mask.reserve(static_cast<size_t>(num_betas + 3 * num_joints + num_expressions + 3));
    const int nb = betas == kAllBetas ? num_betas : std::min(betas, num_betas);
    for (int i = 0; i < num_betas; ++i) mask.push_back(i < nb);
    for (int i = 0; i < 3 * num_joints; ++i) mask.push_back(theta);
    for (int i = 0; i < num_expressions; ++i) mask.push_back(psi);
    for (int i = 0; i < 3; ++i) mask.push_back(trans);
    return mask;
}

void FitSchedule::validate() const {
    if (stages.empty()) throw std::invalid_argument("fit schedule has no stages");
    for (size_t s = 0; s < stages.size(); ++s) {
        const auto& st = stages[s];
        if (st.steps < 1) throw std::invalid_argument("stage " + std::to_string(s + 1) + " needs steps >= 1");
        if (!(st.lr > 0.0)) throw std::invalid_argument("stage " + std::to_string(s + 1) + " needs lr > 0");
        if (st.active.empty()) throw std::invalid_argument("stage " + std::to_string(s + 1) + " has no active params");
    }
}

FitSchedule default_schedule(const DefaultScheduleOptions& options) {
    FitSchedule s;
    s.stages.push_back({ParamSubset{0, false, false, true}, 20, 0.5});
    s.stages.push_back({ParamSubset{2, true, false, options.stage2_translation}, 30, 0.5});
    s.stages.push_back({ParamSubset::everything(), 20, 0.2});
    return s;
}

namespace {

// Objective restricted to a subset of flattened coordinates, optionally in
// scaled variables z with x = scale * z.
class StageObjective {
public:
    StageObjective(const BodyModelAssets& assets, const LandmarkSpec& spec, const Points& targets,
                   const std::vector<bool>& mask, BodyParams base, std::vector<int> active, int theta_begin,
                   int theta_end, double theta_limit)
        : assets_(assets), spec_(spec), targets_(targets), mask_(mask), params_(std::move(base)),
          full_(params_.flatten()), active_(std::move(active)),
          scale_(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(active_.size()))), theta_begin_(theta_begin),
          theta_end_(theta_end), theta_limit_(theta_limit) {}

    bool is_theta(size_t i) const { return active_[i] >= theta_begin_ && active_[i] < theta_end_; }

    const Eigen::VectorXd& scale() const { return scale_; }

    // Inverse column norms of the finite-difference landmark Jacobian at the
    // current point. Columns that do not move any active landmark keep 1.
    void precondition() {
        constexpr double h = 1e-6;
        const Eigen::Index n = static_cast<Eigen::Index>(active_.size());
        Eigen::VectorXd norms(n);
        BodyParams probe = params_;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXd x = full_;
            x[active_[i]] += h;
            probe.assign(x);
            const Points plus = posed_landmarks(assets_, probe, spec_, mask_);
            x[active_[i]] -= 2 * h;
            probe.assign(x);
            const Points minus = posed_landmarks(assets_, probe, spec_, mask_);
            norms[i] = (plus - minus).norm() / (2 * h);
        }
        const double largest = n > 0 ? norms.maxCoeff() : 0.0;
        for (Eigen::Index i = 0; i < n; ++i) scale_[i] = norms[i] > 1e-9 * largest ? 1.0 / norms[i] : 1.0;
    }

    Eigen::VectorXd initial() const {
        Eigen::VectorXd z(active_.size());
        for (size_t i = 0; i < active_.size(); ++i) z[static_cast<Eigen::Index>(i)] = full_[active_[i]];
        return z.cwiseQuotient(scale_);
    }

    double operator()(const Eigen::VectorXd& z, Eigen::VectorXd& grad) {
        load(z);
        const auto r = objective_gradient(assets_, params_, targets_, spec_, mask_);
        const Eigen::VectorXd g = r.gradient.flatten();
        grad.resize(static_cast<Eigen::Index>(active_.size()));
        for (size_t i = 0; i < active_.size(); ++i) grad[static_cast<Eigen::Index>(i)] = g[active_[i]];
        grad.array() *= scale_.array();
        return r.loss;
    }

    double value(const Eigen::VectorXd& z) {
        load(z);
        return objective_value(assets_, params_, targets_, spec_, mask_);
    }

    BodyParams params_at(const Eigen::VectorXd& z) {
        load(z);
        return params_;
    }

private:
    void load(const Eigen::VectorXd& z) {
        for (size_t i = 0; i < active_.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            const double v = scale_[k] * z[k];
            full_[active_[i]] = is_theta(i) ? std::clamp(v, -theta_limit_, theta_limit_) : v;
        }
        params_.assign(full_);
    }

    const BodyModelAssets& assets_;
    const LandmarkSpec& spec_;
    const Points& targets_;
    const std::vector<bool>& mask_;
    BodyParams params_;
    Eigen::VectorXd full_;
    std::vector<int> active_;
    Eigen::VectorXd scale_;
    int theta_begin_, theta_end_;
    double theta_limit_;
};

double cubic_minimum(double x1, double f1, double g1, double x2, double f2, double g2, double lo, double hi) {
    const double d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    const double d2_square = d1 * d1 - g1 * g2;
    if (d2_square >= 0.0) {
        const double d2 = std::sqrt(d2_square);
        double pos;
        if (x1 <= x2) {
            pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2));
        } else {
            pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2));
        }
        if (std::isfinite(pos)) return std::clamp(pos, lo, hi);
    }
    return 0.5 * (lo + hi);
}

struct LineSearchResult {
    double loss;
    Eigen::VectorXd grad;
    double step;
    int evals;
};

// Strong-Wolfe bracketing and zoom with cubic interpolation.
template <typename F>
LineSearchResult strong_wolfe(F& func, const Eigen::VectorXd& x, double t, const Eigen::VectorXd& d, double f,
                              const Eigen::VectorXd& g, double gtd, double tolerance_change) {
    constexpr double c1 = 1e-4, c2 = 0.9;
    constexpr int max_ls = 25;
    const double d_norm = d.cwiseAbs().maxCoeff();

    Eigen::VectorXd g_new;
    double f_new = func(x + t * d, g_new);
    int evals = 1;
    double gtd_new = g_new.dot(d);

    double t_prev = 0.0, f_prev = f, gtd_prev = gtd;
    Eigen::VectorXd g_prev = g;
    bool done = false;
    int ls_iter = 0;

    double bt[2], bf[2], bgtd[2];
    Eigen::VectorXd bg[2];
    int bracket_size = 0;

    while (ls_iter < max_ls) {
        if (!std::isfinite(f_new) || f_new > f + c1 * t * gtd || (ls_iter > 1 && f_new >= f_prev)) {
            bt[0] = t_prev, bt[1] = t;
            bf[0] = f_prev, bf[1] = f_new;
            bg[0] = g_prev, bg[1] = g_new;
            bgtd[0] = gtd_prev, bgtd[1] = gtd_new;
            bracket_size = 2;
            break;
        }
        if (std::abs(gtd_new) <= -c2 * gtd) {
            bt[0] = t, bf[0] = f_new, bg[0] = g_new, bgtd[0] = gtd_new;
            bracket_size = 1;
            done = true;
            break;
        }
        if (gtd_new >= 0.0) {
            bt[0] = t_prev, bt[1] = t;
            bf[0] = f_prev, bf[1] = f_new;
            bg[0] = g_prev, bg[1] = g_new;
            bgtd[0] = gtd_prev, bgtd[1] = gtd_new;
            bracket_size = 2;
            break;
        }
        const double min_step = t + 0.01 * (t - t_prev);
        const double max_step = t * 10.0;
        const double tmp = t;
        t = cubic_minimum(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, min_step, max_step);
        t_prev = tmp;
        f_prev = f_new;
        g_prev = g_new;
        gtd_prev = gtd_new;
        f_new = func(x + t * d, g_new);
        ++evals;
        gtd_new = g_new.dot(d);
        ++ls_iter;
    }
    if (ls_iter == max_ls) {
        bt[0] = 0.0, bt[1] = t;
        bf[0] = f, bf[1] = f_new;
        bg[0] = g, bg[1] = g_new;
        bgtd[0] = gtd, bgtd[1] = gtd_new;
        bracket_size = 2;
    }

    bool insufficient_progress = false;
    int low = 0, high = 1;
    if (bracket_size == 2 && bf[0] > bf[1]) low = 1, high = 0;
    while (!done && bracket_size == 2 && ls_iter < max_ls) {
        if (std::abs(bt[1] - bt[0]) * d_norm < tolerance_change) break;
        const double lo = std::min(bt[0], bt[1]), hi = std::max(bt[0], bt[1]);
        double tz = std::isfinite(bf[0]) && std::isfinite(bf[1])
                        ? cubic_minimum(bt[0], bf[0], bgtd[0], bt[1], bf[1], bgtd[1], lo, hi)
                        : 0.5 * (lo + hi);
        const double eps = 0.1 * (hi - lo);
        if (std::min(hi - tz, tz - lo) < eps) {
            if (insufficient_progress || tz >= hi || tz <= lo) {
                tz = std::abs(tz - hi) < std::abs(tz - lo) ? hi - eps : lo + eps;
                insufficient_progress = false;
            } else {
                insufficient_progress = true;
            }
        } else {
            insufficient_progress = false;
        }
        f_new = func(x + tz * d, g_new);
        ++evals;
        gtd_new = g_new.dot(d);
        ++ls_iter;

        if (!std::isfinite(f_new) || f_new > f + c1 * tz * gtd || f_new >= bf[low]) {
            bt[high] = tz, bf[high] = f_new, bg[high] = g_new, bgtd[high] = gtd_new;
            if (bf[0] <= bf[1]) low = 0, high = 1;
            else low = 1, high = 0;
        } else {
            if (std::abs(gtd_new) <= -c2 * gtd) {
                done = true;
            } else if (gtd_new * (bt[high] - bt[low]) >= 0.0) {
                bt[high] = bt[low], bf[high] = bf[low], bg[high] = bg[low], bgtd[high] = bgtd[low];
            }
            bt[low] = tz, bf[low] = f_new, bg[low] = g_new, bgtd[low] = gtd_new;
        }
    }
    if (bracket_size == 1) low = 0;
    return {bf[low], bg[low], bt[low], evals};
}

class Lbfgs {
public:
    Lbfgs(const LbfgsSettings& s, double lr) : s_(s), lr_(lr) {}

    // One optimizer step: up to max_iterations quasi-Newton iterations.
    template <typename F>
    void step(F& func, Eigen::VectorXd& x) {
        Eigen::VectorXd g;
        double loss = func(x, g);
        if (!std::isfinite(loss)) throw FitError("non-finite loss");
        if (g.size() == 0 || g.cwiseAbs().maxCoeff() <= s_.tolerance_grad) return;

        const int max_evals = s_.max_iterations * 5 / 4;
        int evals = 1;
        for (int n = 0; n < s_.max_iterations; ++n) {
            ++total_iter_;
            if (total_iter_ == 1) {
                d_ = -g;
                dirs_.clear();
                steps_.clear();
                rho_.clear();
                h_diag_ = 1.0;
            } else {
                const Eigen::VectorXd y = g - prev_grad_;
                const Eigen::VectorXd sv = d_ * t_;
                const double ys = y.dot(sv);
                if (ys > 1e-10 * sv.norm() * y.norm()) {
                    if (static_cast<int>(dirs_.size()) == s_.history) {
                        dirs_.pop_front();
                        steps_.pop_front();
                        rho_.pop_front();
                    }
                    dirs_.push_back(y);
                    steps_.push_back(sv);
                    rho_.push_back(1.0 / ys);
                    h_diag_ = ys / y.squaredNorm();
                }
                const size_t m = dirs_.size();
                std::vector<double> alpha(m);
                Eigen::VectorXd q = -g;
                for (size_t i = m; i-- > 0;) {
                    alpha[i] = steps_[i].dot(q) * rho_[i];
                    q -= alpha[i] * dirs_[i];
                }
                d_ = q * h_diag_;
                for (size_t i = 0; i < m; ++i) {
                    const double b = dirs_[i].dot(d_) * rho_[i];
                    d_ += steps_[i] * (alpha[i] - b);
                }
            }
            prev_grad_ = g;
            const double prev_loss = loss;
            t_ = total_iter_ == 1 ? std::min(1.0, 1.0 / g.cwiseAbs().sum()) * lr_ : 1.0;
            const double gtd = g.dot(d_);
            if (gtd > -s_.tolerance_change) break;

            auto ls = strong_wolfe(func, x, t_, d_, loss, g, gtd, s_.tolerance_change);
            t_ = ls.step;
            x += t_ * d_;
            loss = ls.loss;
            g = std::move(ls.grad);
            evals += ls.evals;

            if (evals >= max_evals) break;
            if (g.cwiseAbs().maxCoeff() <= s_.tolerance_grad) break;
            if ((d_ * t_).cwiseAbs().maxCoeff() <= s_.tolerance_change) break;
            if (std::abs(loss - prev_loss) < s_.tolerance_change) break;
        }
    }

private:
    LbfgsSettings s_;
    double lr_;
    int total_iter_ = 0;
    Eigen::VectorXd d_, prev_grad_;
    double t_ = 0.0, h_diag_ = 1.0;
    std::deque<Eigen::VectorXd> dirs_, steps_;
    std::deque<double> rho_;
};

class Adam {
public:
    Adam(const AdamSettings& s, double lr, Eigen::Index n)
        : s_(s), lr_(lr), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

    template <typename F>
    void step(F& func, Eigen::VectorXd& x) {
        Eigen::VectorXd g;
        const double loss = func(x, g);
        if (!std::isfinite(loss)) throw FitError("non-finite loss");
        ++t_;
        m_ = s_.beta1 * m_ + (1.0 - s_.beta1) * g;
        v_ = s_.beta2 * v_ + (1.0 - s_.beta2) * g.cwiseAbs2();
        const double bc1 = 1.0 - std::pow(s_.beta1, t_);
        const double bc2 = 1.0 - std::pow(s_.beta2, t_);
        x.array() -= lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + s_.epsilon);
    }

private:
    AdamSettings s_;
    double lr_;
    Eigen::VectorXd m_, v_;
    int t_ = 0;
};

int count_active(const std::vector<bool>& mask) { return static_cast<int>(std::count(mask.begin(), mask.end(), true)); }

}  // namespace

FitReport fit(const BodyModelAssets& assets, const LandmarkSpec& spec, const Points& target_landmarks,
              const FitSchedule& schedule, const std::vector<bool>& mask, const BodyParams& init) {
    schedule.validate();
    check_dimensions(assets, init);
    if (!target_landmarks.allFinite()) throw std::invalid_argument("target landmarks contain non-finite values");
    if (static_cast<int>(mask.size()) != spec.size()) {
        throw DimensionError("mask has " + std::to_string(mask.size()) + " entries, spec has " +
                             std::to_string(spec.size()));
    }
    if (count_active(mask) == 0) throw std::invalid_argument("no active landmarks");

    const int B = assets.num_betas(), J = assets.num_joints(), E = assets.num_expressions();
    const int theta_begin = B, theta_end = B + 3 * J;

    // Fit in a frame centered on the active targets so the result does not
    // depend on where the scan sits in space.
    Eigen::RowVector3d center = Eigen::RowVector3d::Zero();
    for (int i = 0; i < spec.size(); ++i)
        if (mask[i]) center += target_landmarks.row(i);
    center /= count_active(mask);
    const Points centered = target_landmarks.rowwise() - center;
    bool trans_active = false;

    FitReport report;
    report.params = init;
    report.params.trans -= center.transpose();
    for (size_t s = 0; s < schedule.stages.size(); ++s) {
        const FitStage& stage = schedule.stages[s];
        const auto start = std::chrono::steady_clock::now();
        const auto coord_mask = stage.active.coordinate_mask(B, J, E);
        trans_active = trans_active || stage.active.trans;
        std::vector<int> active;
        for (int i = 0; i < static_cast<int>(coord_mask.size()); ++i)
            if (coord_mask[i]) active.push_back(i);

        StageObjective objective(assets, spec, centered, mask, report.params, active, theta_begin, theta_end,
                                 schedule.theta_limit);
        if (schedule.optimizer == FitOptimizer::Lbfgs) objective.precondition();
        Eigen::VectorXd x = objective.initial();
        std::vector<double> curve;
        curve.reserve(static_cast<size_t>(stage.steps));

        Lbfgs lbfgs(schedule.lbfgs, stage.lr);
        Adam adam(schedule.adam, stage.lr, x.size());
        for (int k = 0; k < stage.steps; ++k) {
            try {
                if (schedule.optimizer == FitOptimizer::Lbfgs) {
                    lbfgs.step(objective, x);
                } else {
                    adam.step(objective, x);
                }
            } catch (const FitError&) {
                throw FitError("non-finite loss in stage " + std::to_string(s + 1) + " step " + std::to_string(k + 1));
            }
            for (size_t i = 0; i < active.size(); ++i) {
                if (objective.is_theta(i)) {
                    const auto c = static_cast<Eigen::Index>(i);
                    const double sc = objective.scale()[c];
                    if (std::abs(sc * x[c]) > schedule.theta_limit) x[c] = std::copysign(schedule.theta_limit, x[c]) / sc;
                }
            }
            const double loss = objective.value(x);
            if (!std::isfinite(loss)) {
                throw FitError("non-finite loss in stage " + std::to_string(s + 1) + " step " + std::to_string(k + 1));
            }
            curve.push_back(loss);
        }
        report.params = objective.params_at(x);
        report.stage_losses.push_back(std::move(curve));
        report.stage_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    // Untouched translation goes back bit-exact rather than through the shift.
    report.params.trans = trans_active ? Eigen::Vector3d(report.params.trans + center.transpose()) : init.trans;
    report.final_loss = objective_value(assets, report.params, target_landmarks, spec, mask);
    report.landmark_rmse = std::sqrt(report.final_loss / count_active(mask));
    return report;
}

std::vector<bool> visibility_mask(const Points& landmarks, const Points& cloud, double threshold) {
    if (cloud.rows() == 0) throw std::invalid_argument("visibility_mask needs a non-empty cloud");
    const double t2 = threshold * threshold;
    std::vector<bool> mask(static_cast<size_t>(landmarks.rows()));
    for (Eigen::Index i = 0; i < landmarks.rows(); ++i) {
        const double best = (cloud.rowwise() - landmarks.row(i)).rowwise().squaredNorm().minCoeff();
        mask[static_cast<size_t>(i)] = best <= t2;
    }
    return mask;
}

FitReport fit_masked_partial(const BodyModelAssets& assets, const LandmarkSpec& spec, const Points& targets,
                             const std::vector<bool>& visibility, const FitSchedule& schedule,
                             const BodyParams& init) {
    if (static_cast<int>(visibility.size()) != spec.size()) {
        throw DimensionError("visibility mask has " + std::to_string(visibility.size()) + " entries, spec has " +
                             std::to_string(spec.size()));
    }
    const int active = count_active(visibility);
    if (active < 4) {
        throw std::invalid_argument("partial fit needs at least 4 active landmarks, got " + std::to_string(active));
    }
    Points pts(active, 3);
    for (int i = 0, k = 0; i < spec.size(); ++i)
        if (visibility[i]) pts.row(k++) = targets.row(i);
    const Points centered = pts.rowwise() - pts.colwise().mean();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    const auto sv = svd.singularValues();
    if (!(sv[1] > 1e-9 * std::max(sv[0], 1e-300))) {
        throw std::invalid_argument("active landmarks are collinear; partial fit is degenerate");
    }
    return fit(assets, spec, targets, schedule, visibility, init);
}

double landmark_rmse(const BodyModelAssets& assets, const BodyParams& params, const Points& targets,
                     const LandmarkSpec& spec, const std::vector<bool>& mask) {
    const double loss = objective_value(assets, params, targets, spec, mask);
    return std::sqrt(loss / count_active(mask));
}

}  // namespace omnifit
