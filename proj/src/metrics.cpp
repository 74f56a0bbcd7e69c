#include "omnifit/metrics.hpp"

#include <cstdio>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "omnifit/landmark_spec.hpp"

namespace omnifit {

namespace {

constexpr double kCentimeters = 100.0;

double mean_of(const Eigen::VectorXd& d, const std::vector<int>& idx) {
    double s = 0.0;
    for (int i : idx) s += d[i];
    return s / static_cast<double>(idx.size());
}

RegionMetric region_means(const Points& pred, const Points& gt, const RegionSets& regions, const MetricOptions& options,
                          const char* what) {
    if (pred.rows() != gt.rows()) {
        throw DimensionError(std::string(what) + ": prediction has " + std::to_string(pred.rows()) +
                             " rows, ground truth " + std::to_string(gt.rows()));
    }
    if (pred.rows() == 0) throw DimensionError(std::string(what) + ": empty input");
    for (const auto* set : {&regions.hands, &regions.head, &regions.body}) {
        for (int i : *set) {
            if (i < 0 || i >= pred.rows()) throw DimensionError(std::string(what) + ": region index out of range");
        }
    }
    const Points aligned = options.procrustes ? procrustes_align(pred, gt) : pred;
    const Eigen::VectorXd d = (aligned - gt).rowwise().norm() * kCentimeters;
    RegionMetric m;
    m.all = d.mean();
    if (!regions.hands.empty()) m.hands = mean_of(d, regions.hands);
    if (!regions.head.empty()) m.head = mean_of(d, regions.head);
    if (!regions.body.empty()) m.body = mean_of(d, regions.body);
    return m;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string cell(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", *v);
    return buf;
}

}  // namespace

RegionSets RegionSets::from_labels(const std::vector<Region>& labels) {
    RegionSets s;
    for (size_t i = 0; i < labels.size(); ++i) {
        switch (labels[i]) {
            case Region::Hand: s.hands.push_back(static_cast<int>(i)); break;
            case Region::Head: s.head.push_back(static_cast<int>(i)); break;
            case Region::Body: s.body.push_back(static_cast<int>(i)); break;
        }
    }
    return s;
}

RegionSets vertex_region_sets(const BodyModelAssets& assets) { return RegionSets::from_labels(vertex_regions(assets)); }

RegionSets joint_region_sets(const BodyModelAssets& assets) {
    if (assets.joint_regions.size() != static_cast<size_t>(assets.num_joints())) {
        throw DimensionError("joint_regions has " + std::to_string(assets.joint_regions.size()) + " entries for " +
                             std::to_string(assets.num_joints()) + " joints");
    }
    return RegionSets::from_labels(assets.joint_regions);
}

nlohmann::json RegionMetric::to_json() const {
    return {{"all", all}, {"hands", opt_json(hands)}, {"head", opt_json(head)}, {"body", opt_json(body)}};
}

RegionMetric v2v(const Points& pred_vertices, const Points& gt_vertices, const RegionSets& regions,
                 const MetricOptions& options) {
    return region_means(pred_vertices, gt_vertices, regions, options, "v2v");
}

RegionMetric mpjpe(const Points& pred_joints, const Points& gt_joints, const RegionSets& regions,
                   const MetricOptions& options) {
    return region_means(pred_joints, gt_joints, regions, options, "mpjpe");
}

Points procrustes_align(const Points& src, const Points& dst) {
    if (src.rows() != dst.rows()) throw DimensionError("procrustes: point counts differ");
    const Eigen::RowVector3d ms = src.colwise().mean(), md = dst.colwise().mean();
    const Points a = src.rowwise() - ms, b = dst.rowwise() - md;
    const Eigen::Matrix3d cov = b.transpose() * a;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1;
    const Eigen::Matrix3d r = svd.matrixU() * s * svd.matrixV().transpose();
    const double var = a.squaredNorm();
    const double scale = var > 0 ? (svd.singularValues().asDiagonal() * s).trace() / var : 1.0;
    return ((a * r.transpose()) * scale).rowwise() + md;
}

nlohmann::json EvalResult::to_json() const {
    return {{"samples", samples}, {"v2v_cm", v2v_cm.to_json()}, {"mpjpe_cm", mpjpe_cm.to_json()}};
}

std::string EvalResult::text_table() const {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-12s %9s %9s %9s %9s\n", "metric", "All", "Hands", "Head", "Body");
    out << line;
    for (const auto& [name, m] : {std::pair<const char*, const RegionMetric*>{"V2V (cm)", &v2v_cm},
                                  std::pair<const char*, const RegionMetric*>{"MPJPE (cm)", &mpjpe_cm}}) {
        std::snprintf(line, sizeof(line), "%-12s %9s %9s %9s %9s\n", name, cell(m->all).c_str(), cell(m->hands).c_str(),
                      cell(m->head).c_str(), cell(m->body).c_str());
        out << line;
    }
    out << "samples: " << samples << "\n";
    return out.str();
}

MetricAccumulator::MetricAccumulator(const BodyModelAssets& assets, MetricOptions options)
    : assets_(assets),
      options_(options),
      vertex_sets_(vertex_region_sets(assets)),
      joint_sets_(joint_region_sets(assets)) {}

void MetricAccumulator::add(const BodyParams& predicted, const BodyParams& ground_truth) {
    const auto p = lbs_forward(assets_, predicted);
    const auto g = lbs_forward(assets_, ground_truth);
    v2v_.push_back(v2v(p.vertices, g.vertices, vertex_sets_, options_));
    mpjpe_.push_back(mpjpe(p.joints, g.joints, joint_sets_, options_));
}

EvalResult MetricAccumulator::result() const {
    auto average = [](const std::vector<RegionMetric>& xs) {
        RegionMetric m;
        if (xs.empty()) return m;
        auto avg = [&](auto get) -> std::optional<double> {
            double s = 0.0;
            for (const auto& x : xs) {
                const std::optional<double> v = get(x);
                if (!v) return std::nullopt;
                s += *v;
            }
            return s / static_cast<double>(xs.size());
        };
        m.all = *avg([](const RegionMetric& x) { return std::optional<double>(x.all); });
        m.hands = avg([](const RegionMetric& x) { return x.hands; });
        m.head = avg([](const RegionMetric& x) { return x.head; });
        m.body = avg([](const RegionMetric& x) { return x.body; });
        return m;
    };
    EvalResult r;
    r.samples = static_cast<int>(v2v_.size());
    r.v2v_cm = average(v2v_);
    r.mpjpe_cm = average(mpjpe_);
    return r;
}

EvalResult evaluate_dataset(const std::vector<EvalItem>& items, const BodyModelAssets& assets,
                            const MetricOptions& options) {
    MetricAccumulator acc(assets, options);
    for (const auto& item : items) acc.add(item.fit.params, item.ground_truth);
    return acc.result();
}

}  // namespace omnifit
