#include "omnifit/landmark_spec.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

namespace omnifit {

int Allocation::count(Region r) const {
    switch (r) {
        case Region::Head: return head;
        case Region::Body: return body;
        case Region::Hand: return hands;
    }
    return 0;
}

Allocation ablation_allocation(char setting) {
    switch (setting) {
        case 'A': return {300, 120, 180};
        case 'B': return {240, 120, 240};
        case 'C': return {180, 120, 300};
        case 'D': return {120, 120, 360};
        default: throw std::invalid_argument(std::string("unknown allocation setting '") + setting + "'");
    }
}

std::vector<int32_t> LandmarkSpec::indices() const {
    std::vector<int32_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.vertex);
    return out;
}

void LandmarkSpec::validate(int num_vertices) const {
    std::set<int32_t> seen;
    int counts[3] = {0, 0, 0};
    for (const auto& e : entries) {
        if (e.vertex < 0 || e.vertex >= num_vertices) {
            throw std::out_of_range("landmark vertex " + std::to_string(e.vertex) + " outside [0, " +
                                    std::to_string(num_vertices) + ")");
        }
        if (!seen.insert(e.vertex).second) {
            throw InvariantError("landmark vertex " + std::to_string(e.vertex) + " appears twice");
        }
        ++counts[static_cast<int>(e.region)];
    }
    for (Region r : kAllRegions) {
        if (counts[static_cast<int>(r)] != allocation.count(r)) {
            throw InvariantError("spec has " + std::to_string(counts[static_cast<int>(r)]) + " " +
                                 std::string(region_name(r)) + " landmarks, allocation declares " +
                                 std::to_string(allocation.count(r)));
        }
    }
}

nlohmann::json LandmarkSpec::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["allocation"] = {{"hands", allocation.hands}, {"head", allocation.head}, {"body", allocation.body}};
    auto arr = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back({{"v", e.vertex}, {"region", std::string(region_name(e.region))}});
    j["entries"] = std::move(arr);
    return j;
}

LandmarkSpec LandmarkSpec::from_json(const nlohmann::json& j) {
    LandmarkSpec spec;
    spec.name = j.value("name", std::string{});
    const auto& a = j.at("allocation");
    spec.allocation = {a.at("hands").get<int>(), a.at("head").get<int>(), a.at("body").get<int>()};
    for (const auto& e : j.at("entries")) {
        spec.entries.push_back({e.at("v").get<int32_t>(), parse_region(e.at("region").get<std::string>())});
    }
    return spec;
}

void LandmarkSpec::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write landmark spec '" + path + "'");
    out << to_json().dump(2) << "\n";
}

LandmarkSpec LandmarkSpec::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read landmark spec '" + path + "'");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed landmark spec '" + path + "': " + e.what());
    }
}

namespace {

// Farthest-point sampling over candidate rows of points. Ties go to the lowest
// candidate position.
std::vector<int32_t> farthest_points(const Points& points, const std::vector<int32_t>& candidates, int count,
                                     size_t start) {
    std::vector<int32_t> chosen;
    if (count == 0) return chosen;
    const size_t n = candidates.size();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    size_t current = start;
    for (int k = 0; k < count; ++k) {
        chosen.push_back(candidates[current]);
        const Eigen::RowVector3d c = points.row(candidates[current]);
        size_t best = 0;
        double best_d = -1.0;
        for (size_t i = 0; i < n; ++i) {
            const double d = (points.row(candidates[i]) - c).squaredNorm();
            if (d < dist[i]) dist[i] = d;
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        current = best;
    }
    return chosen;
}

}  // namespace

LandmarkSpec default_spec(const BodyModelAssets& assets, const Allocation& allocation, uint64_t seed) {
    return default_spec(assets, vertex_regions(assets), allocation, seed);
}

LandmarkSpec default_spec(const BodyModelAssets& assets, const std::vector<Region>& vertex_labels,
                          const Allocation& allocation, uint64_t seed) {
    if (static_cast<int>(vertex_labels.size()) != assets.num_vertices()) {
        throw DimensionError("region labels cover " + std::to_string(vertex_labels.size()) + " vertices, model has " +
                             std::to_string(assets.num_vertices()));
    }
    LandmarkSpec spec;
    spec.allocation = allocation;
    spec.name = "dense-" + std::to_string(allocation.hands) + "-" + std::to_string(allocation.head) + "-" +
                std::to_string(allocation.body) + "-s" + std::to_string(seed);

    std::mt19937_64 rng(seed);
    for (Region r : kAllRegions) {
        std::vector<int32_t> candidates;
        for (int v = 0; v < assets.num_vertices(); ++v) {
            if (vertex_labels[v] == r) candidates.push_back(v);
        }
        const int want = allocation.count(r);
        if (want < 0) throw std::invalid_argument("negative landmark count");
        if (want > static_cast<int>(candidates.size())) {
            throw std::invalid_argument("region " + std::string(region_name(r)) + " has " +
                                        std::to_string(candidates.size()) + " vertices, allocation asks for " +
                                        std::to_string(want));
        }
        if (want == 0) continue;
        const size_t start = std::uniform_int_distribution<size_t>(0, candidates.size() - 1)(rng);
        for (int32_t v : farthest_points(assets.template_vertices, candidates, want, start)) {
            spec.entries.push_back({v, r});
        }
    }
    return spec;
}

Points extract_landmarks(const Points& vertices, const LandmarkSpec& spec) {
    Points out(spec.size(), 3);
    for (int i = 0; i < spec.size(); ++i) {
        const int32_t v = spec.entries[i].vertex;
        if (v < 0 || v >= vertices.rows()) {
            throw std::out_of_range("landmark " + std::to_string(i) + " references vertex " + std::to_string(v) +
                                    " but mesh has " + std::to_string(vertices.rows()) + " vertices");
        }
        out.row(i) = vertices.row(v);
    }
    return out;
}

std::vector<bool> region_mask(const LandmarkSpec& spec, Region region) {
    std::vector<bool> mask(spec.entries.size());
    for (size_t i = 0; i < spec.entries.size(); ++i) mask[i] = spec.entries[i].region == region;
    return mask;
}

std::vector<Region> load_region_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read region labels '" + path + "'");
    const auto j = nlohmann::json::parse(in);
    std::vector<Region> out;
    for (const auto& s : j.at("regions")) out.push_back(parse_region(s.get<std::string>()));
    return out;
}

void save_region_labels(const std::string& path, const std::vector<Region>& labels) {
    nlohmann::json j;
    auto arr = nlohmann::json::array();
    for (Region r : labels) arr.push_back(std::string(region_name(r)));
    j["regions"] = std::move(arr);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write region labels '" + path + "'");
    out << j.dump() << "\n";
}

}  // namespace omnifit
