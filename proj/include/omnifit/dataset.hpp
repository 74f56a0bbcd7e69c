#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "omnifit/body_model.hpp"
#include "omnifit/geometry.hpp"
#include "omnifit/landmark_spec.hpp"

namespace omnifit {

struct ManifestEntry {
    std::string mesh_path;
    std::string params_path;  // may be empty
    std::optional<std::string> image_path;
};

// JSON lines, one object per record: {"mesh_path", "params_path", "image_path"?}.
// Relative paths resolve against the manifest's directory. Schema errors
// name the offending line.
std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::string& base_dir = "");
std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

struct DatasetRecord {
    TriMesh mesh;
    std::optional<BodyParams> params;
    std::optional<std::string> image_path;
    std::string missing_reason;  // set when params is empty
};

class DatasetSource {
public:
    virtual ~DatasetSource() = default;
    virtual size_t size() const = 0;
    virtual DatasetRecord get(size_t index) const = 0;
    virtual std::string describe(size_t index) const { return "record " + std::to_string(index); }
};

class ManifestDataset final : public DatasetSource {
public:
    explicit ManifestDataset(std::vector<ManifestEntry> entries) : entries_(std::move(entries)) {}
    static ManifestDataset from_file(const std::string& path) { return ManifestDataset(load_manifest(path)); }
    size_t size() const override { return entries_.size(); }
    DatasetRecord get(size_t index) const override;
    std::string describe(size_t index) const override;

private:
    std::vector<ManifestEntry> entries_;
};

class InMemoryDataset final : public DatasetSource {
public:
    explicit InMemoryDataset(std::vector<DatasetRecord> records) : records_(std::move(records)) {}
    size_t size() const override { return records_.size(); }
    DatasetRecord get(size_t index) const override { return records_.at(index); }

private:
    std::vector<DatasetRecord> records_;
};

// Posed body as a triangle mesh.
TriMesh posed_mesh(const BodyModelAssets& assets, const BodyParams& params);

struct ToyParamRanges {
    double beta = 1.0;
    double theta = 0.2;  // radians, every joint except the root
    double psi = 0.5;
};

// Uniform in [-r, r] per coefficient; root orientation and translation zero.
BodyParams sample_toy_params(const BodyModelAssets& assets, std::mt19937_64& rng, const ToyParamRanges& ranges = {});
// Posed model meshes with their generating params.
std::vector<DatasetRecord> make_toy_records(const BodyModelAssets& assets, int count, uint64_t seed,
                                            const ToyParamRanges& ranges = {});

// Toy humans whose proportions follow their size: the girth coefficient
// beta[1] is girth_per_doubling * log2(scale), so a size-normalized cloud
// still reveals the scale.
struct AllometricOptions {
    double min_scale = 0.5;
    double max_scale = 2.0;
    double girth_per_doubling = -4.0;
    double beta_noise = 0.2;  // every other beta except beta[0], which stays 0
    double theta = 0.1;
    double psi = 0.5;
};

struct ScaledBody {
    BodyParams params;
    double scale = 1.0;  // uniform factor applied to the posed mesh
    TriMesh mesh;        // posed and scaled
};

// Scales are log-uniform in [min_scale, max_scale].
ScaledBody sample_allometric_body(const BodyModelAssets& assets, std::mt19937_64& rng,
                                  const AllometricOptions& options = {});
ScaledBody make_allometric_body(const BodyModelAssets& assets, double scale, std::mt19937_64& rng,
                                const AllometricOptions& options = {});

struct StreamOptions {
    double partial_fraction = 0.5;
    int surface_points = 20000;  // drawn per sample before augment resamples the count
    PartialOptions partial;
    AugmentOptions augment;
    // Partial views look along a random horizontal direction; otherwise along -z.
    bool random_view = true;
};

struct TrainingSample {
    PointCloud cloud;  // Metric, rotated by `rotation`
    Points targets;    // landmarks of the ground-truth body, same frame
    std::optional<std::string> image_path;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    size_t record = 0;
};

using WarningSink = std::function<void(const std::string&)>;
void warn_to_stderr(const std::string& message);

// Endless deterministic stream over a dataset: epochs in seeded order, each
// sample independently replaced by a partial view with probability
// partial_fraction. Records without ground-truth params are skipped with one
// warning each.
class TrainingStream {
public:
    TrainingStream(const BodyModelAssets& assets, const LandmarkSpec& spec, std::shared_ptr<const DatasetSource> data,
                   StreamOptions options, uint64_t seed, WarningSink warn = warn_to_stderr);

    TrainingSample next();
    std::vector<TrainingSample> next_batch(int batch_size);

private:
    size_t next_record();

    const BodyModelAssets& assets_;
    const LandmarkSpec& spec_;
    std::shared_ptr<const DatasetSource> data_;
    StreamOptions options_;
    WarningSink warn_;
    std::mt19937_64 rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
    std::vector<bool> warned_;
    std::vector<bool> usable_;  // cleared once a record is found to lack params
};

}  // namespace omnifit
