#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace omnifit::cli {

// Bad flag combinations; main maps it to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FitArgs {
    std::vector<std::string> inputs;
    // Known landmarks (one .xyz per input) used instead of the predictor.
    std::vector<std::string> landmarks;
    std::string model;
    std::string checkpoint;
    std::string spec;
    std::string image;
    std::string adapter;
    std::string scale_checkpoint;
    std::optional<double> scale;
    bool assume_metric = false;
    bool normalized = false;  // input is already in the normalized frame
    bool normalize = false;   // normalize the input first, discarding its size
    bool mask_partial = false;
    double mask_threshold = 0.10;
    std::string optimizer = "lbfgs";
    bool stage2_translation = false;
    int points = 10000;  // surface samples drawn from mesh inputs
    uint64_t seed = 0;
    int jobs = 1;
    std::string out;
};

struct ArchitectureArgs {
    std::string preset = "desk";
    std::optional<int> feature_dim;
    std::optional<int> encoder_blocks;
    std::optional<int> decoder_blocks;
    std::optional<int> patches;
    std::optional<int> neighbors;
    std::optional<int> heads;
};

struct TrainArgs {
    std::string manifest;
    std::string model;
    std::string spec;
    std::string out;
    std::string resume;
    uint64_t seed = 0;
    int epochs = 1;
    int steps_per_epoch = 100;
    int batch_size = 8;
    double lr = 5e-5;
    double weight_decay = 0.01;
    int checkpoint_every = 0;
    double partial_fraction = 0.5;
    int min_points = 5000;
    int max_points = 20000;
    int surface_points = 20000;
    ArchitectureArgs arch;
    // Adapter training only.
    std::string base;
    int image_dim = 64;
    int image_patch = 16;
    uint64_t image_seed = 0;
};

struct TrainScaleArgs {
    std::string manifest;
    std::string out;
    std::string resume;
    uint64_t seed = 0;
    int epochs = 1;
    int steps_per_epoch = 100;
    int batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int checkpoint_every = 0;
    int points = 2048;
    std::string preset = "desk";
};

struct SimulatePartialArgs {
    std::string input;
    std::string out;
    std::vector<double> view = {0.0, 0.0, -1.0};
    int points = 10000;
    int resolution = 512;
    uint64_t seed = 0;
};

struct EvalArgs {
    std::string model;
    std::vector<std::string> pred;
    std::vector<std::string> gt;
    bool procrustes = false;
    std::string out;
};

struct MakeSpecArgs {
    std::string model;
    std::string out;
    std::string allocation;  // A-D; empty for the default
    std::optional<int> hands;
    std::optional<int> head;
    std::optional<int> body;
    std::string labels;
    uint64_t seed = 0;
};

struct MakeToyDataArgs {
    std::string out;
    int count = 8;
    int vertices = 2000;
    int joints = 12;
    uint64_t seed = 0;
    bool images = false;
    bool with_scale = false;  // allometric sizes in [0.5, 2]
    std::string spec;         // also write each record's landmarks under this spec
};

// Each returns the process exit code. `resolved_config` is the text echoed
// into output directories.
int run_fit(const FitArgs& args, const std::string& resolved_config);
int run_train(const TrainArgs& args, const std::string& resolved_config);
int run_train_adapter(const TrainArgs& args, const std::string& resolved_config);
int run_train_scale(const TrainScaleArgs& args, const std::string& resolved_config);
int run_simulate_partial(const SimulatePartialArgs& args);
int run_eval(const EvalArgs& args);
int run_make_spec(const MakeSpecArgs& args);
int run_make_toy_data(const MakeToyDataArgs& args);

}  // namespace omnifit::cli
