#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace omnifit::cli;

namespace {

void add_train_options(CLI::App* c, TrainArgs& t) {
    c->add_option("--manifest", t.manifest, "JSON-lines dataset manifest");
    c->add_option("--model", t.model, "body-model container");
    c->add_option("--spec", t.spec, "landmark spec JSON (default: derived from the model)");
    c->add_option("--out", t.out, "output directory");
    c->add_option("--resume", t.resume, "checkpoint to continue from");
    c->add_option("--seed", t.seed, "random seed");
    c->add_option("--epochs", t.epochs, "epochs (0 writes an untrained checkpoint)");
    c->add_option("--steps-per-epoch", t.steps_per_epoch, "optimizer steps per epoch");
    c->add_option("--batch-size", t.batch_size, "samples per step");
    c->add_option("--lr", t.lr, "AdamW learning rate");
    c->add_option("--weight-decay", t.weight_decay, "decoupled weight decay");
    c->add_option("--checkpoint-every", t.checkpoint_every, "steps between checkpoints (0: only at the end)");
    c->add_option("--partial-fraction", t.partial_fraction, "probability of a simulated partial view");
    c->add_option("--min-points", t.min_points, "fewest points per augmented sample");
    c->add_option("--max-points", t.max_points, "most points per augmented sample");
    c->add_option("--surface-points", t.surface_points, "surface samples drawn before augmentation");
}

void add_arch_options(CLI::App* c, ArchitectureArgs& a) {
    c->add_option("--preset", a.preset, "architecture preset: desk or paper");
    c->add_option("--feature-dim", a.feature_dim, "token width");
    c->add_option("--encoder-blocks", a.encoder_blocks, "point encoder depth");
    c->add_option("--decoder-blocks", a.decoder_blocks, "landmark decoder depth");
    c->add_option("--patches", a.patches, "farthest-point patch count");
    c->add_option("--neighbors", a.neighbors, "points per patch");
    c->add_option("--heads", a.heads, "attention heads");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"omnifit: landmark-based body model fitting for point clouds"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "TOML/INI config file; command-line flags take precedence");
    bool print_config = false;
    app.add_flag("--print-config", print_config, "print the resolved configuration and exit");

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "predict landmarks for point clouds and fit the body model");
    c_fit->add_option("--input", fit.inputs, "point cloud or mesh files (.ply, .obj, .xyz)");
    c_fit->add_option("--landmarks", fit.landmarks, "known landmark files (.xyz), one per input, instead of a checkpoint");
    c_fit->add_option("--model", fit.model, "body-model container");
    c_fit->add_option("--checkpoint", fit.checkpoint, "landmark predictor checkpoint");
    c_fit->add_option("--spec", fit.spec, "landmark spec JSON (default: derived from the model)");
    c_fit->add_option("--image", fit.image, "reference image (PNG or JPEG); needs --adapter");
    c_fit->add_option("--adapter", fit.adapter, "image adapter weights");
    c_fit->add_option("--scale-checkpoint", fit.scale_checkpoint, "scale predictor for normalized inputs");
    c_fit->add_option("--scale", fit.scale, "fixed scale factor for normalized inputs");
    c_fit->add_flag("--assume-metric", fit.assume_metric, "use normalized inputs without restoring scale");
    c_fit->add_flag("--normalized", fit.normalized, "inputs are already normalized to [-0.9, 0.9]");
    c_fit->add_flag("--normalize", fit.normalize, "normalize inputs first, discarding their size");
    c_fit->add_flag("--mask-partial", fit.mask_partial, "ignore landmarks far from every input point");
    c_fit->add_option("--mask-threshold", fit.mask_threshold, "distance for --mask-partial");
    c_fit->add_option("--optimizer", fit.optimizer, "lbfgs or adam");
    c_fit->add_flag("--stage2-translation", fit.stage2_translation, "also move translation in stage 2");
    c_fit->add_option("--points", fit.points, "surface samples drawn from mesh inputs");
    c_fit->add_option("--seed", fit.seed, "random seed");
    c_fit->add_option("--jobs,-j", fit.jobs, "inputs fitted concurrently");
    c_fit->add_option("--out", fit.out, "output directory");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "train the point-only landmark predictor");
    add_train_options(c_train, train);
    add_arch_options(c_train, train.arch);

    TrainArgs adapter;
    adapter.lr = 1e-4;
    auto* c_adapter = app.add_subcommand("train-adapter", "train the image adapter on a frozen predictor");
    add_train_options(c_adapter, adapter);
    c_adapter->add_option("--base", adapter.base, "trained point-only checkpoint");
    c_adapter->add_option("--image-dim", adapter.image_dim, "image feature width");
    c_adapter->add_option("--image-patch", adapter.image_patch, "image patch size in pixels");
    c_adapter->add_option("--image-seed", adapter.image_seed, "seed of the image feature projection");

    TrainScaleArgs scale;
    auto* c_scale = app.add_subcommand("train-scale", "train the scale predictor");
    c_scale->add_option("--manifest", scale.manifest, "JSON-lines dataset manifest (meshes in metric units)");
    c_scale->add_option("--out", scale.out, "output directory");
    c_scale->add_option("--resume", scale.resume, "checkpoint to continue from");
    c_scale->add_option("--seed", scale.seed, "random seed");
    c_scale->add_option("--epochs", scale.epochs, "epochs (0 writes an untrained checkpoint)");
    c_scale->add_option("--steps-per-epoch", scale.steps_per_epoch, "optimizer steps per epoch");
    c_scale->add_option("--batch-size", scale.batch_size, "samples per step");
    c_scale->add_option("--lr", scale.lr, "AdamW learning rate");
    c_scale->add_option("--weight-decay", scale.weight_decay, "decoupled weight decay");
    c_scale->add_option("--checkpoint-every", scale.checkpoint_every, "steps between checkpoints");
    c_scale->add_option("--points", scale.points, "surface samples per training cloud");
    c_scale->add_option("--preset", scale.preset, "desk or paper");

    SimulatePartialArgs partial;
    auto* c_partial = app.add_subcommand("simulate-partial", "sample the part of a mesh visible from one direction");
    c_partial->add_option("--input", partial.input, "mesh file");
    c_partial->add_option("--out", partial.out, "output point cloud (.ply or .xyz)");
    c_partial->add_option("--view", partial.view, "viewing direction x y z")->expected(3);
    c_partial->add_option("--points", partial.points, "samples to draw");
    c_partial->add_option("--resolution", partial.resolution, "z-buffer size in pixels");
    c_partial->add_option("--seed", partial.seed, "random seed");

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "V2V and MPJPE per region between parameter files");
    c_eval->add_option("--model", eval.model, "body-model container");
    c_eval->add_option("--pred", eval.pred, "predicted parameter or fit result files");
    c_eval->add_option("--gt", eval.gt, "ground-truth parameter files, same order");
    c_eval->add_flag("--procrustes", eval.procrustes, "similarity-align before measuring");
    c_eval->add_option("--out", eval.out, "JSON report path");

    MakeSpecArgs mspec;
    auto* c_spec = app.add_subcommand("make-spec", "build a landmark spec from a body model");
    c_spec->add_option("--model", mspec.model, "body-model container");
    c_spec->add_option("--out", mspec.out, "spec JSON path");
    c_spec->add_option("--allocation", mspec.allocation, "ablation allocation A, B, C or D");
    c_spec->add_option("--hands", mspec.hands, "hand landmark count");
    c_spec->add_option("--head", mspec.head, "head landmark count");
    c_spec->add_option("--body", mspec.body, "body landmark count");
    c_spec->add_option("--labels", mspec.labels, "per-vertex region label file");
    c_spec->add_option("--seed", mspec.seed, "random seed");

    MakeToyDataArgs toy;
    auto* c_toy = app.add_subcommand("make-toy-data", "write a synthetic body model and dataset");
    c_toy->add_option("--out", toy.out, "output directory");
    c_toy->add_option("--count", toy.count, "records");
    c_toy->add_option("--vertices", toy.vertices, "toy model vertex count");
    c_toy->add_option("--joints", toy.joints, "toy model joint count");
    c_toy->add_option("--seed", toy.seed, "random seed");
    c_toy->add_flag("--images", toy.images, "write a reference image per record");
    c_toy->add_flag("--with-scale", toy.with_scale, "vary body size with proportions");
    c_toy->add_option("--spec", toy.spec, "also write each record's landmarks under this spec");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::string resolved;
    for (const auto* sub : app.get_subcommands()) resolved += "[" + sub->get_name() + "]\n" + sub->config_to_str(true, false);
    if (print_config) {
        std::cout << resolved;
        return 0;
    }
    try {
        if (c_fit->parsed()) return run_fit(fit, resolved);
        if (c_train->parsed()) return run_train(train, resolved);
        if (c_adapter->parsed()) return run_train_adapter(adapter, resolved);
        if (c_scale->parsed()) return run_train_scale(scale, resolved);
        if (c_partial->parsed()) return run_simulate_partial(partial);
        if (c_eval->parsed()) return run_eval(eval);
        if (c_spec->parsed()) return run_make_spec(mspec);
        if (c_toy->parsed()) return run_make_toy_data(toy);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
