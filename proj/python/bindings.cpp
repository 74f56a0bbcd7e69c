#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "omnifit/body_model.hpp"
#include "omnifit/body_model_io.hpp"
#include "omnifit/dataset.hpp"
#include "omnifit/fitter.hpp"
#include "omnifit/geometry.hpp"
#include "omnifit/landmark_spec.hpp"
#include "omnifit/mesh_io.hpp"
#include "omnifit/metrics.hpp"
#include "omnifit/pipeline.hpp"
#include "omnifit/predictor.hpp"
#include "omnifit/scale_predictor.hpp"

namespace py = pybind11;
using namespace omnifit;

namespace {

py::dict region_dict(const RegionMetric& m) {
    py::dict d;
    d["all"] = m.all;
    d["hands"] = m.hands ? py::cast(*m.hands) : py::none();
    d["head"] = m.head ? py::cast(*m.head) : py::none();
    d["body"] = m.body ? py::cast(*m.body) : py::none();
    return d;
}

std::vector<bool> mask_or_all(const std::optional<std::vector<bool>>& mask, int m) {
    return mask ? *mask : std::vector<bool>(static_cast<size_t>(m), true);
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "Landmark-based body model fitting for point clouds";

    py::register_exception<DimensionError>(mod, "DimensionError", PyExc_ValueError);
    py::register_exception<InvariantError>(mod, "InvariantError", PyExc_RuntimeError);
    py::register_exception<FitError>(mod, "FitError", PyExc_RuntimeError);

    py::class_<BodyModelAssets>(mod, "BodyModel")
        .def_property_readonly("num_vertices", &BodyModelAssets::num_vertices)
        .def_property_readonly("num_joints", &BodyModelAssets::num_joints)
        .def_property_readonly("num_betas", &BodyModelAssets::num_betas)
        .def_property_readonly("num_expressions", &BodyModelAssets::num_expressions)
        .def_property_readonly("num_faces", &BodyModelAssets::num_faces)
        .def_readonly("template", &BodyModelAssets::template_vertices)
        .def_readonly("faces", &BodyModelAssets::faces)
        .def_readonly("parents", &BodyModelAssets::parents)
        .def_readonly("skin_weights", &BodyModelAssets::skin_weights)
        .def("validate", &BodyModelAssets::validate);

    mod.def("make_toy_model", &make_toy_model, py::arg("num_vertices"), py::arg("num_joints"), py::arg("seed") = 0);
    mod.def("load_body_model", &load_body_model, py::arg("path"));
    mod.def("save_body_model", &save_body_model, py::arg("path"), py::arg("model"));

    py::class_<BodyParams>(mod, "BodyParams")
        .def(py::init([](const BodyModelAssets& a) { return BodyParams::zeros(a); }), py::arg("model"))
        .def_readwrite("beta", &BodyParams::beta)
        .def_readwrite("theta", &BodyParams::theta)
        .def_readwrite("psi", &BodyParams::psi)
        .def_readwrite("trans", &BodyParams::trans)
        .def("to_json", [](const BodyParams& p) { return params_to_json(p).dump(); })
        .def_static("from_json", [](const std::string& s) { return params_from_json(nlohmann::json::parse(s)); });
    mod.def("load_params", &load_params, py::arg("path"));
    mod.def("save_params", &save_params, py::arg("path"), py::arg("params"));

    mod.def(
        "forward",
        [](const BodyModelAssets& a, const BodyParams& p) {
            auto r = lbs_forward(a, p);
            return py::make_tuple(r.vertices, r.joints);
        },
        py::arg("model"), py::arg("params"), "Posed (vertices, joints).");

    py::class_<LandmarkSpec>(mod, "LandmarkSpec")
        .def_readonly("name", &LandmarkSpec::name)
        .def_property_readonly("size", &LandmarkSpec::size)
        .def("indices", &LandmarkSpec::indices)
        .def("region_counts",
             [](const LandmarkSpec& s) {
                 return py::dict(py::arg("hands") = s.allocation.hands, py::arg("head") = s.allocation.head,
                                 py::arg("body") = s.allocation.body);
             })
        .def("save", &LandmarkSpec::save)
        .def_static("load", &LandmarkSpec::load);
    mod.def(
        "default_spec",
        [](const BodyModelAssets& a, int hands, int head, int body, uint64_t seed) {
            return default_spec(a, Allocation{hands, head, body}, seed);
        },
        py::arg("model"), py::arg("hands") = kDefaultAllocation.hands, py::arg("head") = kDefaultAllocation.head,
        py::arg("body") = kDefaultAllocation.body, py::arg("seed") = 0);
    mod.def("extract_landmarks", &extract_landmarks, py::arg("vertices"), py::arg("spec"));

    py::class_<FitReport>(mod, "FitReport")
        .def_readonly("params", &FitReport::params)
        .def_readonly("stage_losses", &FitReport::stage_losses)
        .def_readonly("stage_seconds", &FitReport::stage_seconds)
        .def_readonly("landmark_rmse", &FitReport::landmark_rmse)
        .def_readonly("final_loss", &FitReport::final_loss);
    mod.def(
        "fit",
        [](const BodyModelAssets& a, const LandmarkSpec& s, const Points& targets,
           const std::optional<std::vector<bool>>& mask, const std::string& optimizer) {
            auto schedule = default_schedule();
            if (optimizer == "adam") {
                schedule.optimizer = FitOptimizer::Adam;
            } else if (optimizer != "lbfgs") {
                throw std::invalid_argument("optimizer must be 'lbfgs' or 'adam'");
            }
            py::gil_scoped_release release;
            return fit(a, s, targets, schedule, mask_or_all(mask, s.size()), BodyParams::zeros(a));
        },
        py::arg("model"), py::arg("spec"), py::arg("targets"), py::arg("mask") = py::none(),
        py::arg("optimizer") = "lbfgs", "Three-stage fit from the zero pose with the default schedule.");

    py::class_<PredictorConfig>(mod, "PredictorConfig")
        .def(py::init<>())
        .def_static("desk_scale", &PredictorConfig::desk_scale, py::arg("num_landmarks") = 600)
        .def_static("paper_scale", &PredictorConfig::paper_scale, py::arg("num_landmarks") = 600)
        .def_readwrite("num_landmarks", &PredictorConfig::num_landmarks)
        .def_readwrite("feature_dim", &PredictorConfig::feature_dim)
        .def_readwrite("encoder_blocks", &PredictorConfig::encoder_blocks)
        .def_readwrite("decoder_blocks", &PredictorConfig::decoder_blocks)
        .def_readwrite("num_patches", &PredictorConfig::num_patches)
        .def_readwrite("patch_neighbors", &PredictorConfig::patch_neighbors)
        .def_readwrite("attention_heads", &PredictorConfig::attention_heads)
        .def("to_json", [](const PredictorConfig& c) { return c.to_json().dump(); });

    py::class_<LandmarkPredictor>(mod, "LandmarkPredictor")
        .def(py::init<const PredictorConfig&, uint64_t>(), py::arg("config"), py::arg("seed") = 0)
        .def_static("load", &LandmarkPredictor::load, py::arg("path"))
        .def("save", &LandmarkPredictor::save, py::arg("path"))
        .def_property_readonly("config", &LandmarkPredictor::config)
        .def("fingerprint", &LandmarkPredictor::fingerprint)
        .def(
            "predict",
            [](const LandmarkPredictor& p, const Points& points) {
                py::gil_scoped_release release;
                return p.predict(points);
            },
            py::arg("points"));

    py::class_<ScalePredictor>(mod, "ScalePredictor")
        .def(py::init([](uint64_t seed) { return ScalePredictor(ScaleConfig{}, seed); }), py::arg("seed") = 0)
        .def_static("load", &ScalePredictor::load, py::arg("path"))
        .def("save", &ScalePredictor::save, py::arg("path"))
        .def(
            "predict_scale",
            [](const ScalePredictor& s, const Points& normalized) {
                PointCloud c{normalized, ScaleState::Normalized};
                return s.predict_scale(c);
            },
            py::arg("normalized_points"));

    mod.def(
        "normalize_unit",
        [](const Points& points) {
            auto n = normalize_unit(PointCloud{points});
            return py::make_tuple(n.cloud.points, Eigen::Vector3d(n.center), n.inv_scale);
        },
        py::arg("points"), "Returns (normalized points, bbox center, ground-truth scale).");
    mod.def(
        "sample_surface",
        [](const Points& v, const Faces& f, int n, uint64_t seed) { return sample_surface({v, f}, n, seed).points; },
        py::arg("vertices"), py::arg("faces"), py::arg("n"), py::arg("seed") = 0);
    mod.def(
        "simulate_partial",
        [](const Points& v, const Faces& f, const Eigen::Vector3d& view, int n, int resolution, uint64_t seed) {
            return simulate_partial({v, f}, view, resolution, n, seed).points;
        },
        py::arg("vertices"), py::arg("faces"), py::arg("view_dir"), py::arg("n"), py::arg("resolution") = 512,
        py::arg("seed") = 0);

    mod.def(
        "fit_point_cloud",
        [](const BodyModelAssets& a, const LandmarkSpec& s, const Points& points, const LandmarkPredictor& predictor,
           const ScalePredictor* scale_predictor, bool normalized) {
            PointCloud c{points, normalized ? ScaleState::Normalized : ScaleState::Metric};
            ScaleSource src;
            src.predictor = scale_predictor;
            PipelineResult r;
            {
                py::gil_scoped_release release;
                r = fit_point_cloud(a, s, c, predictor_landmarks(predictor), src);
            }
            return py::make_tuple(r.fit, r.landmarks, r.scale);
        },
        py::arg("model"), py::arg("spec"), py::arg("points"), py::arg("predictor"),
        py::arg("scale_predictor") = nullptr, py::arg("normalized") = false,
        "Scale restoration, landmark prediction and fitting; returns (report, landmarks, scale).");

    mod.def(
        "evaluate",
        [](const BodyModelAssets& a, const std::vector<BodyParams>& pred, const std::vector<BodyParams>& gt,
           bool procrustes) {
            if (pred.size() != gt.size()) throw DimensionError("pred and gt lists differ in length");
            MetricAccumulator acc(a, MetricOptions{procrustes});
            for (size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], gt[i]);
            const auto r = acc.result();
            py::dict d;
            d["samples"] = r.samples;
            d["v2v_cm"] = region_dict(r.v2v_cm);
            d["mpjpe_cm"] = region_dict(r.mpjpe_cm);
            d["table"] = r.text_table();
            return d;
        },
        py::arg("model"), py::arg("pred"), py::arg("gt"), py::arg("procrustes") = false);

    mod.def(
        "load_manifest",
        [](const std::string& path) {
            py::list out;
            for (const auto& e : load_manifest(path)) {
                py::dict d;
                d["mesh_path"] = e.mesh_path;
                d["params_path"] = e.params_path;
                d["image_path"] = e.image_path ? py::cast(*e.image_path) : py::none();
                out.append(d);
            }
            return out;
        },
        py::arg("path"), "Parsed manifest records with paths resolved against the manifest directory.");
    mod.def(
        "load_mesh",
        [](const std::string& path) {
            auto m = load_mesh(path);
            return py::make_tuple(m.vertices, m.faces);
        },
        py::arg("path"));
}
