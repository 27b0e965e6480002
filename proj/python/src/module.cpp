#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dgcn/experiment.hpp"
#include "dgcn/graph.hpp"
#include "dgcn/knn.hpp"
#include "dgcn/metrics.hpp"
#include "dgcn/version.hpp"

namespace py = pybind11;
using namespace dgcn;

namespace {

Tensor<float> tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    auto buf = make_buffer<float>(static_cast<std::size_t>(a.size()));
    std::copy_n(a.data(), a.size(), buf->data());
    return Tensor<float>(Shape(static_cast<std::size_t>(a.shape(0)),
                               static_cast<std::size_t>(a.shape(1))), std::move(buf));
}

py::array_t<int> table_to_array(const NeighborTable& t) {
    py::array_t<int> out({t.num_vertices(), t.fan_in()});
    std::copy_n(t.indices()->data(), t.num_vertices() * t.fan_in(), out.mutable_data());
    return out;
}

RunConfig config_from_dict(const py::dict& d) {
    RunConfig cfg;
    for (auto item : d)
        cfg.apply_set(py::cast<std::string>(item.first), py::cast<std::string>(py::str(item.second)));
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Deep graph-convolutional network engine";
    m.attr("__version__") = kVersion;

    m.def(
        "knn_bruteforce",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& points,
           std::size_t m_) { return table_to_array(knn_bruteforce(tensor_from_array(points), m_)); },
        py::arg("points"), py::arg("m"),
        "m nearest neighbors per row, ascending L2 distance, id tie-break");

    m.def(
        "dilated_knn",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& points,
           std::size_t k, std::size_t d, double epsilon, bool deterministic, std::uint64_t seed) {
            DilationPlan plan{k, d, epsilon, deterministic};
            return table_to_array(dilated_knn(tensor_from_array(points), plan, RngStream(seed)));
        },
        py::arg("points"), py::arg("k"), py::arg("d") = 1, py::arg("epsilon") = 0.0,
        py::arg("deterministic") = true, py::arg("seed") = 0,
        "Every d-th of the k*d nearest, with optional stochastic rows");

    m.def(
        "feature_diversity",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& feats) {
            return feature_diversity(tensor_from_array(feats));
        },
        py::arg("features"), "Mean pairwise L2 distance between rows");

    m.def("iou_per_class", &iou_per_class, py::arg("preds"), py::arg("labels"),
          py::arg("num_classes"));
    m.def("miou", &miou, py::arg("preds"), py::arg("labels"), py::arg("num_classes"));
    m.def("overall_accuracy", &overall_accuracy, py::arg("preds"), py::arg("labels"));
    m.def(
        "micro_f1",
        [](const std::vector<int>& preds, const std::vector<int>& targets) {
            std::vector<std::uint8_t> p(preds.begin(), preds.end());
            std::vector<std::uint8_t> t(targets.begin(), targets.end());
            return micro_f1(p, t);
        },
        py::arg("preds"), py::arg("targets"), "Pooled-count micro-averaged F1 over 0/1 vectors");

    m.def(
        "gen_synthetic_parts",
        [](std::size_t n_points, std::size_t n_shapes, std::uint64_t seed, std::size_t min_parts,
           std::size_t max_parts, double noise) {
            SyntheticOptions opts{min_parts, max_parts, noise};
            auto clouds = gen_synthetic_parts(n_points, n_shapes, seed, opts);
            py::list out;
            for (const auto& c : clouds) {
                py::array_t<float> coords({c.n, std::size_t(3)});
                std::copy_n(c.coords.data(), c.n * 3, coords.mutable_data());
                py::array_t<int> labels(static_cast<py::ssize_t>(c.n));
                std::copy_n(c.labels.data(), c.n, labels.mutable_data());
                out.append(py::make_tuple(coords, labels));
            }
            return out;
        },
        py::arg("n_points"), py::arg("n_shapes"), py::arg("seed"), py::arg("min_parts") = 2,
        py::arg("max_parts") = 4, py::arg("noise") = 0.01,
        "Labeled composite-primitive point clouds, deterministic per seed");

    m.def(
        "param_count",
        [](const py::dict& d) {
            RunConfig cfg = config_from_dict(d);
            cfg.model.validate();
            return param_count(build_model<float>(cfg.model, 1));
        },
        py::arg("config"), "Trainable parameter count for a model config");

    m.def(
        "train",
        [](const py::dict& d, const std::string& out_dir, bool force) {
            return run_train(config_from_dict(d), out_dir, force);
        },
        py::arg("config"), py::arg("out_dir"), py::arg("force") = false,
        "Train per config dict (dotted keys); returns the process exit code");

    m.def(
        "evaluate",
        [](const std::string& checkpoint, const py::dict& d) {
            RunConfig cfg = config_from_dict(d);
            auto model = load_checkpoint<float>(checkpoint);
            cfg.model = model.config();
            cfg.finalize();
            LoadedData data = load_dataset(cfg);
            EvalResult<float> ev = evaluate(model, data.eval_set, cfg.train);
            py::dict out;
            out["loss"] = ev.loss;
            if (cfg.model.multilabel) {
                out["micro_f1"] = ev.mf1;
            } else {
                out["oa"] = ev.oa;
                out["miou"] = ev.miou_v;
            }
            return out;
        },
        py::arg("checkpoint"), py::arg("config"), "Evaluate a checkpoint on the configured dataset");

    m.def(
        "bench_operators",
        [](const py::dict& d, const std::vector<std::string>& ops) {
            auto rows = bench_operators(config_from_dict(d), ops);
            py::list out;
            for (const auto& r : rows) {
                py::dict row;
                row["operator"] = r.op;
                row["saved_scalars"] = r.saved_total;
                row["saved_values"] = r.saved_value_scalars;
                row["saved_aux"] = r.saved_aux_scalars;
                row["forward_ms"] = r.forward_ms;
                row["backward_ms"] = r.backward_ms;
                out.append(row);
            }
            return out;
        },
        py::arg("config"), py::arg("operators"),
        "Per-operator tape retention and wall time on one shared graph");

    m.def("gradcheck", [] { return run_gradcheck(false) == 0; },
          "Finite-difference sweep over all primitives and operators");
}
