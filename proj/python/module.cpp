#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "slpt/errors.hpp"
#include "slpt/harness.hpp"
#include "slpt/metrics.hpp"
#include "slpt/tesla.hpp"

namespace py = pybind11;
using namespace slpt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
    return out;
}

Mask to_mask(const IntArray& a) {
    if (a.ndim() != 2) throw InvalidArgument("mask must be 2-D, got " + std::to_string(a.ndim()) + " dimensions");
    Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.labels.begin());
    return m;
}

py::array_t<int> to_array(const Mask& m) {
    py::array_t<int> out({m.height, m.width});
    std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
    return out;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& xs) {
    std::vector<Tensor> out;
    for (const Array& a : xs) out.push_back(to_tensor(a));
    return out;
}

std::vector<ScoreRecord> to_records(const std::vector<double>& s_d, const std::vector<double>& s_g) {
    if (s_d.size() != s_g.size()) throw InvalidArgument("s_d and s_g differ in length");
    std::vector<ScoreRecord> out;
    for (std::size_t i = 0; i < s_d.size(); ++i) out.push_back({static_cast<int>(i), s_d[i], s_g[i], 0.0});
    return out;
}

ExperimentConfig config_from(const std::string& text) {
    ExperimentConfig c;
    c.apply(parse_config_text(text));
    c.validate();
    return c;
}

} // namespace

PYBIND11_MODULE(_slpt, m) {
    m.doc() = "Prompt tuning with two-step active selection on synthetic segmentation data";

    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<TrainingFailure>(m, "TrainingFailure", PyExc_RuntimeError);
    py::register_exception<DegenerateScores>(m, "DegenerateScores", PyExc_ValueError);
    py::register_exception<FrozenParameterError>(m, "FrozenParameterError", PyExc_RuntimeError);

    m.def("downstream_case", [](std::uint64_t seed, int size) {
        const Case c = gen_downstream_case(seed, {size, size}, LesionProfile::default_profile());
        return py::make_tuple(to_array(c.image), to_array(c.mask));
    }, py::arg("seed"), py::arg("size") = 64, "Synthetic (image [1,H,W], mask [H,W]) pair.");

    m.def("tversky_index", [](const Array& prob, const IntArray& mask, double alpha, double beta) {
        return tversky_index(to_tensor(prob), to_mask(mask), alpha, beta);
    }, py::arg("prob"), py::arg("mask"), py::arg("alpha") = 0.5, py::arg("beta") = 0.5);

    m.def("diversity_loss", [](const std::vector<Array>& prompts) { return diversity_loss(to_tensors(prompts)); },
          py::arg("prompts"), "Sum of pairwise cosine similarities.");

    m.def("divergence_score", [](const std::vector<Array>& preds) {
        const Divergence d = divergence_score(to_tensors(preds));
        return py::make_tuple(d.s_d, to_array(d.map));
    }, py::arg("preds"), "(s_d, per-pixel map) for K class-probability maps [C,H,W].");

    m.def("kcenter_greedy", [](const Array& features, int budget, std::vector<int> initial) {
        if (features.ndim() != 2) throw InvalidArgument("features must be [N, D]");
        std::vector<Tensor> rows;
        const int D = static_cast<int>(features.shape(1));
        for (py::ssize_t i = 0; i < features.shape(0); ++i)
            rows.emplace_back(Shape{D}, std::vector<double>(features.data(i, 0), features.data(i, 0) + D));
        return kcenter_greedy(rows, budget, 0, initial);
    }, py::arg("features"), py::arg("budget"), py::arg("initial") = std::vector<int>{});

    m.def("combined_scores", [](const std::vector<double>& s_d, const std::vector<double>& s_g) {
        std::vector<double> out;
        for (const ScoreRecord& r : combined_scores(to_records(s_d, s_g))) out.push_back(r.s);
        return out;
    }, py::arg("s_d"), py::arg("s_g"));

    m.def("select_batch", [](const std::vector<double>& s, int budget) {
        std::vector<ScoreRecord> r;
        for (std::size_t i = 0; i < s.size(); ++i) r.push_back({static_cast<int>(i), 0.0, 0.0, s[i]});
        return select_batch(r, budget);
    }, py::arg("scores"), py::arg("budget"));

    m.def("dice", [](const IntArray& pred, const IntArray& gt) { return dice_per_case(to_mask(pred), to_mask(gt)); },
          py::arg("pred"), py::arg("gt"));

    m.def("lesion_pr", [](const IntArray& pred, const IntArray& gt, double threshold) {
        const LesionPR pr = lesion_pr(to_mask(pred), to_mask(gt), threshold);
        return py::make_tuple(pr.precision, pr.recall);
    }, py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.2);

    m.def("lesion_count", [](const IntArray& mask) { return lesion_instances(to_mask(mask)).size(); }, py::arg("mask"));

    m.def("config_echo", [](const std::string& text) { return config_from(text).echo(); }, py::arg("text"),
          "Effective configuration after applying `key = value` text to the defaults.");

    m.def("run", [](const std::string& text) {
        const ExperimentConfig c = config_from(text);
        RunReport report;
        {
            py::gil_scoped_release release;
            report = run_pipeline(c);
        }
        return to_json(report).dump();
    }, py::arg("config_text"), "Runs the full pipeline; returns report.json as a string.");
}
