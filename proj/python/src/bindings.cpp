#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dbal/acquisition.hpp"
#include "dbal/adam.hpp"
#include "dbal/cli.hpp"
#include "dbal/config.hpp"
#include "dbal/data.hpp"
#include "dbal/errors.hpp"
#include "dbal/loop.hpp"
#include "dbal/metrics.hpp"
#include "dbal/model.hpp"

namespace py = pybind11;
using namespace dbal;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Tensor::Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

std::vector<std::string> default_ids(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
    return ids;
}

PredictiveSamples to_samples(const Array& samples, std::optional<std::vector<std::string>> ids) {
    if (samples.ndim() != 3) throw py::value_error("samples must have shape [T, N, C]");
    Tensor t = to_tensor(samples);
    std::vector<std::string> names = ids ? std::move(*ids) : default_ids(t.dim(1));
    if (names.size() != t.dim(1)) throw py::value_error("one id per example is required");
    return {std::move(t), std::move(names)};
}

AcquisitionFunction function_from(const std::string& name) {
    const auto f = parse_acquisition_function(name);
    if (!f) throw py::value_error("unknown acquisition function '" + name + "'");
    return *f;
}

SelectionDirection direction_from(const std::string& name) {
    const auto d = parse_selection_direction(name);
    if (!d) throw py::value_error("unknown direction '" + name + "'");
    return *d;
}

py::dict eval_dict(const EvalResult& r) {
    py::list confusion;
    for (std::size_t t = 0; t < r.confusion.num_classes(); ++t) {
        py::list row;
        for (std::size_t p = 0; p < r.confusion.num_classes(); ++p) row.append(r.confusion.count(t, p));
        confusion.append(row);
    }
    py::dict d;
    d["loss"] = r.loss;
    d["accuracy"] = r.accuracy;
    d["confusion"] = confusion;
    d["per_class_recall"] = r.confusion.per_class_recall();
    return d;
}

py::dict splits_dict(const DatasetSplits& splits) {
    py::dict out;
    auto one = [](const std::vector<Example>& examples) {
        std::vector<const Tensor*> images;
        std::vector<std::string> ids;
        std::vector<int> labels;
        for (const auto& e : examples) {
            images.push_back(&e.image);
            ids.push_back(e.id);
            labels.push_back(e.label);
        }
        py::dict d;
        d["ids"] = ids;
        d["labels"] = labels;
        d["images"] = images.empty() ? py::array_t<double>() : to_array(stack_images(images));
        return d;
    };
    out["train"] = one(splits.train);
    out["eval"] = one(splits.eval);
    out["test"] = one(splits.test);
    out["num_classes"] = splits.num_classes;
    return out;
}

}  // namespace

PYBIND11_MODULE(_dbal, m) {
    m.doc() = "Deep Bayesian active learning engine";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ConfigFileError>(m, "ConfigFileError", PyExc_ValueError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
    py::register_exception<SelectionError>(m, "SelectionError", PyExc_IndexError);

    // acquisition
    m.def("score",
          [](const std::string& function, const Array& samples, std::optional<std::vector<std::string>> ids,
             std::uint64_t seed) {
              Rng rng(seed);
              return score(function_from(function), to_samples(samples, std::move(ids)), rng).scores;
          },
          py::arg("function"), py::arg("samples"), py::arg("ids") = py::none(), py::arg("seed") = 0,
          "Acquisition scores for MC samples of shape [T, N, C].");
    m.def("consensus_probs",
          [](const Array& samples) { return to_array(consensus_probs(to_samples(samples, std::nullopt))); },
          py::arg("samples"));
    m.def("select_top_k",
          [](std::vector<std::string> ids, std::vector<double> scores, std::size_t k, const std::string& direction) {
              if (ids.size() != scores.size()) throw py::value_error("ids and scores differ in length");
              const AcquisitionScores s{AcquisitionFunction::random, std::move(ids), std::move(scores)};
              return select_top_k(s, {k, direction_from(direction)});
          },
          py::arg("ids"), py::arg("scores"), py::arg("k"), py::arg("direction") = "most_uncertain");
    m.def("weight_decay_coefficient", &weight_decay_coefficient, py::arg("dropout_p"), py::arg("length_scale_sq"),
          py::arg("training_size"));

    // metrics
    m.def("evaluate_probs",
          [](const Array& probs, std::vector<int> labels) { return eval_dict(evaluate_probs(to_tensor(probs), labels)); },
          py::arg("probs"), py::arg("labels"));

    // model
    py::class_<ModelState>(m, "Model")
        .def(py::init([](std::size_t image_size, std::size_t num_classes, std::uint64_t seed, std::size_t num_filters,
                         std::size_t kernel_size, std::size_t dense_size) {
                 ArchitectureConfig cfg;
                 cfg.image_size = image_size;
                 cfg.num_classes = num_classes;
                 cfg.num_filters = num_filters;
                 cfg.kernel_size = kernel_size;
                 cfg.dense_size = dense_size;
                 Rng rng(seed);
                 return build_model(cfg, rng);
             }),
             py::arg("image_size") = 32, py::arg("num_classes") = 2, py::arg("seed") = 0, py::arg("num_filters") = 32,
             py::arg("kernel_size") = 4, py::arg("dense_size") = 128)
        .def_property_readonly("flatten_dim", [](const ModelState& s) { return s.config.plan().flatten_dim; })
        .def_property_readonly("parameter_count",
                               [](const ModelState& s) {
                                   std::size_t n = 0;
                                   for (const auto& p : s.parameters) n += p.size();
                                   return n;
                               })
        .def("predict", [](const ModelState& s, const Array& images) { return to_array(forward_eval(s, to_tensor(images))); },
             py::arg("images"), "Class probabilities with dropout off; images are [N, 3, S, S].")
        .def("mc_predict",
             [](const ModelState& s, const Array& images, std::size_t passes, std::uint64_t seed) {
                 const Tensor batch = to_tensor(images);
                 Rng rng(seed);
                 return to_array(mc_predict(s, batch, default_ids(batch.dim(0)), passes, rng).samples);
             },
             py::arg("images"), py::arg("passes") = 20, py::arg("seed") = 0, "Dropout-on samples [T, N, C].")
        .def("save", [](const ModelState& s, const std::filesystem::path& p) { save_checkpoint(p, s); })
        .def_static("load", &load_checkpoint);

    // data
    m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); }, py::arg("path"),
          "Decoded [3, H, W] image scaled to [0, 1].");
    m.def("generate_synthetic",
          [](std::size_t image_size, std::vector<std::size_t> train, std::vector<std::size_t> eval,
             std::vector<std::size_t> test, double difficulty, std::uint64_t seed) {
              SyntheticSpec spec{image_size, difficulty, std::move(train), std::move(eval), std::move(test), seed};
              return splits_dict(generate_synthetic(spec).splits);
          },
          py::arg("image_size") = 32, py::arg("train") = std::vector<std::size_t>{560, 140},
          py::arg("eval") = std::vector<std::size_t>{160, 40}, py::arg("test") = std::vector<std::size_t>{280, 70},
          py::arg("difficulty") = 0.5, py::arg("seed") = 0);

    // experiments
    py::class_<ExperimentConfig>(m, "Config")
        .def_static("defaults", &default_config)
        .def_static("load", &load_config, py::arg("path"), py::arg("seed") = py::none())
        .def_static("parse", &parse_config, py::arg("text"), py::arg("seed") = py::none())
        .def("render", &render_config, py::arg("with_seed") = true)
        .def_property_readonly("name", [](const ExperimentConfig& c) { return c.output.name; })
        .def_property_readonly("rng_seed", [](const ExperimentConfig& c) { return c.loop.rng_seed; })
        .def_property_readonly("rounds", [](const ExperimentConfig& c) { return c.loop.rounds; })
        .def_property_readonly("query_size", [](const ExperimentConfig& c) { return c.loop.query_size; })
        .def_property_readonly("function", [](const ExperimentConfig& c) { return function_label(c.loop.function); });

    m.def("run_experiment",
          [](const ExperimentConfig& config, std::optional<std::filesystem::path> out) {
              std::vector<RoundReport> reports;
              {
                  py::gil_scoped_release release;
                  const DatasetSplits splits = load_splits(config);
                  reports = out ? run_experiment(config.loop, splits, ExperimentOutput{*out})
                                : run_experiment(config.loop, splits);
              }
              py::module_ json = py::module_::import("json");
              py::list out_reports;
              for (const auto& r : reports) out_reports.append(json.attr("loads")(report_to_json_line(r)));
              return out_reports;
          },
          py::arg("config"), py::arg("out") = py::none(),
          "Runs every round; returns one dict per round like the lines of reports.jsonl.");

    m.def("cli",
          [](std::vector<std::string> args) {
              args.insert(args.begin(), "dbal");
              std::vector<char*> argv;
              for (auto& a : args) argv.push_back(a.data());
              py::gil_scoped_release release;
              return cli::main(static_cast<int>(argv.size()), argv.data());
          },
          py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");
}
