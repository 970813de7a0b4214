#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "stilt/cli.hpp"
#include "stilt/corpus_synth.hpp"
#include "stilt/datasets.hpp"
#include "stilt/error.hpp"
#include "stilt/ledger.hpp"
#include "stilt/stats.hpp"
#include "stilt/sweep.hpp"
#include "stilt/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace stilt;

namespace {

McDataset synthesize(const std::vector<fs::path>& corpus, std::size_t size, std::uint64_t seed, double top_p,
                     std::size_t negatives, std::size_t order, std::size_t min_tokens, const std::string& name) {
    const auto docs = load_documents(corpus, CorpusLayout::document_per_line);
    const auto sentences = segment_documents(docs, min_tokens);
    NGramGenerator gen(std::make_shared<const NGramModel>(train_ngram(sentences, order)));
    SynthesisOptions o;
    o.size = size;
    o.seed = seed;
    o.top_p = top_p;
    o.negatives = negatives;
    o.name = name;
    return synthesize_dataset(sentences, gen, o);
}

py::dict summary_dict(const ViolinSummary& s) {
    py::dict d;
    d["label"] = s.label;
    d["n"] = s.n;
    d["min"] = s.min;
    d["mean"] = s.mean;
    d["best"] = s.best;
    d["std"] = s.std;
    d["degenerate_count"] = s.degenerate_count;
    d["chance_level"] = s.chance_level;
    d["values"] = s.values;
    return d;
}

}  // namespace

PYBIND11_MODULE(_stilt, m) {
    m.doc() = "Intermediate-task training harness";

    py::register_exception<Error>(m, "StiltError", PyExc_RuntimeError);

    py::class_<McExample>(m, "Example")
        .def(py::init<>())
        .def(py::init([](std::string id, std::string premise, std::vector<std::string> options, int label) {
                 return McExample{std::move(id), std::move(premise), std::move(options), label, {}};
             }),
             py::arg("id"), py::arg("premise"), py::arg("options"), py::arg("label"))
        .def_readwrite("id", &McExample::id)
        .def_readwrite("premise", &McExample::premise)
        .def_readwrite("options", &McExample::options)
        .def_readwrite("label", &McExample::label)
        .def_readwrite("meta", &McExample::meta)
        .def(py::self == py::self);

    py::class_<McDataset>(m, "Dataset")
        .def(py::init([](std::string name) {
                 McDataset d;
                 d.name = std::move(name);
                 d.provenance.push_back({"python", {}});
                 return d;
             }),
             py::arg("name") = "")
        .def_readwrite("name", &McDataset::name)
        .def_readwrite("num_options", &McDataset::num_options)
        .def_readwrite("examples", &McDataset::examples)
        .def_property_readonly("task_type", [](const McDataset& d) { return std::string(to_string(d.task_type)); })
        .def_property_readonly("metric_name", [](const McDataset& d) { return std::string(to_string(d.metric_name)); })
        .def_property_readonly("provenance", [](const McDataset& d) {
            std::vector<std::string> ops;
            for (const auto& p : d.provenance) ops.push_back(p.op);
            return ops;
        })
        .def("__len__", [](const McDataset& d) { return d.examples.size(); })
        .def(py::self == py::self);

    m.def("read_jsonl", &read_jsonl, py::arg("path"));
    m.def("write_jsonl", [](const McDataset& ds, const fs::path& p) { write_jsonl(ds, p); }, py::arg("dataset"),
          py::arg("path"));
    m.def("validate", [](const McDataset& ds) { validate(ds); }, py::arg("dataset"));
    m.def("majority_label_frequency", &majority_label_frequency, py::arg("dataset"));

    m.def("synthesize", &synthesize, py::arg("corpus"), py::arg("size"), py::arg("seed") = 0, py::arg("top_p") = 0.9,
          py::arg("negatives") = 3, py::arg("order") = 3, py::arg("min_tokens") = 8, py::arg("name") = "synthesis",
          "Real-fake continuation dataset from one-document-per-line corpus files.");

    m.def("ablate_premises", &ablate_premises, py::arg("dataset"));
    m.def("shuffle_fake_endings", &shuffle_fake_endings, py::arg("dataset"), py::arg("seed"));
    m.def("subsample", &subsample, py::arg("dataset"), py::arg("n"), py::arg("seed"));
    m.def("split_train_dev", &split_train_dev, py::arg("dataset"), py::arg("dev_fraction"), py::arg("seed"));

    m.def("accuracy", [](const std::vector<int>& p, const std::vector<int>& g) { return accuracy(p, g); },
          py::arg("predictions"), py::arg("gold"));
    m.def("mcc", [](const std::vector<int>& p, const std::vector<int>& g) { return mcc(p, g); },
          py::arg("predictions"), py::arg("gold"));

    m.def("standard_grid", [] {
        std::vector<py::dict> out;
        for (const auto& hp : expand_grid(Grid::standard())) {
            py::dict d;
            d["learning_rate"] = hp.learning_rate;
            d["effective_batch"] = hp.effective_batch;
            d["warmup_ratio"] = hp.warmup_ratio;
            d["seed"] = hp.seed;
            out.push_back(d);
        }
        return out;
    });

    m.def(
        "run_sweep",
        [](const fs::path& spec_path) {
            const SweepSpec spec = load_sweep_spec(spec_path);
            py::gil_scoped_release release;
            return run_sweep(spec).size();
        },
        py::arg("spec"), "Runs a sweep spec file; returns the number of new ledger records.");

    m.def(
        "summarize",
        [](const fs::path& ledger, double epsilon) {
            std::vector<py::dict> out;
            for (const auto& [pair, records] : group_by_pair(read_ledger(ledger))) {
                out.push_back(summary_dict(violin_summary(pair.first + "→" + pair.second, records, epsilon)));
            }
            return out;
        },
        py::arg("ledger"), py::arg("epsilon") = kDegenerateEpsilon, "One violin summary per pair in a ledger.");

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            py::gil_scoped_release release;
            return run_cli(args);
        },
        py::arg("args"), "Runs the stilt command line in-process and returns its exit code.");
}
