#include "stilt/cli.hpp"

#include "stilt/corpus_synth.hpp"
#include "stilt/datasets.hpp"
#include "stilt/error.hpp"
#include "stilt/ledger.hpp"
#include "stilt/log.hpp"
#include "stilt/stats.hpp"
#include "stilt/sweep.hpp"
#include "stilt/trainer.hpp"
#include "stilt/worker.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include <cstdlib>
#include <iostream>
#include <memory>

namespace stilt {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Usage problems found after parsing (bad combinations, malformed values).
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// JSON config files: top-level keys are global options, nested objects
/// hold the options of the subcommand they are named after.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        return dump(*app, default_also).dump();
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw CLI::FileError(std::string("config: ") + e.what());
        }
        if (!j.is_object()) throw CLI::FileError("config: top level must be an object");
        std::vector<CLI::ConfigItem> items;
        flatten(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

    static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& items) {
        for (const auto& [key, value] : obj.items()) {
            std::string name = key;
            std::replace(name.begin(), name.end(), '_', '-');
            if (value.is_object()) {
                auto p = parents;
                p.push_back(name);
                flatten(value, p, items);
                continue;
            }
            if (value.is_null()) continue;
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = name;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
    }

    static ojson dump(const CLI::App& app, bool default_also) {
        ojson j = ojson::object();
        for (const CLI::Option* opt : app.get_options()) {
            const std::string name = opt->get_single_name();
            if (name.empty() || name == "help" || name == "config") continue;
            std::vector<std::string> values = opt->results();
            if (values.empty()) {
                if (!default_also || opt->get_default_str().empty()) continue;
                values.push_back(opt->get_default_str());
            }
            j[name] = values.size() == 1 && opt->get_expected_max() <= 1 ? ojson(values.front()) : ojson(values);
        }
        for (const CLI::App* sub : app.get_subcommands()) j[sub->get_name()] = dump(*sub, default_also);
        return j;
    }
};

const CLI::Validator kAbsolutePath(
    [](std::string& s) {
        if (!s.empty()) s = fs::absolute(s).lexically_normal().string();
        return std::string();
    },
    "PATH", "absolute");

struct Range {
    std::size_t begin = 0;
    std::size_t end = static_cast<std::size_t>(-1);
};

Range parse_range(const std::string& s) {
    Range r;
    if (s.empty()) return r;
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw UsageError("range '" + s + "' must look like START:END");
    try {
        if (colon > 0) r.begin = std::stoul(s.substr(0, colon));
        if (colon + 1 < s.size()) r.end = std::stoul(s.substr(colon + 1));
    } catch (const std::logic_error&) {
        throw UsageError("range '" + s + "' must look like START:END");
    }
    if (r.end < r.begin) throw UsageError("range '" + s + "' is empty");
    return r;
}

std::vector<Document> slice(const std::vector<Document>& docs, const Range& r) {
    const auto b = std::min(r.begin, docs.size());
    const auto e = std::min(r.end, docs.size());
    return {docs.begin() + static_cast<std::ptrdiff_t>(b), docs.begin() + static_cast<std::ptrdiff_t>(e)};
}

std::vector<std::string> worker_command(const std::string& flag) {
    if (!flag.empty()) return split_command(flag);
    if (const char* env = std::getenv("STILT_WORKER"); env && *env) return split_command(env);
    return {};
}

void print_json(const ojson& j) { std::cout << j.dump(2) << std::endl; }

// ---------------------------------------------------------------------------

struct SynthesizeArgs {
    std::vector<std::string> corpus;
    std::string layout = "line";
    std::size_t size = 0;
    double top_p = 0.9;
    std::size_t order = 3;
    std::uint64_t seed = 0;
    std::size_t negatives = 3;
    std::size_t min_tokens = 8;
    std::string generator = "ngram";
    std::string docs, ngram_docs;
    std::string name;
    std::string out;
};

int cmd_synthesize(const SynthesizeArgs& a) {
    if (!(a.top_p > 0.0 && a.top_p <= 1.0)) throw UsageError("--top-p must be in (0, 1]");
    std::vector<fs::path> files(a.corpus.begin(), a.corpus.end());
    const auto layout = a.layout == "file" ? CorpusLayout::document_per_file : CorpusLayout::document_per_line;
    const auto all_docs = load_documents(files, layout);
    const auto docs = slice(all_docs, parse_range(a.docs));
    const auto sentences = segment_documents(docs, a.min_tokens);
    log::info("corpus: {} documents, {} sentences", docs.size(), sentences.size());

    std::unique_ptr<ContinuationGenerator> generator;
    if (a.generator == "ngram") {
        const auto gen_docs = a.ngram_docs.empty() ? docs : slice(all_docs, parse_range(a.ngram_docs));
        const auto gen_sentences = a.ngram_docs.empty() ? sentences : segment_documents(gen_docs, a.min_tokens);
        auto model = std::make_shared<const NGramModel>(train_ngram(gen_sentences, a.order));
        log::info("n-gram model: order {}, vocabulary {}", model->order(), model->vocab_size());
        generator = std::make_unique<NGramGenerator>(std::move(model));
    } else if (a.generator.rfind("http://", 0) == 0 || a.generator.rfind("https://", 0) == 0) {
        generator = std::make_unique<RemoteGenerator>(a.generator);
    } else {
        throw UsageError("--generator must be 'ngram' or an http(s) URL");
    }

    SynthesisOptions opts;
    opts.size = a.size;
    opts.seed = a.seed;
    opts.negatives = a.negatives;
    opts.top_p = a.top_p;
    opts.name = a.name.empty() ? fs::path(a.out).stem().string() : a.name;
    const McDataset ds = synthesize_dataset(sentences, *generator, opts);
    write_jsonl(ds, a.out);
    log::info("wrote {} examples to {}", ds.examples.size(), a.out);
    return kExitOk;
}

struct TransformArgs {
    std::string op;
    std::string in, out, out_train, out_dev;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    double dev_fraction = 0.1;
    std::string name;
};

int cmd_transform(const TransformArgs& a) {
    const McDataset ds = read_jsonl(a.in);
    auto named = [&](McDataset d) {
        if (!a.name.empty()) d.name = a.name;
        return d;
    };
    if (a.op == "split") {
        if (a.out_train.empty() || a.out_dev.empty()) throw UsageError("split needs --out-train and --out-dev");
        if (!(a.dev_fraction > 0.0 && a.dev_fraction < 1.0)) throw UsageError("--dev-fraction must be in (0, 1)");
        auto [train, dev] = split_train_dev(ds, a.dev_fraction, a.seed);
        write_jsonl(train, a.out_train);
        write_jsonl(dev, a.out_dev);
        log::info("split {} into {} train / {} dev", a.in, train.examples.size(), dev.examples.size());
        return kExitOk;
    }
    if (a.out.empty()) throw UsageError(a.op + " needs --out");
    McDataset result;
    if (a.op == "ablate-premises") result = ablate_premises(ds);
    else if (a.op == "shuffle-fakes") result = shuffle_fake_endings(ds, a.seed);
    else result = subsample(ds, a.n, a.seed);
    write_jsonl(named(std::move(result)), a.out);
    log::info("{}: wrote {}", a.op, a.out);
    return kExitOk;
}

struct TrainArgs {
    std::string train, dev, out;
    std::string phase = "target";
    HyperParams hp;
    std::string base_checkpoint;
    std::optional<std::size_t> max_epochs;
    std::string backend = "reference";
    std::string worker_command;
    double timeout_s = 3600.0;
    ReferenceOptions reference;
};

int cmd_train(const TrainArgs& a) {
    validate(a.hp);
    TrainJob job;
    job.phase = parse_phase(a.phase);
    job.train_path = a.train;
    job.dev_path = a.dev;
    job.hyperparams = a.hp;
    job.max_epochs = a.max_epochs;
    job.backend = a.backend;
    job.output_dir = a.out;
    job.reference = a.reference;
    if (!a.base_checkpoint.empty()) job.base_checkpoint = describe_checkpoint(a.base_checkpoint, a.backend);
    fs::create_directories(job.output_dir);

    TrainResult r;
    if (a.backend == "worker") {
        const auto cmd = worker_command(a.worker_command);
        if (cmd.empty()) throw UsageError("worker backend needs --worker-command or STILT_WORKER");
        r = run_worker_job(job, WorkerOptions{cmd, std::chrono::duration<double>(a.timeout_s), {}});
    } else {
        r = train(job);
    }
    ojson j = result_message(r);
    j.erase("type");
    j["dev_curve"] = r.dev_curve;
    print_json(j);
    return r.status == RunStatus::ok ? kExitOk : kExitDomainError;
}

struct SweepArgs {
    std::string spec;
    std::optional<std::size_t> parallelism;
    std::string worker_command;
    std::string ledger;
};

int cmd_sweep(const SweepArgs& a) {
    SweepSpec spec = load_sweep_spec(a.spec);
    if (a.parallelism) spec.parallelism = *a.parallelism;
    if (spec.parallelism == 0) throw UsageError("--parallelism must be positive");
    if (!a.ledger.empty()) spec.ledger = a.ledger;
    if (const auto cmd = worker_command(a.worker_command); !cmd.empty() && (!a.worker_command.empty() || spec.worker_command.empty())) {
        spec.worker_command = cmd;
    }
    log::info("resolved sweep spec: {}", to_json(spec).dump());
    SweepCounters counters;
    const auto records = run_sweep(spec, &counters);
    std::size_t failed = 0;
    for (const auto& r : records) failed += r.status == RunStatus::failed;
    print_json({{"ledger", spec.ledger.string()},
                {"new_records", records.size()},
                {"failed", failed},
                {"resumed", counters.resumed.load()},
                {"target_runs", counters.target_runs.load()},
                {"intermediate_runs", counters.intermediate_runs.load()}});
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::vector<std::string> datasets;
    bool ablate = false;
};

int cmd_eval(const EvalArgs& a) {
    const Checkpoint ckpt = describe_checkpoint(a.checkpoint, "reference");
    ojson out = ojson::array();
    for (const auto& path : a.datasets) {
        McDataset ds = read_jsonl(path);
        if (a.ablate) ds = ablate_premises(ds);
        const double value = evaluate(ckpt, ds);
        out.push_back({{"checkpoint", ckpt.uri.string()},
                       {"dataset", path},
                       {"premises_ablated", a.ablate},
                       {"metric_name", to_string(ds.metric_name)},
                       {"value", value}});
    }
    print_json(out.size() == 1 ? out.front() : out);
    return kExitOk;
}

struct ReportArgs {
    std::vector<std::string> ledgers;
    std::string baseline;
    std::vector<std::string> size_ledgers;
    std::string out;
    double epsilon = kDegenerateEpsilon;
};

int cmd_report(const ReportArgs& a) {
    const auto baseline = read_ledger(a.baseline);
    std::vector<std::vector<RunRecord>> methods;
    for (const auto& p : a.ledgers) methods.push_back(read_ledger(p));
    ReportInput input = build_report_input(methods, baseline, a.epsilon);
    if (!a.size_ledgers.empty()) {
        std::map<std::size_t, std::vector<RunRecord>> by_size;
        for (const auto& entry : a.size_ledgers) {
            const auto eq = entry.find('=');
            if (eq == std::string::npos) throw UsageError("--size-ledger takes SIZE=PATH");
            std::size_t size = 0;
            try {
                size = std::stoul(entry.substr(0, eq));
            } catch (const std::logic_error&) {
                throw UsageError("--size-ledger takes SIZE=PATH");
            }
            auto records = read_ledger(entry.substr(eq + 1));
            auto& bucket = by_size[size];
            bucket.insert(bucket.end(), records.begin(), records.end());
        }
        input.size_points = size_study(by_size, baseline);
    }
    const auto files = render_report(input, a.out);
    ojson written = ojson::array();
    for (const auto& f : files.written) written.push_back(f.string());
    print_json({{"out", a.out}, {"files", written}});
    return kExitOk;
}

struct WorkerArgs {
    ReferenceOptions reference;
};

void add_reference_options(CLI::App* sub, ReferenceOptions& r) {
    sub->add_option("--feature-dim", r.architecture.feature_dim, "Hashed feature buckets D")->capture_default_str();
    sub->add_option("--hidden-dim", r.architecture.hidden_dim, "Hidden units H")->capture_default_str();
    sub->add_option("--lr-scale", r.lr_scale, "Multiplier from grid learning rate to SGD step")->capture_default_str();
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Intermediate-task fine-tuning experiments: synthesis, sweeps and stability reports", "stilt"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON file with option values (flags take precedence)");
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "debug, info, warn, error or off")
        ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}))
        ->capture_default_str();

    SynthesizeArgs syn;
    auto* s = app.add_subcommand("synthesize", "Build a real-fake continuation dataset from a corpus");
    s->add_option("--corpus", syn.corpus, "Corpus files (UTF-8)")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    s->add_option("--layout", syn.layout, "One document per 'line' or per 'file'")->check(CLI::IsMember({"line", "file"}))->capture_default_str();
    s->add_option("--size", syn.size, "Number of examples")->required();
    s->add_option("--top-p", syn.top_p, "Nucleus mass")->capture_default_str();
    s->add_option("--order", syn.order, "n-gram order")->check(CLI::Range(2, 8))->capture_default_str();
    s->add_option("--seed", syn.seed, "Synthesis seed")->capture_default_str();
    s->add_option("--negatives", syn.negatives, "Negative options per example")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--min-tokens", syn.min_tokens, "Shortest kept sentence")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--generator", syn.generator, "'ngram' or the URL of a generation service")->capture_default_str();
    s->add_option("--docs", syn.docs, "Document range START:END to draw sentences from");
    s->add_option("--ngram-docs", syn.ngram_docs, "Document range the n-gram model is trained on (default: --docs)");
    s->add_option("--name", syn.name, "Dataset name (default: output stem)");
    s->add_option("--out", syn.out, "Output JSONL")->required()->transform(kAbsolutePath);

    TransformArgs tr;
    auto* t = app.add_subcommand("transform", "Apply a dataset transform");
    t->add_option("--op", tr.op, "Transform")->required()->check(CLI::IsMember({"ablate-premises", "shuffle-fakes", "subsample", "split"}));
    t->add_option("--in", tr.in, "Input JSONL")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    t->add_option("--out", tr.out, "Output JSONL")->transform(kAbsolutePath);
    t->add_option("--out-train", tr.out_train, "Train output for split")->transform(kAbsolutePath);
    t->add_option("--out-dev", tr.out_dev, "Dev output for split")->transform(kAbsolutePath);
    t->add_option("--seed", tr.seed, "Seed")->capture_default_str();
    t->add_option("-n,--n", tr.n, "Sample size for subsample");
    t->add_option("--dev-fraction", tr.dev_fraction, "Dev share for split")->capture_default_str();
    t->add_option("--name", tr.name, "Name of the output dataset");

    TrainArgs ta;
    auto* tn = app.add_subcommand("train", "Run one training job");
    tn->add_option("--train", ta.train, "Train JSONL")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    tn->add_option("--dev", ta.dev, "Dev JSONL")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    tn->add_option("--out", ta.out, "Output directory")->required()->transform(kAbsolutePath);
    tn->add_option("--phase", ta.phase, "intermediate or target")->check(CLI::IsMember({"intermediate", "target"}))->capture_default_str();
    tn->add_option("--lr", ta.hp.learning_rate, "Learning rate")->capture_default_str();
    tn->add_option("--batch", ta.hp.effective_batch, "Effective batch size")->capture_default_str();
    tn->add_option("--warmup", ta.hp.warmup_ratio, "Warmup ratio")->capture_default_str();
    tn->add_option("--seed", ta.hp.seed, "Seed")->capture_default_str();
    tn->add_option("--base-checkpoint", ta.base_checkpoint, "Checkpoint to start from")->check(CLI::ExistingPath)->transform(kAbsolutePath);
    tn->add_option("--max-epochs", ta.max_epochs, "Epochs (default depends on phase and size)");
    tn->add_option("--backend", ta.backend, "reference or worker")->check(CLI::IsMember({"reference", "worker"}))->capture_default_str();
    tn->add_option("--worker-command", ta.worker_command, "Worker command line (overrides STILT_WORKER)");
    tn->add_option("--timeout", ta.timeout_s, "Worker wall-clock limit in seconds")->capture_default_str();
    add_reference_options(tn, ta.reference);

    SweepArgs sw;
    auto* sp = app.add_subcommand("sweep", "Run a hyperparameter sweep from a spec file");
    sp->add_option("--spec", sw.spec, "Sweep spec JSON")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    sp->add_option("--parallelism", sw.parallelism, "Runs in flight (overrides the spec)");
    sp->add_option("--worker-command", sw.worker_command, "Worker command line (overrides STILT_WORKER and the spec)");
    sp->add_option("--ledger", sw.ledger, "Ledger path (overrides the spec)")->transform(kAbsolutePath);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint, e.g. zero-shot on another task");
    e->add_option("--checkpoint", ev.checkpoint, "Reference checkpoint")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    e->add_option("--dataset", ev.datasets, "Dataset JSONL (repeatable)")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    e->add_flag("--ablate-premises", ev.ablate, "Empty every premise before scoring");

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Summaries, delta tables and violin plots from ledgers");
    r->add_option("--ledgers", rp.ledgers, "Method ledgers")->check(CLI::ExistingFile)->transform(kAbsolutePath);
    r->add_option("--baseline", rp.baseline, "Ledger of the None baseline")->required()->check(CLI::ExistingFile)->transform(kAbsolutePath);
    r->add_option("--size-ledger", rp.size_ledgers, "SIZE=PATH ledgers for the size study (repeatable)");
    r->add_option("--out", rp.out, "Output directory")->required()->transform(kAbsolutePath);
    r->add_option("--epsilon", rp.epsilon, "Degenerate-run margin")->capture_default_str();

    WorkerArgs wk;
    auto* w = app.add_subcommand("worker", "Serve the worker protocol on stdin/stdout with the reference backend");
    add_reference_options(w, wk.reference);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        if (err.get_exit_code() == 0) return app.exit(err);
        std::cerr << "error: " << err.what() << "\n\n";
        const auto used = app.get_subcommands();
        std::cerr << (used.empty() ? app.help() : used.front()->help());
        return kExitUsage;
    }

    log::set_level(log::parse_level(log_level));
    log::info("resolved config: {}", app.config_to_str(false, false));

    auto* sub = app.get_subcommands().front();
    try {
        if (sub == s) return cmd_synthesize(syn);
        if (sub == t) return cmd_transform(tr);
        if (sub == tn) return cmd_train(ta);
        if (sub == sp) return cmd_sweep(sw);
        if (sub == e) return cmd_eval(ev);
        if (sub == r) return cmd_report(rp);
        if (sub == w) {
            const auto served = serve_worker(std::cin, std::cout, wk.reference);
            log::info("worker served {} jobs", served);
            return kExitOk;
        }
    } catch (const Error& err) {
        log::error("{}", err.what());
        return kExitDomainError;
    } catch (const std::invalid_argument& err) {
        log::error("{}", err.what());
        std::cerr << sub->help();
        return kExitUsage;
    } catch (const std::exception& err) {
        log::error("{}", err.what());
        return kExitDomainError;
    }
    return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"stilt"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace stilt
