#include "stilt/sweep.hpp"

#include "stilt/error.hpp"
#include "stilt/io.hpp"
#include "stilt/log.hpp"
#include "stilt/worker.hpp"

#include <fmt/core.h>

#include <chrono>
#include <mutex>
#include <set>
#include <thread>

namespace stilt {

using json = nlohmann::json;
namespace fs = std::filesystem;

Grid Grid::standard() { return Grid{{5e-6, 1e-5, 2e-5}, {8, 16, 32}, {0.0, 0.2}, {12, 42}}; }

namespace {

template <typename T>
std::vector<T> unique_in_order(const std::vector<T>& v) {
    std::vector<T> out;
    for (const auto& x : v) {
        if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
    }
    return out;
}

}  // namespace

std::vector<HyperParams> expand_grid(const Grid& grid) {
    const auto lrs = unique_in_order(grid.learning_rate);
    const auto batches = unique_in_order(grid.effective_batch);
    const auto warmups = unique_in_order(grid.warmup_ratio);
    const auto seeds = unique_in_order(grid.seed);
    std::vector<HyperParams> out;
    out.reserve(lrs.size() * batches.size() * warmups.size() * seeds.size());
    for (double lr : lrs)
        for (std::size_t b : batches)
            for (double w : warmups)
                for (std::int64_t s : seeds) out.push_back(HyperParams{lr, b, w, s});
    return out;
}

// ---------------------------------------------------------------------------
// Spec files

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

template <typename T>
std::vector<T> axis(const json& grid, const char* key, const std::vector<T>& fallback) {
    if (!grid.contains(key)) return fallback;
    const auto& a = grid.at(key);
    if (!a.is_array() || a.empty()) throw SpecError(fmt::format("grid axis '{}' must be a non-empty list", key));
    return a.get<std::vector<T>>();
}

HyperParams hyperparams_from(const json& j, HyperParams hp) {
    if (j.contains("learning_rate")) hp.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("effective_batch")) hp.effective_batch = j.at("effective_batch").get<std::size_t>();
    if (j.contains("warmup_ratio")) hp.warmup_ratio = j.at("warmup_ratio").get<double>();
    if (j.contains("seed")) hp.seed = j.at("seed").get<std::int64_t>();
    validate(hp);
    return hp;
}

}  // namespace

SweepSpec parse_sweep_spec(const json& j, const fs::path& base_dir) {
    SweepSpec s;
    try {
        if (!j.is_object()) throw SpecError("sweep spec must be a JSON object");
        if (j.contains("intermediate") && !j.at("intermediate").is_null()) {
            const auto& in = j.at("intermediate");
            IntermediateSpec is;
            is.dataset = resolve(base_dir, in.at("dataset").get<std::string>());
            if (in.contains("dataset_dev") && !in.at("dataset_dev").is_null()) {
                is.dataset_dev = resolve(base_dir, in.at("dataset_dev").get<std::string>());
            }
            is.name = in.value("name", std::string{});
            if (in.contains("hyperparams")) is.hyperparams = hyperparams_from(in.at("hyperparams"), is.hyperparams);
            if (in.contains("max_epochs") && !in.at("max_epochs").is_null()) is.max_epochs = in.at("max_epochs").get<std::size_t>();
            s.intermediate = std::move(is);
        }
        const auto& t = j.at("target");
        s.target_train = resolve(base_dir, t.at("dataset_train").get<std::string>());
        s.target_dev = resolve(base_dir, t.at("dataset_dev").get<std::string>());
        s.target_name = t.value("name", std::string{});
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            const Grid p = Grid::standard();
            s.grid = Grid{axis(g, "learning_rate", p.learning_rate), axis(g, "effective_batch", p.effective_batch),
                          axis(g, "warmup_ratio", p.warmup_ratio), axis(g, "seed", p.seed)};
        }
        s.backend = j.value("backend", std::string("reference"));
        if (s.backend != "reference" && s.backend != "worker") throw SpecError("unknown backend '" + s.backend + "'");
        if (j.contains("worker_command") && !j.at("worker_command").is_null()) {
            s.worker_command = j.at("worker_command").get<std::vector<std::string>>();
        }
        s.worker_timeout_s = j.value("worker_timeout_s", 3600.0);
        s.parallelism = j.value("parallelism", std::size_t{1});
        if (s.parallelism == 0) throw SpecError("parallelism must be positive");
        s.ledger = resolve(base_dir, j.at("ledger").get<std::string>());
        if (j.contains("max_epochs") && !j.at("max_epochs").is_null()) s.max_epochs = j.at("max_epochs").get<std::size_t>();
        if (j.contains("reference")) {
            const auto& r = j.at("reference");
            s.reference.architecture.feature_dim = r.value("feature_dim", s.reference.architecture.feature_dim);
            s.reference.architecture.hidden_dim = r.value("hidden_dim", s.reference.architecture.hidden_dim);
            s.reference.lr_scale = r.value("lr_scale", s.reference.lr_scale);
        }
        s.keep_checkpoints = j.value("keep_checkpoints", true);
        if (j.contains("work_dir")) s.work_dir = resolve(base_dir, j.at("work_dir").get<std::string>());
        if (j.contains("cache_dir")) s.cache_dir = resolve(base_dir, j.at("cache_dir").get<std::string>());
    } catch (const json::exception& e) {
        throw SpecError(e.what());
    } catch (const std::invalid_argument& e) {
        throw SpecError(e.what());
    }
    for (const auto& hp : expand_grid(s.grid)) {
        try {
            validate(hp);
        } catch (const std::invalid_argument& e) {
            throw SpecError(std::string("grid: ") + e.what());
        }
    }
    if (s.work_dir.empty()) s.work_dir = s.ledger.parent_path() / (s.ledger.stem().string() + ".runs");
    if (s.cache_dir.empty()) s.cache_dir = s.ledger.parent_path() / ".stilt-cache";
    return s;
}

SweepSpec load_sweep_spec(const fs::path& path) {
    json j;
    try {
        j = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
        throw SpecError(path.string() + ": " + e.what());
    }
    return parse_sweep_spec(j, path.parent_path());
}

nlohmann::ordered_json to_json(const SweepSpec& s) {
    nlohmann::ordered_json j;
    if (s.intermediate) {
        const auto& in = *s.intermediate;
        j["intermediate"] = {{"name", in.name},
                             {"dataset", in.dataset.string()},
                             {"dataset_dev", in.dataset_dev ? nlohmann::ordered_json(in.dataset_dev->string())
                                                            : nlohmann::ordered_json(nullptr)},
                             {"hyperparams", nlohmann::ordered_json::parse(canonical_string(in.hyperparams))},
                             {"max_epochs", in.max_epochs ? nlohmann::ordered_json(*in.max_epochs)
                                                          : nlohmann::ordered_json(nullptr)}};
    } else {
        j["intermediate"] = nullptr;
    }
    j["target"] = {{"name", s.target_name}, {"dataset_train", s.target_train.string()}, {"dataset_dev", s.target_dev.string()}};
    j["grid"] = {{"learning_rate", s.grid.learning_rate},
                 {"effective_batch", s.grid.effective_batch},
                 {"warmup_ratio", s.grid.warmup_ratio},
                 {"seed", s.grid.seed}};
    j["backend"] = s.backend;
    j["worker_command"] = s.worker_command.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(s.worker_command);
    j["worker_timeout_s"] = s.worker_timeout_s;
    j["parallelism"] = s.parallelism;
    j["ledger"] = s.ledger.string();
    j["max_epochs"] = s.max_epochs ? nlohmann::ordered_json(*s.max_epochs) : nlohmann::ordered_json(nullptr);
    j["reference"] = {{"feature_dim", s.reference.architecture.feature_dim},
                      {"hidden_dim", s.reference.architecture.hidden_dim},
                      {"lr_scale", s.reference.lr_scale}};
    j["keep_checkpoints"] = s.keep_checkpoints;
    j["work_dir"] = s.work_dir.string();
    j["cache_dir"] = s.cache_dir.string();
    return j;
}

// ---------------------------------------------------------------------------
// Intermediate phase

namespace {

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw DatasetMissing(p.string());
}

json backend_json(const SweepSpec& spec, std::size_t max_epochs) {
    json b;
    b["name"] = spec.backend;
    if (spec.backend == "reference") {
        b["feature_dim"] = spec.reference.architecture.feature_dim;
        b["hidden_dim"] = spec.reference.architecture.hidden_dim;
        b["lr_scale"] = spec.reference.lr_scale;
    } else {
        b["command"] = spec.worker_command;
    }
    b["max_epochs"] = max_epochs;
    return b;
}

struct IntermediatePlan {
    std::string name;
    McDataset train;
    McDataset dev;
    std::size_t max_epochs = 0;
    std::string config_hash;
};

IntermediatePlan plan_intermediate(const SweepSpec& spec) {
    const auto& in = *spec.intermediate;
    require_file(in.dataset);
    IntermediatePlan plan;
    std::map<std::string, std::string> digests{{"train", file_digest(in.dataset)}};
    McDataset ds = read_jsonl(in.dataset);
    plan.name = in.name.empty() ? ds.name : in.name;
    if (in.dataset_dev) {
        require_file(*in.dataset_dev);
        digests["dev"] = file_digest(*in.dataset_dev);
        plan.train = std::move(ds);
        plan.dev = read_jsonl(*in.dataset_dev);
    } else {
        std::tie(plan.train, plan.dev) = split_train_dev(ds, 0.1, 42);
    }
    plan.max_epochs = in.max_epochs.value_or(default_max_epochs(Phase::intermediate, plan.train.examples.size()));
    plan.config_hash = compute_config_hash(plan.name, "", in.hyperparams, backend_json(spec, plan.max_epochs), digests);
    return plan;
}

std::mutex& cache_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

std::string intermediate_config_hash(const SweepSpec& spec) {
    if (!spec.intermediate) return "";
    return plan_intermediate(spec).config_hash;
}

std::optional<IntermediateResult> prepare_intermediate(const SweepSpec& spec, SweepCounters* counters) {
    if (!spec.intermediate) return std::nullopt;
    IntermediatePlan plan = plan_intermediate(spec);
    const fs::path dir = spec.cache_dir / plan.config_hash;
    const fs::path marker = dir / "result.json";

    std::lock_guard lock(cache_mutex());
    if (fs::exists(marker)) {
        const json r = json::parse(io::read_file(marker));
        const fs::path ckpt = r.at("checkpoint").get<std::string>();
        if (fs::exists(ckpt)) {
            if (counters) ++counters->intermediate_cache_hits;
            log::info("intermediate {} cached at {}", plan.name, ckpt.string());
            return IntermediateResult{describe_checkpoint(ckpt, spec.backend), plan.config_hash,
                                      r.at("dev_metric").get<double>(), true};
        }
    }

    fs::create_directories(dir);
    log::info("training intermediate {} ({} examples, {} epochs)", plan.name, plan.train.examples.size(), plan.max_epochs);
    TrainResult result;
    if (spec.backend == "reference") {
        ReferenceRun run;
        run.phase = Phase::intermediate;
        run.hyperparams = spec.intermediate->hyperparams;
        run.max_epochs = plan.max_epochs;
        run.options = spec.reference;
        run.options.write_checkpoint = true;
        run.output_dir = dir;
        const auto dim = spec.reference.architecture.feature_dim;
        result = train_reference(prepare(plan.train, dim), prepare(plan.dev, dim), run);
    } else {
        write_jsonl(plan.train, dir / "train.jsonl");
        write_jsonl(plan.dev, dir / "dev.jsonl");
        TrainJob job;
        job.phase = Phase::intermediate;
        job.train_path = dir / "train.jsonl";
        job.dev_path = dir / "dev.jsonl";
        job.hyperparams = spec.intermediate->hyperparams;
        job.max_epochs = plan.max_epochs;
        job.backend = "worker";
        job.output_dir = dir;
        result = run_worker_job(job, WorkerOptions{spec.worker_command,
                                                   std::chrono::duration<double>(spec.worker_timeout_s), {}});
    }
    if (counters) ++counters->intermediate_runs;
    if (result.status != RunStatus::ok) throw TrainingFailed("intermediate " + plan.name + ": " + result.error);

    nlohmann::ordered_json r;
    r["name"] = plan.name;
    r["checkpoint"] = result.checkpoint.uri.string();
    r["dev_metric"] = result.dev_metric;
    r["best_epoch"] = result.best_epoch;
    io::write_file_atomic(marker, r.dump(2) + "\n");
    log::info("intermediate {} dev {} = {:.4f}", plan.name, to_string(result.metric_name), result.dev_metric);
    return IntermediateResult{describe_checkpoint(result.checkpoint.uri, spec.backend), plan.config_hash,
                              result.dev_metric, false};
}

// ---------------------------------------------------------------------------
// Target sweep

namespace {

std::string strip_suffix(std::string s, std::string_view suffix) {
    if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
        s.resize(s.size() - suffix.size());
    }
    return s;
}

}  // namespace

std::vector<RunRecord> run_sweep(const SweepSpec& spec, SweepCounters* counters) {
    require_file(spec.target_train);
    require_file(spec.target_dev);
    if (spec.backend == "worker" && spec.worker_command.empty()) throw SpecError("worker backend needs a worker command");

    McDataset train_ds = read_jsonl(spec.target_train);
    McDataset dev_ds = read_jsonl(spec.target_dev);
    const std::string target = spec.target_name.empty() ? strip_suffix(dev_ds.name, "_dev") : spec.target_name;
    const std::size_t epochs = spec.max_epochs.value_or(default_max_epochs(Phase::target, train_ds.examples.size()));

    std::string intermediate_name = "None";
    std::map<std::string, std::string> digests{{"target_train", file_digest(spec.target_train)},
                                               {"target_dev", file_digest(spec.target_dev)}};
    if (spec.intermediate) {
        const IntermediatePlan plan = plan_intermediate(spec);
        intermediate_name = plan.name;
        digests["intermediate"] = plan.config_hash;
    }
    const json backend = backend_json(spec, epochs);

    const auto grid = expand_grid(spec.grid);
    std::set<std::string> done;
    for (const auto& r : read_ledger(spec.ledger)) done.insert(r.config_hash);
    std::vector<std::size_t> pending;
    std::vector<std::string> hashes;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        hashes.push_back(compute_config_hash(intermediate_name, target, grid[i], backend, digests));
        if (done.count(hashes.back())) {
            if (counters) ++counters->resumed;
        } else {
            pending.push_back(i);
        }
    }
    log::info("sweep {}→{}: {} configs, {} already in ledger", intermediate_name, target, grid.size(),
              grid.size() - pending.size());
    if (pending.empty()) return {};

    std::optional<Checkpoint> base;
    if (spec.intermediate) base = prepare_intermediate(spec, counters)->checkpoint;

    ReferenceOptions options = spec.reference;
    options.write_checkpoint = spec.keep_checkpoints;
    std::optional<PreparedData> train_data, dev_data;
    if (spec.backend == "reference") {
        train_data = prepare(train_ds, options.architecture.feature_dim);
        dev_data = prepare(dev_ds, options.architecture.feature_dim);
    }
    const double chance = dev_ds.metric_name == MetricName::mcc ? 0.0 : 1.0 / static_cast<double>(dev_ds.num_options);
    const double majority = majority_label_frequency(dev_ds);

    LedgerWriter writer(spec.ledger);
    std::vector<std::optional<RunRecord>> results(pending.size());
    std::atomic<std::size_t> next{0};

    auto run_one = [&](std::size_t slot) {
        const std::size_t gi = pending[slot];
        const HyperParams& hp = grid[gi];
        const fs::path out_dir = spec.work_dir / hashes[gi];
        const auto start = std::chrono::steady_clock::now();
        TrainResult r;
        try {
            if (spec.backend == "reference") {
                ReferenceRun run;
                run.phase = Phase::target;
                run.hyperparams = hp;
                run.base_checkpoint = base;
                run.max_epochs = epochs;
                run.options = options;
                run.output_dir = out_dir;
                r = train_reference(*train_data, *dev_data, run);
            } else {
                TrainJob job;
                job.phase = Phase::target;
                job.train_path = spec.target_train;
                job.dev_path = spec.target_dev;
                job.hyperparams = hp;
                job.base_checkpoint = base;
                job.max_epochs = epochs;
                job.backend = "worker";
                job.output_dir = out_dir;
                fs::create_directories(out_dir);
                r = run_worker_job(job, WorkerOptions{spec.worker_command,
                                                      std::chrono::duration<double>(spec.worker_timeout_s), {}});
            }
        } catch (const std::exception& e) {
            r = TrainResult{};
            r.status = RunStatus::failed;
            r.metric_name = dev_ds.metric_name;
            r.error = e.what();
        }
        if (counters) ++counters->target_runs;

        RunRecord rec;
        rec.run_id = hashes[gi].substr(0, 16);
        rec.intermediate = intermediate_name;
        rec.target = target;
        rec.hyperparams = hp;
        rec.status = r.status;
        rec.dev_metric = r.status == RunStatus::ok ? r.dev_metric : 0.0;
        rec.metric_name = dev_ds.metric_name;
        rec.checkpoint = r.checkpoint.uri.string();
        rec.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        rec.config_hash = hashes[gi];
        rec.backend = backend;
        rec.dataset_digests = digests;
        rec.best_epoch = r.best_epoch;
        rec.chance_level = chance;
        rec.majority_frequency = majority;
        rec.error = r.error;
        writer.append(rec);
        log::info("run {}/{} {} lr={} batch={} warmup={} seed={}: {} {:.4f}", slot + 1, pending.size(),
                  rec.pair_label(), hp.learning_rate, hp.effective_batch, hp.warmup_ratio, hp.seed,
                  to_string(rec.status), rec.dev_metric);
        results[slot] = std::move(rec);
    };

    auto drain = [&] {
        for (std::size_t slot; (slot = next.fetch_add(1)) < pending.size();) run_one(slot);
    };
    const std::size_t threads = std::min(spec.parallelism, pending.size());
    if (threads <= 1) {
        drain();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(drain);
        for (auto& t : pool) t.join();
    }

    std::vector<RunRecord> out;
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
}

}  // namespace stilt
