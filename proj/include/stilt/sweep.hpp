#pragma once

#include "stilt/ledger.hpp"
#include "stilt/trainer.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stilt {

struct Grid {
    std::vector<double> learning_rate;
    std::vector<std::size_t> effective_batch;
    std::vector<double> warmup_ratio;
    std::vector<std::int64_t> seed;

    /// {5e-6, 1e-5, 2e-5} x {8, 16, 32} x {0, 0.2} x {12, 42}.
    static Grid standard();
};

/// Cartesian product, lexicographic in (learning_rate, effective_batch,
/// warmup_ratio, seed) with each axis in declared order. Repeated axis
/// values are dropped so the output is duplicate-free.
std::vector<HyperParams> expand_grid(const Grid& grid);

struct IntermediateSpec {
    std::string name;  // defaults to the dataset's name
    std::filesystem::path dataset;
    std::optional<std::filesystem::path> dataset_dev;  // else 10% is held out
    HyperParams hyperparams = intermediate_hyperparams();
    std::optional<std::size_t> max_epochs;
};

struct SweepSpec {
    std::optional<IntermediateSpec> intermediate;
    std::string target_name;  // defaults to the dev dataset's name without "_dev"
    std::filesystem::path target_train;
    std::filesystem::path target_dev;
    Grid grid = Grid::standard();
    std::string backend = "reference";
    std::vector<std::string> worker_command;
    double worker_timeout_s = 3600.0;
    std::size_t parallelism = 1;
    std::filesystem::path ledger;
    std::optional<std::size_t> max_epochs;  // target phase
    ReferenceOptions reference;
    bool keep_checkpoints = true;
    std::filesystem::path work_dir;   // per-run checkpoints; default <ledger stem>.runs beside the ledger
    std::filesystem::path cache_dir;  // intermediate checkpoints; default .stilt-cache beside the ledger
};

/// Relative paths are resolved against base_dir. Throws SpecError.
SweepSpec parse_sweep_spec(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SweepSpec load_sweep_spec(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const SweepSpec& spec);

/// Training runs actually performed; cache hits and resumed configs do not count.
struct SweepCounters {
    std::atomic<std::size_t> intermediate_runs{0};
    std::atomic<std::size_t> intermediate_cache_hits{0};
    std::atomic<std::size_t> target_runs{0};
    std::atomic<std::size_t> resumed{0};
};

struct IntermediateResult {
    Checkpoint checkpoint;
    std::string config_hash;
    double dev_metric = 0.0;
    bool cached = false;
};

/// Config hash of the intermediate phase (dataset digests, hyperparameters,
/// backend). Does not train.
std::string intermediate_config_hash(const SweepSpec& spec);

/// Trains the intermediate task once and caches the checkpoint under its
/// config hash. nullopt when the spec has no intermediate task.
std::optional<IntermediateResult> prepare_intermediate(const SweepSpec& spec, SweepCounters* counters = nullptr);

/// Runs every grid point whose config hash is not yet in the ledger and
/// appends a record per completed run. Returns the new records in grid order.
std::vector<RunRecord> run_sweep(const SweepSpec& spec, SweepCounters* counters = nullptr);

}  // namespace stilt
