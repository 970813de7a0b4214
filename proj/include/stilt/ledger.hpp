#pragma once

#include "stilt/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace stilt {

/// One completed fine-tuning run as persisted in the sweep ledger.
struct RunRecord {
    std::string run_id;
    std::string intermediate = "None";  // intermediate task name or "None"
    std::string target;
    HyperParams hyperparams;
    double dev_metric = 0.0;
    MetricName metric_name = MetricName::accuracy;
    RunStatus status = RunStatus::ok;
    std::string checkpoint;
    double duration_s = 0.0;
    std::string config_hash;
    nlohmann::json backend;                          // backend description (name + settings)
    std::map<std::string, std::string> dataset_digests;
    std::size_t best_epoch = 0;
    double chance_level = 0.0;        // 1/num_options for accuracy tasks, 0 for MCC
    double majority_frequency = 0.0;  // of the target dev set
    std::string error;

    std::string pair_label() const { return intermediate + "→" + target; }
};

/// SHA-256 over the canonical JSON of (pair, hyperparams, backend, digests).
std::string compute_config_hash(const std::string& intermediate, const std::string& target, const HyperParams& hp,
                                const nlohmann::json& backend,
                                const std::map<std::string, std::string>& dataset_digests);

inline std::string compute_config_hash(const RunRecord& r) {
    return compute_config_hash(r.intermediate, r.target, r.hyperparams, r.backend, r.dataset_digests);
}

nlohmann::ordered_json to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);

/// Reads every record; throws LedgerCorrupt naming the offending line.
/// A missing file is an empty ledger.
std::vector<RunRecord> read_ledger(const std::filesystem::path& path);

/// Serialized single-writer append with a flush per record.
class LedgerWriter {
public:
    explicit LedgerWriter(const std::filesystem::path& path);
    void append(const RunRecord& r);

private:
    std::mutex mutex_;
    std::ofstream out_;
};

}  // namespace stilt
