#include "stilt/ledger.hpp"

#include "stilt/error.hpp"
#include "stilt/hash.hpp"

#include <fmt/core.h>

#include <fstream>

namespace stilt {

using json = nlohmann::json;

namespace {

json hyperparams_json(const HyperParams& hp) { return json::parse(canonical_string(hp)); }

HyperParams hyperparams_from(const json& j) {
    HyperParams hp;
    hp.learning_rate = j.at("learning_rate").get<double>();
    hp.effective_batch = j.at("effective_batch").get<std::size_t>();
    hp.warmup_ratio = j.at("warmup_ratio").get<double>();
    hp.seed = j.at("seed").get<std::int64_t>();
    return hp;
}

}  // namespace

std::string compute_config_hash(const std::string& intermediate, const std::string& target, const HyperParams& hp,
                                const json& backend, const std::map<std::string, std::string>& dataset_digests) {
    json j;
    j["pair"] = json::array({intermediate, target});
    j["hyperparams"] = hyperparams_json(hp);
    j["backend"] = backend;
    j["dataset_digests"] = dataset_digests;
    return sha256_hex(j.dump());
}

nlohmann::ordered_json to_json(const RunRecord& r) {
    nlohmann::ordered_json j;
    j["run_id"] = r.run_id;
    j["pair"] = {r.intermediate, r.target};
    j["hyperparams"] = hyperparams_json(r.hyperparams);
    j["dev_metric"] = r.dev_metric;
    j["metric_name"] = to_string(r.metric_name);
    j["status"] = to_string(r.status);
    j["checkpoint"] = r.checkpoint;
    j["duration_s"] = r.duration_s;
    j["config_hash"] = r.config_hash;
    j["backend"] = r.backend;
    j["dataset_digests"] = r.dataset_digests;
    j["best_epoch"] = r.best_epoch;
    j["chance_level"] = r.chance_level;
    j["majority_frequency"] = r.majority_frequency;
    j["error"] = r.error.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.error);
    return j;
}

RunRecord record_from_json(const json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    const auto& pair = j.at("pair");
    if (!pair.is_array() || pair.size() != 2) throw std::invalid_argument("'pair' must hold two names");
    r.intermediate = pair[0].get<std::string>();
    r.target = pair[1].get<std::string>();
    r.hyperparams = hyperparams_from(j.at("hyperparams"));
    r.dev_metric = j.at("dev_metric").is_null() ? 0.0 : j.at("dev_metric").get<double>();
    r.metric_name = parse_metric_name(j.at("metric_name").get<std::string>());
    const auto status = j.at("status").get<std::string>();
    if (status != "ok" && status != "failed") throw std::invalid_argument("bad status '" + status + "'");
    r.status = status == "ok" ? RunStatus::ok : RunStatus::failed;
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.duration_s = j.at("duration_s").get<double>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.backend = j.at("backend");
    r.dataset_digests = j.at("dataset_digests").get<std::map<std::string, std::string>>();
    r.best_epoch = j.value("best_epoch", std::size_t{0});
    r.chance_level = j.value("chance_level", 0.0);
    r.majority_frequency = j.value("majority_frequency", 0.0);
    if (auto it = j.find("error"); it != j.end() && it->is_string()) r.error = it->get<std::string>();
    return r;
}

std::vector<RunRecord> read_ledger(const std::filesystem::path& path) {
    std::vector<RunRecord> out;
    if (!std::filesystem::exists(path)) return out;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open ledger " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw LedgerCorrupt(fmt::format("{} line {}: {}", path.string(), line_no, e.what()));
        }
    }
    return out;
}

LedgerWriter::LedgerWriter(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot open ledger " + path.string() + " for appending");
}

void LedgerWriter::append(const RunRecord& r) {
    const std::string line = to_json(r).dump() + "\n";
    std::lock_guard lock(mutex_);
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw IoError("ledger append failed");
}

}  // namespace stilt
