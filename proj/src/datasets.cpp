#include "stilt/datasets.hpp"

#include "stilt/error.hpp"
#include "stilt/hash.hpp"
#include "stilt/io.hpp"
#include "stilt/log.hpp"
#include "stilt/rng.hpp"
#include "stilt/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace stilt {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(TaskType t) {
    return t == TaskType::multiple_choice ? "multiple_choice" : "classification";
}

std::string_view to_string(MetricName m) { return m == MetricName::accuracy ? "accuracy" : "mcc"; }

TaskType parse_task_type(std::string_view s) {
    if (s == "multiple_choice") return TaskType::multiple_choice;
    if (s == "classification") return TaskType::classification;
    throw InvariantViolation(0, "unknown task_type '" + std::string(s) + "'");
}

MetricName parse_metric_name(std::string_view s) {
    if (s == "accuracy") return MetricName::accuracy;
    if (s == "mcc") return MetricName::mcc;
    throw InvariantViolation(0, "unknown metric_name '" + std::string(s) + "'");
}

namespace {

void validate_example(const McExample& ex, std::size_t num_options, std::size_t line) {
    if (ex.options.size() < 2) throw InvariantViolation(line, "fewer than 2 options");
    if (num_options != 0 && ex.options.size() != num_options) {
        throw InvariantViolation(line, "option count " + std::to_string(ex.options.size()) +
                                           " differs from num_options " + std::to_string(num_options));
    }
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= ex.options.size()) {
        throw InvariantViolation(line, "label " + std::to_string(ex.label) + " out of range [0, " +
                                           std::to_string(ex.options.size()) + ")");
    }
    for (const auto& opt : ex.options) {
        if (opt.empty()) throw InvariantViolation(line, "empty option");
    }
}

McDataset with_step(const McDataset& ds, std::string op, std::map<std::string, std::string> params) {
    McDataset out = ds;
    out.provenance.push_back({std::move(op), std::move(params)});
    return out;
}

void require_mc(const McDataset& ds, std::string_view op) {
    if (ds.task_type != TaskType::multiple_choice) {
        throw WrongTaskType(std::string(op) + " requires a multiple_choice dataset, got '" + ds.name + "'");
    }
}

ordered_json example_to_json(const McExample& ex) {
    ordered_json j;
    j["id"] = ex.id;
    j["premise"] = ex.premise;
    j["options"] = ex.options;
    j["label"] = ex.label;
    j["meta"] = ordered_json::object();
    for (const auto& [k, v] : ex.meta) j["meta"][k] = v;
    return j;
}

McExample example_from_json(const json& j, std::size_t line) {
    if (!j.is_object()) throw ParseError(line, "expected a JSON object");
    auto field = [&](const char* name) -> const json& {
        auto it = j.find(name);
        if (it == j.end()) throw ParseError(line, std::string("missing field '") + name + "'");
        return *it;
    };
    McExample ex;
    const json& id = field("id");
    const json& premise = field("premise");
    const json& options = field("options");
    const json& label = field("label");
    if (!id.is_string()) throw ParseError(line, "'id' must be a string");
    if (!premise.is_string()) throw ParseError(line, "'premise' must be a string");
    if (!options.is_array()) throw ParseError(line, "'options' must be an array");
    if (!label.is_number_integer()) throw ParseError(line, "'label' must be an integer");
    ex.id = id.get<std::string>();
    ex.premise = premise.get<std::string>();
    for (const auto& o : options) {
        if (!o.is_string()) throw ParseError(line, "options must be strings");
        ex.options.push_back(o.get<std::string>());
    }
    const auto raw_label = label.get<std::int64_t>();
    if (raw_label < std::numeric_limits<int>::min() || raw_label > std::numeric_limits<int>::max()) {
        throw InvariantViolation(line, "label out of range");
    }
    ex.label = static_cast<int>(raw_label);
    if (auto it = j.find("meta"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) throw ParseError(line, "'meta' must be an object");
        for (const auto& [k, v] : it->items()) {
            if (!v.is_string()) throw ParseError(line, "meta values must be strings");
            ex.meta[k] = v.get<std::string>();
        }
    }
    return ex;
}

}  // namespace

void validate(const McDataset& ds) {
    if (ds.metric_name == MetricName::mcc && ds.task_type != TaskType::classification) {
        throw InvariantViolation(0, "metric mcc is only valid for classification datasets");
    }
    if (ds.provenance.empty()) throw InvariantViolation(0, "provenance chain is empty");
    std::set<std::string_view> ids;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& ex = ds.examples[i];
        validate_example(ex, ds.num_options, i + 1);
        if (!ids.insert(ex.id).second) throw InvariantViolation(i + 1, "duplicate id '" + ex.id + "'");
    }
}

double majority_label_frequency(const McDataset& ds) {
    if (ds.examples.empty()) return 0.0;
    std::map<int, std::size_t> counts;
    for (const auto& ex : ds.examples) ++counts[ex.label];
    std::size_t best = 0;
    for (const auto& [label, c] : counts) best = std::max(best, c);
    return static_cast<double>(best) / static_cast<double>(ds.examples.size());
}

McDataset ablate_premises(const McDataset& ds) {
    require_mc(ds, "ablate_premises");
    McDataset out = with_step(ds, "ablate_premises", {});
    for (auto& ex : out.examples) ex.premise.clear();
    return out;
}

McDataset shuffle_fake_endings(const McDataset& ds, std::uint64_t seed) {
    require_mc(ds, "shuffle_fake_endings");
    McDataset out = with_step(ds, "shuffle_fake_endings", {{"seed", std::to_string(seed)}});
    for (auto& ex : out.examples) {
        const std::uint64_t example_seed = derive_seed(seed, ex.id);
        for (std::size_t i = 0; i < ex.options.size(); ++i) {
            if (static_cast<int>(i) == ex.label) continue;
            auto toks = text::tokens(ex.options[i]);
            if (toks.size() < 2) continue;
            Rng rng(derive_seed(example_seed, "option", i));
            rng.shuffle(toks);
            ex.options[i] = text::join(toks, " ");
        }
    }
    return out;
}

McDataset subsample(const McDataset& ds, std::size_t n, std::uint64_t seed) {
    if (n > ds.examples.size()) {
        throw SampleTooLarge("requested " + std::to_string(n) + " of " + std::to_string(ds.examples.size()) +
                             " examples");
    }
    McDataset out =
        with_step(ds, "subsample", {{"n", std::to_string(n)}, {"seed", std::to_string(seed)}});
    Rng rng(derive_seed(seed, "subsample"));
    rng.shuffle(out.examples);
    out.examples.resize(n);
    return out;
}

std::pair<McDataset, McDataset> split_train_dev(const McDataset& ds, double dev_fraction,
                                                std::uint64_t seed) {
    if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) {
        throw std::invalid_argument("dev_fraction must lie in (0, 1)");
    }
    const std::size_t n = ds.examples.size();
    const auto dev_n = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "split_train_dev"));
    rng.shuffle(order);
    std::vector<bool> is_dev(n, false);
    for (std::size_t i = 0; i < dev_n; ++i) is_dev[order[i]] = true;

    const std::map<std::string, std::string> params{
        {"dev_fraction", fmt::format("{}", dev_fraction)}, {"seed", std::to_string(seed)}};
    auto train_params = params;
    train_params["part"] = "train";
    auto dev_params = params;
    dev_params["part"] = "dev";
    McDataset train = with_step(ds, "split_train_dev", train_params);
    McDataset dev = with_step(ds, "split_train_dev", dev_params);
    train.examples.clear();
    dev.examples.clear();
    train.name = ds.name + "_train";
    dev.name = ds.name + "_dev";
    for (std::size_t i = 0; i < n; ++i) (is_dev[i] ? dev : train).examples.push_back(ds.examples[i]);
    return {std::move(train), std::move(dev)};
}

std::string to_jsonl(const McDataset& ds) {
    std::string out;
    for (const auto& ex : ds.examples) {
        out += example_to_json(ex).dump();
        out += '\n';
    }
    return out;
}

std::string content_digest(const McDataset& ds) { return sha256_hex(to_jsonl(ds)); }

std::filesystem::path manifest_path(const std::filesystem::path& jsonl_path) {
    auto p = jsonl_path;
    p.replace_extension(".manifest.json");
    return p;
}

std::string file_digest(const std::filesystem::path& path) { return sha256_file_hex(path); }

void write_jsonl(const McDataset& ds, const std::filesystem::path& path) {
    const std::string body = to_jsonl(ds);
    ordered_json manifest;
    manifest["name"] = ds.name;
    manifest["task_type"] = to_string(ds.task_type);
    manifest["metric_name"] = to_string(ds.metric_name);
    manifest["num_options"] = ds.num_options;
    manifest["provenance"] = ordered_json::array();
    for (const auto& step : ds.provenance) {
        ordered_json s;
        s["op"] = step.op;
        s["params"] = ordered_json::object();
        for (const auto& [k, v] : step.params) s["params"][k] = v;
        manifest["provenance"].push_back(std::move(s));
    }
    manifest["example_count"] = ds.examples.size();
    manifest["content_digest"] = sha256_hex(body);
    io::write_file_atomic(path, body);
    io::write_file_atomic(manifest_path(path), manifest.dump(2) + "\n");
}

McDataset read_jsonl(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("dataset not found: " + path.string());
    const std::string body = io::read_file(path);

    McDataset ds;
    const auto mpath = manifest_path(path);
    std::size_t expected_count = 0;
    bool have_manifest = std::filesystem::exists(mpath);
    if (have_manifest) {
        json m;
        try {
            m = json::parse(io::read_file(mpath));
            ds.name = m.at("name").get<std::string>();
            ds.task_type = parse_task_type(m.at("task_type").get<std::string>());
            ds.metric_name = parse_metric_name(m.at("metric_name").get<std::string>());
            ds.num_options = m.at("num_options").get<std::size_t>();
            for (const auto& s : m.at("provenance")) {
                ProvenanceStep step;
                step.op = s.at("op").get<std::string>();
                if (auto it = s.find("params"); it != s.end()) {
                    for (const auto& [k, v] : it->items()) step.params[k] = v.get<std::string>();
                }
                ds.provenance.push_back(std::move(step));
            }
            expected_count = m.at("example_count").get<std::size_t>();
            const auto digest = m.at("content_digest").get<std::string>();
            if (digest != sha256_hex(body)) {
                log::warn("{}: content digest differs from manifest (file edited after writing?)",
                          path.string());
            }
        } catch (const json::exception& e) {
            throw ParseError(0, mpath.string() + ": " + e.what());
        }
    } else {
        ds.name = path.stem().string();
        ds.provenance.push_back({"read_jsonl", {{"source", path.string()}}});
    }

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t end = body.find('\n', pos);
        if (end == std::string::npos) end = body.size();
        std::string_view line(body.data() + pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, e.what());
        }
        McExample ex = example_from_json(j, line_no);
        if (ds.num_options == 0) ds.num_options = ex.options.size();
        validate_example(ex, ds.num_options, line_no);
        ds.examples.push_back(std::move(ex));
    }
    if (ds.examples.empty()) log::warn("{}: empty dataset", path.string());
    if (have_manifest && expected_count != ds.examples.size()) {
        throw InvariantViolation(0, "manifest example_count " + std::to_string(expected_count) +
                                        " but file holds " + std::to_string(ds.examples.size()));
    }
    validate(ds);
    return ds;
}

}  // namespace stilt
