#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stilt {

enum class TaskType { multiple_choice, classification };
enum class MetricName { accuracy, mcc };

std::string_view to_string(TaskType t);
std::string_view to_string(MetricName m);
TaskType parse_task_type(std::string_view s);
MetricName parse_metric_name(std::string_view s);

/// Separator placed between sentence fields when a classification input has
/// more than one text field (e.g. premise and hypothesis).
inline constexpr std::string_view kFieldSeparator = "⊠";

/// One multiple-choice instance. Classification tasks reuse it with the
/// label names as options and the joined input text as premise.
struct McExample {
    std::string id;
    std::string premise;
    std::vector<std::string> options;
    int label = 0;
    std::map<std::string, std::string> meta;

    bool operator==(const McExample&) const = default;
};

struct ProvenanceStep {
    std::string op;
    std::map<std::string, std::string> params;

    bool operator==(const ProvenanceStep&) const = default;
};

struct McDataset {
    std::string name;
    TaskType task_type = TaskType::multiple_choice;
    MetricName metric_name = MetricName::accuracy;
    std::size_t num_options = 0;
    std::vector<McExample> examples;
    std::vector<ProvenanceStep> provenance;

    bool operator==(const McDataset&) const = default;
};

/// Throws InvariantViolation for the first broken rule. Line numbers are the
/// 1-based JSONL line of the offending example (0 for dataset-level rules).
void validate(const McDataset& ds);

/// Frequency of the most common gold label (gold position for MC tasks).
double majority_label_frequency(const McDataset& ds);

// Transforms. All are pure and append one provenance step.

/// Replaces every premise with the empty string.
McDataset ablate_premises(const McDataset& ds);

/// Permutes the whitespace tokens of every non-gold option. The stream for
/// option i of example e is derived from (seed, e.id, i).
McDataset shuffle_fake_endings(const McDataset& ds, std::uint64_t seed);

/// Seeded Fisher-Yates shuffle of the example order, then the first n.
McDataset subsample(const McDataset& ds, std::size_t n, std::uint64_t seed);

/// Disjoint seeded split with |dev| = round(dev_fraction * |ds|). Relative
/// order of examples is kept within each part.
std::pair<McDataset, McDataset> split_train_dev(const McDataset& ds, double dev_fraction,
                                                std::uint64_t seed);

// Serialization.

/// The JSONL bytes of the examples, one object per line.
std::string to_jsonl(const McDataset& ds);
std::string content_digest(const McDataset& ds);

std::filesystem::path manifest_path(const std::filesystem::path& jsonl_path);

/// Writes the JSONL file and its ".manifest.json" sidecar. Both are written
/// to temporaries and renamed into place.
void write_jsonl(const McDataset& ds, const std::filesystem::path& path);

/// Reads and validates a dataset. Metadata comes from the sidecar manifest
/// when present; otherwise the file is treated as multiple-choice/accuracy.
McDataset read_jsonl(const std::filesystem::path& path);

/// SHA-256 of the JSONL bytes on disk.
std::string file_digest(const std::filesystem::path& path);

}  // namespace stilt
