#pragma once

#include "stilt/datasets.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stilt {

// ---------------------------------------------------------------------------
// Hyperparameters and jobs

struct HyperParams {
    double learning_rate = 1e-5;
    std::size_t effective_batch = 16;
    double warmup_ratio = 0.0;
    std::int64_t seed = 42;

    bool operator==(const HyperParams&) const = default;
};

/// The fixed setting used for every intermediate phase: lr 1e-5, batch 16,
/// no warmup, seed 42.
HyperParams intermediate_hyperparams();

/// Throws std::invalid_argument unless every field is finite and in range.
void validate(const HyperParams& hp);

/// Canonical JSON text of the hyperparameters (sorted keys, shortest
/// round-trip floats); the form that goes into configuration hashes.
std::string canonical_string(const HyperParams& hp);

enum class Phase { intermediate, target };
std::string_view to_string(Phase p);
Phase parse_phase(std::string_view s);

/// 1 epoch for intermediate tasks with at least 10k examples, 10 for targets
/// with at most 2.5k examples, 3 otherwise.
std::size_t default_max_epochs(Phase phase, std::size_t train_size);

struct Architecture {
    std::uint32_t feature_dim = 1u << 18;
    std::uint32_t hidden_dim = 64;

    bool operator==(const Architecture&) const = default;
};

enum class HeadKind : std::uint32_t { multiple_choice = 0, classification = 1 };

struct HeadSpec {
    HeadKind kind;
    std::uint32_t rows;  // 1 for the multiple-choice head, class count otherwise

    bool operator==(const HeadSpec&) const = default;
};

/// A trained-model artifact. Reference checkpoints carry their architecture;
/// worker checkpoints are opaque paths.
struct Checkpoint {
    std::filesystem::path uri;
    std::string backend = "reference";
    std::optional<Architecture> architecture;
    std::vector<HeadSpec> heads;
    std::string digest;
};

struct ReferenceOptions {
    Architecture architecture;
    /// SGD step = learning_rate * lr_scale. The sweep grid is expressed in
    /// transformer fine-tuning units; the shallow reference model needs
    /// steps several orders of magnitude larger.
    double lr_scale = 3e4;
    bool write_checkpoint = true;

    bool operator==(const ReferenceOptions&) const = default;
};

struct TrainJob {
    Phase phase = Phase::target;
    std::filesystem::path train_path;
    std::filesystem::path dev_path;
    HyperParams hyperparams;
    std::optional<Checkpoint> base_checkpoint;
    std::optional<std::size_t> max_epochs;  // default_max_epochs when unset
    std::string backend = "reference";
    std::filesystem::path output_dir;
    ReferenceOptions reference;
};

enum class RunStatus { ok, failed };
std::string_view to_string(RunStatus s);

struct TrainResult {
    double dev_metric = 0.0;
    MetricName metric_name = MetricName::accuracy;
    std::size_t best_epoch = 0;
    std::vector<std::pair<std::size_t, double>> loss_curve;  // (step, batch loss)
    std::vector<double> dev_curve;                           // per epoch, epoch 0 = init
    RunStatus status = RunStatus::ok;
    Checkpoint checkpoint;
    std::string error;
};

// ---------------------------------------------------------------------------
// Reference model

struct SparseVector {
    std::vector<std::uint32_t> index;  // strictly increasing
    std::vector<double> value;

    std::size_t nnz() const { return index.size(); }
};

/// Character 1-3 grams of the ASCII-lowercased text, FNV-1a hashed into dim
/// buckets, counted and L2-normalized. Empty text gives the zero vector.
SparseVector featurize(std::string_view text, std::uint32_t dim);

/// The text fed to the encoder for option i of a multiple-choice example.
std::string option_input(const McExample& ex, std::size_t option);

/// relu(W1 x) encoder shared across options and tasks, a scalar
/// multiple-choice head and/or a per-class classification head.
/// The encoder is stored feature-major: encoder[f * H + j].
struct Model {
    Architecture arch;
    std::vector<double> encoder;
    std::vector<double> mc_head;   // H values when present
    std::vector<double> cls_head;  // classes x H when present
    std::uint32_t num_classes = 0;

    explicit Model(Architecture a = {});

    bool has_mc_head() const { return !mc_head.empty(); }
    bool has_cls_head() const { return !cls_head.empty(); }
    std::vector<HeadSpec> heads() const;

    /// All-zero weights with the requested heads.
    static Model zeros(Architecture a, bool mc_head, std::uint32_t num_classes = 0);

    bool operator==(const Model&) const = default;
};

/// Gaussian(0, 0.01/sqrt(D)) encoder drawn from seed.
void init_encoder(Model& m, std::int64_t seed);
void init_mc_head(Model& m, std::int64_t seed);
void init_cls_head(Model& m, std::uint32_t num_classes, std::int64_t seed);

/// Rounds every weight to float precision (what a checkpoint stores).
void quantize_to_f32(Model& m);

/// Featurized example: one input per option (multiple choice) or a single
/// input (classification).
struct EncodedExample {
    std::vector<SparseVector> inputs;
    int label = 0;
};

EncodedExample encode_example(const McExample& ex, TaskType task, std::uint32_t dim);
std::vector<EncodedExample> encode_dataset(const McDataset& ds, std::uint32_t dim);

std::vector<double> hidden(const Model& m, const SparseVector& x);
std::vector<double> scores(const Model& m, const EncodedExample& ex, TaskType task);

/// Per-option (or per-class) scores. Throws ArchitectureMismatch when the
/// model lacks a head for the task or the class count differs.
std::vector<double> score_example(const Model& m, const McExample& ex, TaskType task);

/// argmax with lowest-index tie-breaking.
std::size_t predict(std::span<const double> scores);

/// -log softmax(scores)[label], computed stably.
double softmax_cross_entropy(std::span<const double> scores, int label);

/// Checks that the model can score the dataset's task.
void check_compatible(const Model& m, const McDataset& ds);

/// Gradient of the mean batch loss with respect to every weight, dense.
/// Used for verification; training applies the same quantities sparsely.
struct Gradient {
    std::vector<double> encoder;
    std::vector<double> mc_head;
    std::vector<double> cls_head;
};

double batch_loss(const Model& m, std::span<const EncodedExample> batch, TaskType task);
double batch_loss_and_gradient(const Model& m, std::span<const EncodedExample> batch, TaskType task, Gradient& grad);

/// One mini-batch SGD step; returns the batch loss before the update.
double sgd_step(Model& m, std::span<const EncodedExample* const> batch, TaskType task, double lr);

/// Linear warmup over ceil(warmup_ratio * total) steps (at most total - 1),
/// then linear decay reaching zero at the final step.
double scheduled_lr(double peak, std::size_t step, std::size_t total_steps, double warmup_ratio);

// ---------------------------------------------------------------------------
// Checkpoints

/// "STLT", u32 version, u32 D, u32 H, u32 head count, (u32 kind, u32 rows)
/// per head, f32 encoder (feature-major), f32 heads in inventory order,
/// trailing SHA-256 of everything before it. All little-endian.
Checkpoint write_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// Reads a checkpoint's metadata. Paths that are not reference checkpoints
/// are returned as opaque worker checkpoints.
Checkpoint describe_checkpoint(const std::filesystem::path& path, std::string backend = "");

/// Content hash of a file, or of every file under a directory.
std::string path_digest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training and evaluation

/// A dataset with its features computed once; shared read-only across runs.
struct PreparedData {
    McDataset dataset;
    std::vector<EncodedExample> encoded;
    std::uint32_t feature_dim = 0;
};

PreparedData prepare(McDataset ds, std::uint32_t feature_dim);

struct ReferenceRun {
    Phase phase = Phase::target;
    HyperParams hyperparams;
    std::optional<Checkpoint> base_checkpoint;
    std::size_t max_epochs = 0;
    ReferenceOptions options;
    std::filesystem::path output_dir;
};

TrainResult train_reference(const PreparedData& train, const PreparedData& dev, const ReferenceRun& run);

/// Loads the job's datasets and dispatches to the reference backend.
/// Worker jobs go through run_worker_job (see worker.hpp).
TrainResult train(const TrainJob& job);

double evaluate(const Model& m, const PreparedData& data);
double evaluate(const Checkpoint& checkpoint, const McDataset& ds);

}  // namespace stilt
