#include "stilt/trainer.hpp"

#include "stilt/error.hpp"
#include "stilt/hash.hpp"
#include "stilt/io.hpp"
#include "stilt/log.hpp"
#include "stilt/rng.hpp"
#include "stilt/stats.hpp"
#include "stilt/text.hpp"

#include <fmt/core.h>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace stilt {

HyperParams intermediate_hyperparams() { return HyperParams{1e-5, 16, 0.0, 42}; }

void validate(const HyperParams& hp) {
    if (!std::isfinite(hp.learning_rate) || hp.learning_rate <= 0.0) {
        throw std::invalid_argument(fmt::format("learning_rate must be positive and finite, got {}", hp.learning_rate));
    }
    if (hp.effective_batch == 0) throw std::invalid_argument("effective_batch must be positive");
    if (!std::isfinite(hp.warmup_ratio) || hp.warmup_ratio < 0.0 || hp.warmup_ratio >= 1.0) {
        throw std::invalid_argument(fmt::format("warmup_ratio must lie in [0, 1), got {}", hp.warmup_ratio));
    }
}

std::string canonical_string(const HyperParams& hp) {
    nlohmann::json j;
    j["learning_rate"] = hp.learning_rate;
    j["effective_batch"] = hp.effective_batch;
    j["warmup_ratio"] = hp.warmup_ratio;
    j["seed"] = hp.seed;
    return j.dump();
}

std::string_view to_string(Phase p) { return p == Phase::intermediate ? "intermediate" : "target"; }

Phase parse_phase(std::string_view s) {
    if (s == "intermediate") return Phase::intermediate;
    if (s == "target") return Phase::target;
    throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

std::string_view to_string(RunStatus s) { return s == RunStatus::ok ? "ok" : "failed"; }

std::size_t default_max_epochs(Phase phase, std::size_t train_size) {
    if (phase == Phase::intermediate && train_size >= 10000) return 1;
    if (phase == Phase::target && train_size <= 2500) return 10;
    return 3;
}

// ---------------------------------------------------------------------------
// Features

SparseVector featurize(std::string_view input, std::uint32_t dim) {
    if (dim == 0) throw std::invalid_argument("feature dimension must be positive");
    SparseVector out;
    const std::string lowered = text::ascii_lower(input);
    const auto chars = text::utf8_chars(lowered);
    if (chars.empty()) return out;

    std::unordered_map<std::uint32_t, double> counts;
    for (std::size_t i = 0; i < chars.size(); ++i) {
        const char* begin = chars[i].data();
        for (std::size_t n = 1; n <= 3 && i + n <= chars.size(); ++n) {
            const auto& last = chars[i + n - 1];
            const std::string_view gram(begin, static_cast<std::size_t>(last.data() + last.size() - begin));
            counts[fnv1a32(gram) % dim] += 1.0;
        }
    }
    out.index.reserve(counts.size());
    for (const auto& [idx, c] : counts) out.index.push_back(idx);
    std::sort(out.index.begin(), out.index.end());
    double norm = 0.0;
    out.value.reserve(out.index.size());
    for (auto idx : out.index) {
        const double c = counts[idx];
        out.value.push_back(c);
        norm += c * c;
    }
    norm = std::sqrt(norm);
    for (auto& v : out.value) v /= norm;
    return out;
}

std::string option_input(const McExample& ex, std::size_t option) {
    std::string s = ex.premise;
    s += ' ';
    s += kFieldSeparator;
    s += ' ';
    s += ex.options.at(option);
    return s;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(Architecture a) : arch(a) {
    if (a.feature_dim == 0 || a.hidden_dim == 0) throw std::invalid_argument("architecture dimensions must be positive");
    encoder.assign(static_cast<std::size_t>(a.feature_dim) * a.hidden_dim, 0.0);
}

std::vector<HeadSpec> Model::heads() const {
    std::vector<HeadSpec> out;
    if (has_mc_head()) out.push_back({HeadKind::multiple_choice, 1});
    if (has_cls_head()) out.push_back({HeadKind::classification, num_classes});
    return out;
}

Model Model::zeros(Architecture a, bool mc_head, std::uint32_t num_classes) {
    Model m(a);
    if (mc_head) m.mc_head.assign(a.hidden_dim, 0.0);
    if (num_classes > 0) {
        m.num_classes = num_classes;
        m.cls_head.assign(static_cast<std::size_t>(num_classes) * a.hidden_dim, 0.0);
    }
    return m;
}

void init_encoder(Model& m, std::int64_t seed) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), "encoder"));
    const double stddev = 0.01 / std::sqrt(static_cast<double>(m.arch.feature_dim));
    for (auto& w : m.encoder) w = stddev * rng.normal();
}

void init_mc_head(Model& m, std::int64_t seed) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), "mc_head"));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(m.arch.hidden_dim));
    m.mc_head.resize(m.arch.hidden_dim);
    for (auto& w : m.mc_head) w = stddev * rng.normal();
}

void init_cls_head(Model& m, std::uint32_t num_classes, std::int64_t seed) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), "cls_head"));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(m.arch.hidden_dim));
    m.num_classes = num_classes;
    m.cls_head.resize(static_cast<std::size_t>(num_classes) * m.arch.hidden_dim);
    for (auto& w : m.cls_head) w = stddev * rng.normal();
}

void quantize_to_f32(Model& m) {
    auto q = [](std::vector<double>& v) {
        for (auto& w : v) w = static_cast<double>(static_cast<float>(w));
    };
    q(m.encoder);
    q(m.mc_head);
    q(m.cls_head);
}

EncodedExample encode_example(const McExample& ex, TaskType task, std::uint32_t dim) {
    EncodedExample out;
    out.label = ex.label;
    if (task == TaskType::multiple_choice) {
        out.inputs.reserve(ex.options.size());
        for (std::size_t i = 0; i < ex.options.size(); ++i) out.inputs.push_back(featurize(option_input(ex, i), dim));
    } else {
        out.inputs.push_back(featurize(ex.premise, dim));
    }
    return out;
}

std::vector<EncodedExample> encode_dataset(const McDataset& ds, std::uint32_t dim) {
    std::vector<EncodedExample> out;
    out.reserve(ds.examples.size());
    for (const auto& ex : ds.examples) out.push_back(encode_example(ex, ds.task_type, dim));
    return out;
}

namespace {

void pre_activation(const Model& m, const SparseVector& x, std::vector<double>& pre) {
    const std::size_t h = m.arch.hidden_dim;
    pre.assign(h, 0.0);
    for (std::size_t k = 0; k < x.nnz(); ++k) {
        const double v = x.value[k];
        const double* row = m.encoder.data() + static_cast<std::size_t>(x.index[k]) * h;
        for (std::size_t j = 0; j < h; ++j) pre[j] += v * row[j];
    }
}

double dot(const double* a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) s += a[j] * b[j];
    return s;
}

void require_head(const Model& m, TaskType task, std::size_t classes) {
    if (task == TaskType::multiple_choice) {
        if (!m.has_mc_head()) throw ArchitectureMismatch("model has no multiple-choice head");
    } else {
        if (!m.has_cls_head()) throw ArchitectureMismatch("model has no classification head");
        if (classes != m.num_classes) {
            throw ArchitectureMismatch(fmt::format("classification head has {} classes, data has {}", m.num_classes, classes));
        }
    }
}

void softmax(std::span<const double> s, std::vector<double>& p) {
    const double mx = *std::max_element(s.begin(), s.end());
    p.resize(s.size());
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        p[i] = std::exp(s[i] - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
}

// Backward pass pieces for one mini-batch, computed against fixed weights.
struct EncoderDelta {
    const SparseVector* input;
    std::vector<double> delta;  // dL/d pre-activation, H values
};

struct BatchGrad {
    double loss = 0.0;
    std::vector<EncoderDelta> encoder;
    std::vector<double> mc_head;
    std::vector<double> cls_head;
};

BatchGrad backprop(const Model& m, std::span<const EncodedExample* const> batch, TaskType task) {
    BatchGrad g;
    const std::size_t h = m.arch.hidden_dim;
    const double weight = 1.0 / static_cast<double>(batch.size());
    if (task == TaskType::multiple_choice) g.mc_head.assign(h, 0.0);
    else g.cls_head.assign(m.cls_head.size(), 0.0);

    std::vector<std::vector<double>> pre;
    std::vector<double> s, p;
    for (const EncodedExample* ex : batch) {
        if (task == TaskType::multiple_choice) {
            const std::size_t n = ex->inputs.size();
            pre.resize(n);
            s.assign(n, 0.0);
            for (std::size_t o = 0; o < n; ++o) {
                pre_activation(m, ex->inputs[o], pre[o]);
                for (std::size_t j = 0; j < h; ++j) s[o] += m.mc_head[j] * std::max(0.0, pre[o][j]);
            }
            g.loss += weight * softmax_cross_entropy(s, ex->label);
            softmax(s, p);
            for (std::size_t o = 0; o < n; ++o) {
                const double go = weight * (p[o] - (static_cast<int>(o) == ex->label ? 1.0 : 0.0));
                EncoderDelta d{&ex->inputs[o], std::vector<double>(h, 0.0)};
                for (std::size_t j = 0; j < h; ++j) {
                    if (pre[o][j] > 0.0) {
                        g.mc_head[j] += go * pre[o][j];
                        d.delta[j] = go * m.mc_head[j];
                    }
                }
                g.encoder.push_back(std::move(d));
            }
        } else {
            pre.resize(1);
            pre_activation(m, ex->inputs[0], pre[0]);
            const std::size_t c = m.num_classes;
            s.assign(c, 0.0);
            for (std::size_t k = 0; k < c; ++k) {
                const double* row = m.cls_head.data() + k * h;
                for (std::size_t j = 0; j < h; ++j) s[k] += row[j] * std::max(0.0, pre[0][j]);
            }
            g.loss += weight * softmax_cross_entropy(s, ex->label);
            softmax(s, p);
            EncoderDelta d{&ex->inputs[0], std::vector<double>(h, 0.0)};
            for (std::size_t k = 0; k < c; ++k) {
                const double gk = weight * (p[k] - (static_cast<int>(k) == ex->label ? 1.0 : 0.0));
                const double* row = m.cls_head.data() + k * h;
                double* grow = g.cls_head.data() + k * h;
                for (std::size_t j = 0; j < h; ++j) {
                    if (pre[0][j] > 0.0) {
                        grow[j] += gk * pre[0][j];
                        d.delta[j] += gk * row[j];
                    }
                }
            }
            g.encoder.push_back(std::move(d));
        }
    }
    return g;
}

std::vector<const EncodedExample*> pointers(std::span<const EncodedExample> batch) {
    std::vector<const EncodedExample*> out;
    out.reserve(batch.size());
    for (const auto& ex : batch) out.push_back(&ex);
    return out;
}

}  // namespace

std::vector<double> hidden(const Model& m, const SparseVector& x) {
    std::vector<double> pre;
    pre_activation(m, x, pre);
    for (auto& v : pre) v = std::max(0.0, v);
    return pre;
}

std::vector<double> scores(const Model& m, const EncodedExample& ex, TaskType task) {
    const std::size_t h = m.arch.hidden_dim;
    if (task == TaskType::multiple_choice) {
        require_head(m, task, 0);
        std::vector<double> s;
        s.reserve(ex.inputs.size());
        for (const auto& x : ex.inputs) s.push_back(dot(m.mc_head.data(), hidden(m, x)));
        return s;
    }
    if (!m.has_cls_head()) throw ArchitectureMismatch("model has no classification head");
    const auto hv = hidden(m, ex.inputs.at(0));
    std::vector<double> s(m.num_classes);
    for (std::size_t k = 0; k < m.num_classes; ++k) s[k] = dot(m.cls_head.data() + k * h, hv);
    return s;
}

std::vector<double> score_example(const Model& m, const McExample& ex, TaskType task) {
    require_head(m, task, task == TaskType::classification ? ex.options.size() : 0);
    return scores(m, encode_example(ex, task, m.arch.feature_dim), task);
}

std::size_t predict(std::span<const double> s) {
    if (s.empty()) throw std::invalid_argument("predict: no scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (s[i] > s[best]) best = i;
    }
    return best;
}

double softmax_cross_entropy(std::span<const double> s, int label) {
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    return mx + std::log(z) - s[static_cast<std::size_t>(label)];
}

void check_compatible(const Model& m, const McDataset& ds) { require_head(m, ds.task_type, ds.num_options); }

double batch_loss(const Model& m, std::span<const EncodedExample> batch, TaskType task) {
    double loss = 0.0;
    for (const auto& ex : batch) loss += softmax_cross_entropy(scores(m, ex, task), ex.label);
    return loss / static_cast<double>(batch.size());
}

double batch_loss_and_gradient(const Model& m, std::span<const EncodedExample> batch, TaskType task, Gradient& grad) {
    const auto ptrs = pointers(batch);
    BatchGrad g = backprop(m, ptrs, task);
    const std::size_t h = m.arch.hidden_dim;
    grad.encoder.assign(m.encoder.size(), 0.0);
    for (const auto& d : g.encoder) {
        for (std::size_t k = 0; k < d.input->nnz(); ++k) {
            double* row = grad.encoder.data() + static_cast<std::size_t>(d.input->index[k]) * h;
            for (std::size_t j = 0; j < h; ++j) row[j] += d.input->value[k] * d.delta[j];
        }
    }
    grad.mc_head = std::move(g.mc_head);
    grad.cls_head = std::move(g.cls_head);
    return g.loss;
}

double sgd_step(Model& m, std::span<const EncodedExample* const> batch, TaskType task, double lr) {
    require_head(m, task, task == TaskType::classification ? m.num_classes : 0);
    BatchGrad g = backprop(m, batch, task);
    const std::size_t h = m.arch.hidden_dim;
    for (const auto& d : g.encoder) {
        for (std::size_t k = 0; k < d.input->nnz(); ++k) {
            double* row = m.encoder.data() + static_cast<std::size_t>(d.input->index[k]) * h;
            const double scale = lr * d.input->value[k];
            for (std::size_t j = 0; j < h; ++j) row[j] -= scale * d.delta[j];
        }
    }
    for (std::size_t j = 0; j < g.mc_head.size(); ++j) m.mc_head[j] -= lr * g.mc_head[j];
    for (std::size_t j = 0; j < g.cls_head.size(); ++j) m.cls_head[j] -= lr * g.cls_head[j];
    return g.loss;
}

double scheduled_lr(double peak, std::size_t step, std::size_t total, double warmup_ratio) {
    if (total == 0) return 0.0;
    std::size_t warmup = 0;
    if (warmup_ratio > 0.0 && total > 1) {
        warmup = std::min<std::size_t>(total - 1,
                                       static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total))));
    }
    if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (total - 1 <= warmup) return peak;
    const std::size_t last = total - 1;
    if (step >= last) return 0.0;
    return peak * static_cast<double>(last - step) / static_cast<double>(last - warmup);
}

// ---------------------------------------------------------------------------
// Checkpoint format

namespace {

constexpr char kMagic[4] = {'S', 'T', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32s(std::string& out, const std::vector<double>& values) {
    for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
public:
    Reader(std::string_view data, const std::filesystem::path& path) : data_(data), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    void f32s(std::vector<double>& out, std::size_t n) {
        need(4 * n);
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(std::bit_cast<float>(u32()));
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw CheckpointError(path_.string() + ": truncated");
    }
    std::string_view data_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 0;
};

struct Header {
    Architecture arch;
    std::vector<HeadSpec> heads;
};

// Parses and verifies everything except the weight arrays.
Header read_header(Reader& r, std::string_view body, const std::filesystem::path& path) {
    if (body.size() < 4 + 4 * 4 + 32 || !std::equal(kMagic, kMagic + 4, body.begin())) {
        throw CheckpointError(path.string() + ": not a reference checkpoint");
    }
    r.u32();  // magic
    if (const auto version = r.u32(); version != kVersion) {
        throw CheckpointError(fmt::format("{}: unsupported version {}", path.string(), version));
    }
    Header h;
    h.arch.feature_dim = r.u32();
    h.arch.hidden_dim = r.u32();
    const std::uint32_t count = r.u32();
    if (count > 2) throw CheckpointError(path.string() + ": bad head inventory");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t kind = r.u32();
        const std::uint32_t rows = r.u32();
        if (kind > 1 || rows == 0) throw CheckpointError(path.string() + ": bad head inventory");
        h.heads.push_back({static_cast<HeadKind>(kind), rows});
    }
    return h;
}

}  // namespace

Checkpoint write_checkpoint(const Model& m, const std::filesystem::path& path) {
    std::string out;
    out.reserve(64 + 4 * (m.encoder.size() + m.mc_head.size() + m.cls_head.size()) + 32);
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, m.arch.feature_dim);
    put_u32(out, m.arch.hidden_dim);
    const auto heads = m.heads();
    put_u32(out, static_cast<std::uint32_t>(heads.size()));
    for (const auto& h : heads) {
        put_u32(out, static_cast<std::uint32_t>(h.kind));
        put_u32(out, h.rows);
    }
    put_f32s(out, m.encoder);
    put_f32s(out, m.mc_head);
    put_f32s(out, m.cls_head);
    const auto digest = sha256(out);
    out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
    io::write_file_atomic(path, out);
    return Checkpoint{path, "reference", m.arch, heads, to_hex(digest)};
}

Model load_model(const std::filesystem::path& path) {
    const std::string data = io::read_file(path);
    Reader r(data, path);
    const Header h = read_header(r, data, path);
    const std::string_view body(data.data(), data.size() - 32);
    const auto digest = sha256(body);
    if (!std::equal(digest.begin(), digest.end(), reinterpret_cast<const std::uint8_t*>(data.data() + body.size()))) {
        throw CheckpointError(path.string() + ": checksum mismatch");
    }
    Model m(h.arch);
    r.f32s(m.encoder, m.encoder.size());
    for (const auto& head : h.heads) {
        if (head.kind == HeadKind::multiple_choice) {
            r.f32s(m.mc_head, h.arch.hidden_dim);
        } else {
            m.num_classes = head.rows;
            r.f32s(m.cls_head, static_cast<std::size_t>(head.rows) * h.arch.hidden_dim);
        }
    }
    if (r.pos() != body.size()) throw CheckpointError(path.string() + ": trailing bytes");
    return m;
}

std::string path_digest(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (fs::is_regular_file(path)) return sha256_file_hex(path);
    if (!fs::is_directory(path)) return "";
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string manifest;
    for (const auto& f : files) {
        manifest += fs::relative(f, path).generic_string();
        manifest += '\0';
        manifest += sha256_file_hex(f);
        manifest += '\n';
    }
    return sha256_hex(manifest);
}

Checkpoint describe_checkpoint(const std::filesystem::path& path, std::string backend) {
    std::error_code ec;
    if (std::filesystem::is_regular_file(path, ec)) {
        const std::string data = io::read_file(path);
        if (data.size() >= 4 && std::equal(kMagic, kMagic + 4, data.begin())) {
            Reader r(data, path);
            const Header h = read_header(r, data, path);
            const auto* tail = reinterpret_cast<const std::uint8_t*>(data.data() + data.size() - 32);
            return Checkpoint{path, "reference", h.arch, h.heads, to_hex(std::span(tail, 32))};
        }
    }
    Checkpoint c;
    c.uri = path;
    c.backend = backend.empty() ? "worker" : std::move(backend);
    c.digest = path_digest(path);
    return c;
}

// ---------------------------------------------------------------------------
// Training

PreparedData prepare(McDataset ds, std::uint32_t feature_dim) {
    PreparedData p;
    p.encoded = encode_dataset(ds, feature_dim);
    p.dataset = std::move(ds);
    p.feature_dim = feature_dim;
    return p;
}

double evaluate(const Model& m, const PreparedData& data) {
    if (data.feature_dim != m.arch.feature_dim) {
        throw ArchitectureMismatch(fmt::format("features hashed into {} buckets, model expects {}", data.feature_dim,
                                               m.arch.feature_dim));
    }
    check_compatible(m, data.dataset);
    std::vector<int> predictions, golds;
    predictions.reserve(data.encoded.size());
    golds.reserve(data.encoded.size());
    for (const auto& ex : data.encoded) {
        predictions.push_back(static_cast<int>(predict(scores(m, ex, data.dataset.task_type))));
        golds.push_back(ex.label);
    }
    return data.dataset.metric_name == MetricName::mcc ? mcc(predictions, golds) : accuracy(predictions, golds);
}

double evaluate(const Checkpoint& checkpoint, const McDataset& ds) {
    if (checkpoint.backend != "reference") {
        throw ArchitectureMismatch("checkpoint from backend '" + checkpoint.backend + "' cannot be evaluated natively");
    }
    const Model m = load_model(checkpoint.uri);
    check_compatible(m, ds);
    return evaluate(m, prepare(ds, m.arch.feature_dim));
}

TrainResult train_reference(const PreparedData& train, const PreparedData& dev, const ReferenceRun& run) {
    validate(run.hyperparams);
    const McDataset& tds = train.dataset;
    const TaskType task = tds.task_type;
    const Architecture arch = run.options.architecture;
    if (dev.dataset.task_type != task) throw WrongTaskType("train and dev datasets have different task types");
    if (task == TaskType::classification && dev.dataset.num_options != tds.num_options) {
        throw InvariantViolation(0, "train and dev datasets have different class counts");
    }
    if (train.feature_dim != arch.feature_dim || dev.feature_dim != arch.feature_dim) {
        throw ArchitectureMismatch("prepared features do not match the configured feature dimension");
    }
    if (run.max_epochs > 0 && tds.examples.empty()) throw EmptyInput("training set is empty");

    const std::int64_t seed = run.hyperparams.seed;
    const auto classes = static_cast<std::uint32_t>(tds.num_options);
    Model model(arch);
    if (run.base_checkpoint) {
        if (run.base_checkpoint->backend != "reference") {
            throw ArchitectureMismatch("base checkpoint backend '" + run.base_checkpoint->backend + "' != reference");
        }
        model = load_model(run.base_checkpoint->uri);
        if (model.arch != arch) {
            throw ArchitectureMismatch(fmt::format("base checkpoint is D={} H={}, job expects D={} H={}",
                                                   model.arch.feature_dim, model.arch.hidden_dim, arch.feature_dim,
                                                   arch.hidden_dim));
        }
        // Only the head matching this task (and its shape) survives a phase.
        if (task == TaskType::multiple_choice) {
            model.cls_head.clear();
            model.num_classes = 0;
            if (!model.has_mc_head()) init_mc_head(model, seed);
        } else {
            model.mc_head.clear();
            if (!(model.has_cls_head() && model.num_classes == classes)) init_cls_head(model, classes, seed);
        }
    } else {
        init_encoder(model, seed);
        if (task == TaskType::multiple_choice) init_mc_head(model, seed);
        else init_cls_head(model, classes, seed);
    }
    quantize_to_f32(model);

    TrainResult result;
    result.metric_name = tds.metric_name;
    result.dev_curve.push_back(evaluate(model, dev));
    double best_metric = result.dev_curve.front();
    std::size_t best_epoch = 0;
    Model best = model;

    const std::size_t n = tds.examples.size();
    const std::size_t batch = run.hyperparams.effective_batch;
    const std::size_t steps_per_epoch = (n + batch - 1) / batch;
    const std::size_t total_steps = steps_per_epoch * run.max_epochs;
    const double peak_lr = run.hyperparams.learning_rate * run.options.lr_scale;

    std::size_t step = 0;
    std::vector<std::size_t> order(n);
    std::vector<const EncodedExample*> batch_ptrs;
    for (std::size_t epoch = 1; epoch <= run.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(static_cast<std::uint64_t>(seed), "epoch-order", epoch));
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += batch) {
            batch_ptrs.clear();
            for (std::size_t i = start; i < std::min(n, start + batch); ++i) batch_ptrs.push_back(&train.encoded[order[i]]);
            const double lr = scheduled_lr(peak_lr, step, total_steps, run.hyperparams.warmup_ratio);
            const double loss = sgd_step(model, batch_ptrs, task, lr);
            if (!std::isfinite(loss)) {
                result.status = RunStatus::failed;
                result.error = fmt::format("non-finite loss at step {}", step);
                result.dev_metric = 0.0;
                log::warn("train: {}", result.error);
                return result;
            }
            result.loss_curve.emplace_back(step, loss);
            ++step;
        }
        quantize_to_f32(model);
        const double metric = evaluate(model, dev);
        result.dev_curve.push_back(metric);
        if (epoch == 1 || metric > best_metric) {
            best_metric = metric;
            best_epoch = epoch;
            best = model;
        }
    }

    result.dev_metric = best_metric;
    result.best_epoch = best_epoch;
    if (run.options.write_checkpoint) {
        result.checkpoint = write_checkpoint(best, run.output_dir / "model.stlt");
    } else {
        result.checkpoint = Checkpoint{{}, "reference", best.arch, best.heads(), {}};
    }
    return result;
}

TrainResult train(const TrainJob& job) {
    if (job.backend != "reference") {
        throw std::invalid_argument("train() runs the reference backend; use run_worker_job for '" + job.backend + "'");
    }
    McDataset train_ds = read_jsonl(job.train_path);
    McDataset dev_ds = read_jsonl(job.dev_path);
    ReferenceRun run;
    run.phase = job.phase;
    run.hyperparams = job.hyperparams;
    run.base_checkpoint = job.base_checkpoint;
    run.max_epochs = job.max_epochs.value_or(default_max_epochs(job.phase, train_ds.examples.size()));
    run.options = job.reference;
    run.output_dir = job.output_dir;
    if (job.base_checkpoint && job.base_checkpoint->architecture) run.options.architecture = *job.base_checkpoint->architecture;
    const std::uint32_t dim = run.options.architecture.feature_dim;
    return train_reference(prepare(std::move(train_ds), dim), prepare(std::move(dev_ds), dim), run);
}

}  // namespace stilt
