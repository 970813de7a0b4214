#include "fixtures.hpp"

#include "stilt/corpus_gen.hpp"
#include "stilt/corpus_synth.hpp"
#include "stilt/rng.hpp"

#include <fmt/core.h>

#include <atomic>
#include <cmath>
#include <unistd.h>

namespace stilt::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() / fmt::format("{}-{}-{}", tag, ::getpid(), counter++);
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path corpus_path(const fs::path& dir) {
    const fs::path p = dir / "topic_corpus.txt";
    TopicCorpusOptions o;
    o.documents = kCorpusDocuments;
    ensure_topic_corpus(p, o);
    return p;
}

DeskData desk_data(const fs::path& dir, int macro_seed) {
    const fs::path root = dir / fmt::format("macro{}", macro_seed);
    DeskData d{root / "synthesis.jsonl", root / "heldout_train.jsonl", root / "heldout_dev.jsonl"};
    if (fs::exists(d.intermediate) && fs::exists(d.target_train) && fs::exists(d.target_dev)) return d;
    fs::create_directories(root);

    const fs::path corpus = corpus_path(dir);
    const auto docs = load_documents(std::span(&corpus, 1), CorpusLayout::document_per_line);
    const std::vector<Document> inter_docs(docs.begin(), docs.begin() + kIntermediateDocs);
    const std::vector<Document> target_docs(docs.begin() + kIntermediateDocs, docs.end());
    const auto inter_sentences = segment_documents(inter_docs);
    const NGramGenerator generator(std::make_shared<const NGramModel>(train_ngram(inter_sentences)));

    const auto seed = static_cast<std::uint64_t>(macro_seed);
    SynthesisOptions so;
    so.size = 5000;
    so.seed = 100 + seed;
    so.name = "synthesis";
    const McDataset inter = synthesize_dataset(inter_sentences, generator, so);

    so.size = 700;
    so.seed = 200 + seed;
    so.name = "heldout";
    const McDataset target = synthesize_dataset(segment_documents(target_docs), generator, so);
    auto [train_all, dev] = split_train_dev(target, 0.7, seed);
    McDataset train = subsample(train_all, 160, seed);
    train.name = "heldout_train";

    write_jsonl(inter, d.intermediate);
    write_jsonl(dev, d.target_dev);
    write_jsonl(train, d.target_train);
    return d;
}

SweepSpec desk_spec(const DeskData& data, const fs::path& ledger, bool with_intermediate) {
    SweepSpec s;
    if (with_intermediate) {
        IntermediateSpec in;
        in.dataset = data.intermediate;
        in.dataset_dev = data.target_dev;
        in.max_epochs = kDeskIntermediateEpochs;
        s.intermediate = in;
    }
    s.target_train = data.target_train;
    s.target_dev = data.target_dev;
    s.ledger = ledger;
    s.reference.architecture.feature_dim = kDeskFeatureDim;
    s.keep_checkpoints = false;
    s.work_dir = ledger.parent_path() / (ledger.stem().string() + ".runs");
    s.cache_dir = ledger.parent_path() / ".stilt-cache";
    return s;
}

namespace {

std::string random_text(Rng& rng, std::size_t max_tokens, bool allow_empty) {
    static const char* const kPieces[] = {"a",  "b",   "cat", "Dog", "é",  "ü",  "ß",   "日本", "語",
                                          "ok", "🙂", "x.y", "z!",  "naïve", "Ωmega", "q", "\"q\"", "t\\n"};
    const std::size_t n = (allow_empty ? 0 : 1) + rng.below(max_tokens);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        const std::size_t parts = 1 + rng.below(2);
        for (std::size_t p = 0; p < parts; ++p) out += kPieces[rng.below(std::size(kPieces))];
    }
    return out;
}

}  // namespace

McDataset random_dataset(std::uint64_t seed, std::size_t examples, std::size_t options) {
    Rng rng(seed);
    McDataset ds;
    ds.name = fmt::format("random{}", seed);
    ds.num_options = options;
    ds.provenance.push_back({"random", {{"seed", std::to_string(seed)}}});
    for (std::size_t i = 0; i < examples; ++i) {
        McExample ex;
        ex.id = fmt::format("r{}-{}", seed, i);
        ex.premise = random_text(rng, 8, true);
        for (std::size_t o = 0; o < options; ++o) ex.options.push_back(random_text(rng, 6, false));
        ex.label = static_cast<int>(rng.below(options));
        if (rng.below(2)) ex.meta["note"] = random_text(rng, 3, true);
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

GradientCheck gradient_check(std::uint32_t feature_dim, std::uint32_t hidden_dim, std::size_t examples,
                             std::uint64_t seed, double h) {
    Rng rng(seed);
    Model m = Model::zeros({feature_dim, hidden_dim}, true);
    for (auto& w : m.encoder) w = 0.5 * rng.normal();
    for (auto& w : m.mc_head) w = 0.5 * rng.normal();
    const McDataset ds = random_dataset(seed, examples);
    const auto batch = encode_dataset(ds, feature_dim);

    Gradient g;
    batch_loss_and_gradient(m, batch, TaskType::multiple_choice, g);

    GradientCheck out;
    auto check = [&](std::vector<double>& weights, const std::vector<double>& analytic) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            const double saved = weights[i];
            weights[i] = saved + h;
            const double up = batch_loss(m, batch, TaskType::multiple_choice);
            weights[i] = saved - h;
            const double down = batch_loss(m, batch, TaskType::multiple_choice);
            weights[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
            out.max_relative_error = std::max(out.max_relative_error, std::abs(numeric - analytic[i]) / scale);
            ++out.checked;
        }
    };
    check(m.encoder, g.encoder);
    check(m.mc_head, g.mc_head);
    return out;
}

}  // namespace stilt::testing
