#pragma once

#include "stilt/datasets.hpp"
#include "stilt/rng.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stilt {

// ---------------------------------------------------------------------------
// Corpus segmentation and splitting

struct SourceSentence {
    std::string text;  // whitespace-normalized, no newlines
    std::string doc_id;
    std::size_t sent_index = 0;

    bool operator==(const SourceSentence&) const = default;
};

struct Document {
    std::string id;
    std::string text;
};

enum class CorpusLayout { document_per_file, document_per_line };

/// Loads documents from UTF-8 files. With document_per_line every non-blank
/// line is a document with id "<stem>:<line>"; otherwise the file stem is the id.
std::vector<Document> load_documents(std::span<const std::filesystem::path> files, CorpusLayout layout);

/// Sentence boundaries are '.', '!' or '?' followed by whitespace and an
/// uppercase ASCII letter; end of input also terminates a sentence. Sentences
/// with fewer than min_tokens whitespace tokens are dropped. sent_index is
/// the position among all sentences of the document, dropped ones included.
std::vector<SourceSentence> segment_corpus(std::string_view raw_text, std::size_t min_tokens = 8,
                                           std::string_view doc_id = "doc");

std::vector<SourceSentence> segment_documents(std::span<const Document> docs, std::size_t min_tokens = 8);

struct SplitPair {
    std::string premise;
    std::string gold;

    bool operator==(const SplitPair&) const = default;
};

inline constexpr std::size_t kMinHalfTokens = 4;

/// Splits after token floor(w/2); nullopt when either half would hold fewer
/// than four tokens.
std::optional<SplitPair> split_sentence(const SourceSentence& sentence);

// ---------------------------------------------------------------------------
// Nucleus sampling

using TokenId = std::uint32_t;

struct TokenProb {
    TokenId token;
    double prob;

    bool operator==(const TokenProb&) const = default;
};

/// Orders by descending probability, ties by ascending token id.
bool nucleus_order(const TokenProb& a, const TokenProb& b);

/// The minimal prefix (in nucleus order) whose cumulative probability
/// reaches top_p. Throws InvalidDistribution for negative entries or a total
/// that is not 1 within 1e-9, and std::invalid_argument for top_p outside (0, 1].
std::vector<TokenProb> nucleus_set(std::span<const TokenProb> dist, double top_p);

/// Renormalizes over the given candidates and draws one.
TokenId sample_from(std::span<const TokenProb> candidates, Rng& rng);

TokenId nucleus_sample(std::span<const TokenProb> dist, double top_p, Rng& rng);

// ---------------------------------------------------------------------------
// Continuation generators

struct GenRequest {
    std::string prefix;
    std::size_t num_samples = 3;
    std::size_t max_new_tokens = 32;
    double top_p = 0.9;
    std::uint64_t seed = 0;
};

/// Anything that answers a GenRequest with exactly num_samples continuations.
/// Implementations are immutable and shareable across threads.
class ContinuationGenerator {
public:
    virtual ~ContinuationGenerator() = default;
    virtual std::vector<std::string> generate(const GenRequest& request) const = 0;
    /// Short label recorded in dataset provenance.
    virtual std::string describe() const = 0;
};

/// Word-level n-gram model with stupid backoff.
class NGramModel {
public:
    static constexpr std::string_view kBegin = "<s>";
    static constexpr std::string_view kEnd = "</s>";

    struct Successor {
        TokenId token;
        std::uint32_t count;
    };

    struct ContextStats {
        std::uint64_t total = 0;
        std::vector<Successor> by_rank;  // count desc, token asc
        std::vector<Successor> by_id;    // token asc
        std::uint32_t count_of(TokenId t) const;
    };

    NGramModel(std::span<const SourceSentence> sentences, std::size_t order = 3, double backoff_factor = 0.4);

    std::size_t order() const { return order_; }
    double backoff_factor() const { return backoff_factor_; }
    std::size_t vocab_size() const { return vocab_.size(); }
    const std::string& token(TokenId id) const { return vocab_[id]; }
    std::optional<TokenId> find(std::string_view token) const;
    TokenId begin_id() const { return 0; }
    TokenId end_id() const { return 1; }

    /// count(context, next); context may hold up to order-1 tokens.
    std::uint64_t count(std::span<const TokenId> context, TokenId next) const;
    std::uint64_t context_total(std::span<const TokenId> context) const;

    /// Stupid-backoff score S(t | context), not normalized.
    double score(std::span<const TokenId> context, TokenId next) const;

    /// Full next-token distribution over the vocabulary (begin sentinel
    /// excluded), normalized to sum to 1.
    std::vector<TokenProb> distribution(std::span<const TokenId> context) const;

    /// Same result as nucleus_set(distribution(context), top_p) but walks the
    /// pre-ranked successor lists lazily instead of sorting the vocabulary.
    std::vector<TokenProb> nucleus(std::span<const TokenId> context, double top_p) const;

    /// Maps whitespace tokens to ids; unknown tokens map to nullopt.
    std::vector<std::optional<TokenId>> encode(std::string_view text) const;

private:
    const ContextStats* stats(std::span<const TokenId> context) const;
    static std::string key(std::span<const TokenId> context);
    TokenId intern(const std::string& tok);

    std::size_t order_;
    double backoff_factor_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, TokenId> ids_;
    // Contexts of length 0..order-1, keyed by the raw id bytes.
    std::unordered_map<std::string, ContextStats> contexts_;
    std::vector<double> unigram_;          // probability per token id
    std::vector<TokenId> unigram_rank_;    // nucleus order over the unigram
};

NGramModel train_ngram(std::span<const SourceSentence> sentences, std::size_t order = 3,
                       double backoff_factor = 0.4);

class NGramGenerator final : public ContinuationGenerator {
public:
    explicit NGramGenerator(std::shared_ptr<const NGramModel> model) : model_(std::move(model)) {}
    std::vector<std::string> generate(const GenRequest& request) const override;
    std::string describe() const override;
    const NGramModel& model() const { return *model_; }

private:
    std::shared_ptr<const NGramModel> model_;
};

/// Client for the HTTP continuation service (POST <endpoint>/v1/generate).
class RemoteGenerator final : public ContinuationGenerator {
public:
    struct Options {
        int max_retries = 3;
        std::chrono::milliseconds initial_backoff{500};
        std::chrono::seconds timeout{60};
    };

    explicit RemoteGenerator(std::string endpoint);
    RemoteGenerator(std::string endpoint, Options options);
    std::vector<std::string> generate(const GenRequest& request) const override;
    std::string describe() const override { return "remote(" + endpoint_ + ")"; }

private:
    std::string endpoint_;
    Options options_;
};

/// POSTs one request; throws GeneratorUnavailable on transport failure
/// (after retries with exponential backoff) or a malformed response.
std::vector<std::string> remote_generate(const std::string& endpoint, const GenRequest& request,
                                         const RemoteGenerator::Options& options = {});

// ---------------------------------------------------------------------------
// Dataset synthesis

inline constexpr int kMaxGenerationRounds = 10;

/// min(32, ceil(1.5 * gold tokens)).
std::size_t default_max_new_tokens(std::string_view gold);

/// k continuations distinct from gold and each other after normalization.
/// Each round asks the generator for the number still missing.
std::vector<std::string> generate_negatives(std::string_view premise, std::string_view gold, std::size_t k,
                                            const ContinuationGenerator& generator, Rng& rng,
                                            double top_p = 0.9);

struct SynthesisOptions {
    std::size_t size = 0;
    std::uint64_t seed = 0;
    std::size_t negatives = 3;
    double top_p = 0.9;
    std::string name = "synthesis";
};

/// Builds a real-fake continuation dataset from the first `size` sentences
/// that split and yield enough negatives. Deterministic for fixed inputs.
McDataset synthesize_dataset(std::span<const SourceSentence> corpus, const ContinuationGenerator& generator,
                             const SynthesisOptions& options);

}  // namespace stilt
