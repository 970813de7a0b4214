#include "stilt/corpus_synth.hpp"

#include "stilt/error.hpp"
#include "stilt/io.hpp"
#include "stilt/log.hpp"
#include "stilt/text.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

namespace stilt {

// ---------------------------------------------------------------------------
// Segmentation

std::vector<Document> load_documents(std::span<const std::filesystem::path> files, CorpusLayout layout) {
    std::vector<Document> docs;
    for (const auto& path : files) {
        std::string body = io::read_file(path);
        if (!text::is_valid_utf8(body)) throw IoError(path.string() + " is not valid UTF-8");
        const std::string stem = path.stem().string();
        if (layout == CorpusLayout::document_per_file) {
            docs.push_back({stem, std::move(body)});
            continue;
        }
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos <= body.size()) {
            std::size_t end = body.find('\n', pos);
            if (end == std::string::npos) end = body.size();
            ++line_no;
            std::string_view line(body.data() + pos, end - pos);
            if (text::count_tokens(line) > 0) docs.push_back({fmt::format("{}:{}", stem, line_no), std::string(line)});
            pos = end + 1;
        }
    }
    return docs;
}

std::vector<SourceSentence> segment_corpus(std::string_view raw, std::size_t min_tokens, std::string_view doc_id) {
    if (min_tokens < 1) throw std::invalid_argument("min_tokens must be at least 1");
    std::vector<SourceSentence> out;
    std::size_t index = 0;
    auto emit = [&](std::string_view piece) {
        std::string normalized = text::normalize_whitespace(piece);
        if (normalized.empty()) return;
        if (text::count_tokens(normalized) >= min_tokens) {
            out.push_back({std::move(normalized), std::string(doc_id), index});
        }
        ++index;
    };

    std::size_t start = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char c = raw[i];
        if (c != '.' && c != '!' && c != '?') continue;
        std::size_t j = i + 1;
        if (j >= raw.size() || !text::is_space(raw[j])) continue;
        while (j < raw.size() && text::is_space(raw[j])) ++j;
        if (j < raw.size() && raw[j] >= 'A' && raw[j] <= 'Z') {
            emit(raw.substr(start, i + 1 - start));
            start = j;
            i = j - 1;
        }
    }
    if (start < raw.size()) emit(raw.substr(start));
    return out;
}

std::vector<SourceSentence> segment_documents(std::span<const Document> docs, std::size_t min_tokens) {
    std::vector<SourceSentence> out;
    for (const auto& d : docs) {
        auto part = segment_corpus(d.text, min_tokens, d.id);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

std::optional<SplitPair> split_sentence(const SourceSentence& sentence) {
    const auto toks = text::tokens(sentence.text);
    const std::size_t w = toks.size();
    const std::size_t cut = w / 2;
    if (cut < kMinHalfTokens || w - cut < kMinHalfTokens) return std::nullopt;
    SplitPair pair;
    pair.premise = text::join({toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(cut)}, " ");
    pair.gold = text::join({toks.begin() + static_cast<std::ptrdiff_t>(cut), toks.end()}, " ");
    return pair;
}

// ---------------------------------------------------------------------------
// Nucleus sampling

bool nucleus_order(const TokenProb& a, const TokenProb& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.token < b.token;
}

namespace {

void check_top_p(double top_p) {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument(fmt::format("top_p {} outside (0, 1]", top_p));
}

}  // namespace

std::vector<TokenProb> nucleus_set(std::span<const TokenProb> dist, double top_p) {
    check_top_p(top_p);
    double total = 0.0;
    for (const auto& tp : dist) {
        if (!(tp.prob >= 0.0) || !std::isfinite(tp.prob)) {
            throw InvalidDistribution(fmt::format("token {} has probability {}", tp.token, tp.prob));
        }
        total += tp.prob;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidDistribution(fmt::format("probabilities sum to {:.12f}", total));

    std::vector<TokenProb> sorted(dist.begin(), dist.end());
    std::sort(sorted.begin(), sorted.end(), nucleus_order);
    double cumulative = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        cumulative += sorted[i].prob;
        if (cumulative >= top_p) {
            sorted.resize(i + 1);
            break;
        }
    }
    return sorted;
}

TokenId sample_from(std::span<const TokenProb> candidates, Rng& rng) {
    if (candidates.empty()) throw InvalidDistribution("no candidates to sample from");
    double total = 0.0;
    for (const auto& c : candidates) total += c.prob;
    if (!(total > 0.0)) throw InvalidDistribution("candidate mass is zero");
    const double u = rng.uniform() * total;
    double cumulative = 0.0;
    for (const auto& c : candidates) {
        cumulative += c.prob;
        if (u < cumulative) return c.token;
    }
    // Rounding left u at the very top; return the last candidate with mass.
    for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
        if (it->prob > 0.0) return it->token;
    }
    return candidates.back().token;
}

TokenId nucleus_sample(std::span<const TokenProb> dist, double top_p, Rng& rng) {
    const auto prefix = nucleus_set(dist, top_p);
    return sample_from(prefix, rng);
}

// ---------------------------------------------------------------------------
// N-gram model

std::uint32_t NGramModel::ContextStats::count_of(TokenId t) const {
    auto it = std::lower_bound(by_id.begin(), by_id.end(), t,
                               [](const Successor& s, TokenId id) { return s.token < id; });
    return it != by_id.end() && it->token == t ? it->count : 0;
}

std::string NGramModel::key(std::span<const TokenId> context) {
    std::string k(context.size() * sizeof(TokenId), '\0');
    if (!context.empty()) std::memcpy(k.data(), context.data(), k.size());
    return k;
}

TokenId NGramModel::intern(const std::string& tok) {
    auto [it, inserted] = ids_.try_emplace(tok, static_cast<TokenId>(vocab_.size()));
    if (inserted) vocab_.push_back(tok);
    return it->second;
}

NGramModel::NGramModel(std::span<const SourceSentence> sentences, std::size_t order, double backoff_factor)
    : order_(order), backoff_factor_(backoff_factor) {
    if (order < 2) throw std::invalid_argument("n-gram order must be at least 2");
    if (!(backoff_factor > 0.0 && backoff_factor < 1.0)) throw std::invalid_argument("backoff_factor must lie in (0, 1)");
    if (sentences.empty()) throw EmptyCorpus("cannot train an n-gram model on zero sentences");

    intern(std::string(kBegin));
    intern(std::string(kEnd));

    std::unordered_map<std::string, std::unordered_map<TokenId, std::uint32_t>> raw;
    std::vector<TokenId> seq;
    for (const auto& s : sentences) {
        seq.assign(order_ - 1, begin_id());
        for (const auto& tok : text::tokens(s.text)) seq.push_back(intern(tok));
        seq.push_back(end_id());
        for (std::size_t j = order_ - 1; j < seq.size(); ++j) {
            for (std::size_t len = 0; len < order_; ++len) {
                std::span<const TokenId> ctx(seq.data() + j - len, len);
                ++raw[key(ctx)][seq[j]];
            }
        }
    }

    for (auto& [k, successors] : raw) {
        ContextStats st;
        st.by_id.reserve(successors.size());
        for (const auto& [tok, c] : successors) {
            st.by_id.push_back({tok, c});
            st.total += c;
        }
        std::sort(st.by_id.begin(), st.by_id.end(), [](const Successor& a, const Successor& b) { return a.token < b.token; });
        st.by_rank = st.by_id;
        std::stable_sort(st.by_rank.begin(), st.by_rank.end(),
                         [](const Successor& a, const Successor& b) { return a.count > b.count; });
        contexts_.emplace(k, std::move(st));
    }

    const ContextStats& uni = contexts_.at(key({}));
    unigram_.assign(vocab_.size(), 0.0);
    for (const auto& s : uni.by_id) unigram_[s.token] = static_cast<double>(s.count) / static_cast<double>(uni.total);
    for (const auto& s : uni.by_rank) unigram_rank_.push_back(s.token);
}

const NGramModel::ContextStats* NGramModel::stats(std::span<const TokenId> context) const {
    auto it = contexts_.find(key(context));
    return it == contexts_.end() ? nullptr : &it->second;
}

std::optional<TokenId> NGramModel::find(std::string_view tok) const {
    auto it = ids_.find(std::string(tok));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

std::uint64_t NGramModel::count(std::span<const TokenId> context, TokenId next) const {
    if (context.size() >= order_) context = context.last(order_ - 1);
    const auto* st = stats(context);
    return st ? st->count_of(next) : 0;
}

std::uint64_t NGramModel::context_total(std::span<const TokenId> context) const {
    if (context.size() >= order_) context = context.last(order_ - 1);
    const auto* st = stats(context);
    return st ? st->total : 0;
}

double NGramModel::score(std::span<const TokenId> context, TokenId next) const {
    if (context.size() >= order_) context = context.last(order_ - 1);
    double multiplier = 1.0;
    for (std::size_t len = context.size(); len >= 1; --len) {
        if (const auto* st = stats(context.last(len))) {
            if (auto c = st->count_of(next); c > 0) {
                return multiplier * static_cast<double>(c) / static_cast<double>(st->total);
            }
        }
        multiplier *= backoff_factor_;
    }
    return next < unigram_.size() ? multiplier * unigram_[next] : 0.0;
}

std::vector<TokenProb> NGramModel::distribution(std::span<const TokenId> context) const {
    std::vector<TokenProb> dist;
    dist.reserve(vocab_.size());
    double total = 0.0;
    for (TokenId t = 0; t < vocab_.size(); ++t) {
        if (t == begin_id()) continue;
        const double s = score(context, t);
        dist.push_back({t, s});
        total += s;
    }
    for (auto& tp : dist) tp.prob /= total;
    return dist;
}

std::vector<TokenProb> NGramModel::nucleus(std::span<const TokenId> context, double top_p) const {
    check_top_p(top_p);
    if (context.size() >= order_) context = context.last(order_ - 1);
    const std::size_t top = context.size();

    // levels[L] for L = 1..top: stats of the length-L suffix (null if unseen).
    std::vector<const ContextStats*> levels(top + 1, nullptr);
    std::vector<double> multiplier(top + 1, 1.0);
    for (std::size_t len = top; len >= 1; --len) levels[len] = stats(context.last(len));
    for (std::size_t len = top; len-- > 0;) multiplier[len] = multiplier[len + 1] * backoff_factor_;

    auto seen_above = [&](std::size_t len, TokenId t) {
        return len + 1 <= top && levels[len + 1] != nullptr && levels[len + 1]->count_of(t) > 0;
    };

    // Unnormalized mass of the tokens whose score comes from each level.
    // Successor sets nest (seen at L+1 implies seen at L), so each level's
    // share is 1 minus what the level above already claimed.
    double z = 0.0;
    for (std::size_t len = 1; len <= top; ++len) {
        const ContextStats* st = levels[len];
        if (!st) continue;
        double claimed = 0.0;
        if (len + 1 <= top && levels[len + 1]) {
            for (const auto& s : levels[len + 1]->by_id) claimed += st->count_of(s.token);
        }
        z += multiplier[len] * (static_cast<double>(st->total) - claimed) / static_cast<double>(st->total);
    }
    {
        double claimed = 0.0;
        if (top >= 1 && levels[1]) {
            for (const auto& s : levels[1]->by_id) claimed += unigram_[s.token];
        }
        z += multiplier[0] * (1.0 - claimed);
    }

    struct Stream {
        std::size_t level;
        std::size_t pos = 0;
    };
    std::vector<Stream> streams;
    for (std::size_t len = top; len >= 1; --len) {
        if (levels[len]) streams.push_back({len});
    }
    streams.push_back({0});

    auto head = [&](Stream& s) -> std::optional<TokenProb> {
        if (s.level == 0) {
            while (s.pos < unigram_rank_.size()) {
                const TokenId t = unigram_rank_[s.pos];
                if (t != begin_id() && !seen_above(0, t)) return TokenProb{t, multiplier[0] * unigram_[t] / z};
                ++s.pos;
            }
            return std::nullopt;
        }
        const ContextStats* st = levels[s.level];
        while (s.pos < st->by_rank.size()) {
            const auto& succ = st->by_rank[s.pos];
            if (!seen_above(s.level, succ.token)) {
                return TokenProb{succ.token, multiplier[s.level] * static_cast<double>(succ.count) /
                                                 static_cast<double>(st->total) / z};
            }
            ++s.pos;
        }
        return std::nullopt;
    };

    std::vector<TokenProb> out;
    double cumulative = 0.0;
    while (true) {
        std::optional<TokenProb> best;
        Stream* best_stream = nullptr;
        for (auto& s : streams) {
            auto h = head(s);
            if (h && (!best || nucleus_order(*h, *best))) {
                best = h;
                best_stream = &s;
            }
        }
        if (!best) break;
        ++best_stream->pos;
        out.push_back(*best);
        cumulative += best->prob;
        if (cumulative >= top_p) break;
    }
    return out;
}

std::vector<std::optional<TokenId>> NGramModel::encode(std::string_view s) const {
    std::vector<std::optional<TokenId>> out;
    for (const auto& tok : text::tokens(s)) out.push_back(find(tok));
    return out;
}

NGramModel train_ngram(std::span<const SourceSentence> sentences, std::size_t order, double backoff_factor) {
    return NGramModel(sentences, order, backoff_factor);
}

std::vector<std::string> NGramGenerator::generate(const GenRequest& request) const {
    const NGramModel& m = *model_;
    const std::size_t width = m.order() - 1;

    // Context = last order-1 prefix tokens, cut back past any unknown token.
    std::vector<TokenId> base(width, m.begin_id());
    for (const auto& id : m.encode(request.prefix)) {
        if (id) {
            base.push_back(*id);
        } else {
            base.clear();
        }
    }
    if (base.size() > width) base.erase(base.begin(), base.end() - static_cast<std::ptrdiff_t>(width));

    std::vector<std::string> out;
    out.reserve(request.num_samples);
    for (std::size_t i = 0; i < request.num_samples; ++i) {
        Rng rng(derive_seed(request.seed, "ngram-sample", i));
        std::vector<TokenId> ctx = base;
        std::vector<std::string> words;
        for (std::size_t step = 0; step < request.max_new_tokens; ++step) {
            const auto candidates = m.nucleus(ctx, request.top_p);
            const TokenId t = sample_from(candidates, rng);
            if (t == m.end_id()) break;
            words.push_back(m.token(t));
            ctx.push_back(t);
            if (ctx.size() > width) ctx.erase(ctx.begin());
        }
        out.push_back(text::join(words, " "));
    }
    return out;
}

std::string NGramGenerator::describe() const {
    return fmt::format("ngram(order={},backoff={})", model_->order(), model_->backoff_factor());
}

// ---------------------------------------------------------------------------
// Synthesis

std::size_t default_max_new_tokens(std::string_view gold) {
    const std::size_t w = text::count_tokens(gold);
    return std::clamp<std::size_t>((3 * w + 1) / 2, 1, 32);
}

std::vector<std::string> generate_negatives(std::string_view premise, std::string_view gold, std::size_t k,
                                            const ContinuationGenerator& generator, Rng& rng, double top_p) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    std::set<std::string> seen{text::normalize_option(gold)};
    std::vector<std::string> kept;
    for (int round = 0; round < kMaxGenerationRounds && kept.size() < k; ++round) {
        GenRequest req;
        req.prefix = std::string(premise);
        req.num_samples = k - kept.size();
        req.max_new_tokens = default_max_new_tokens(gold);
        req.top_p = top_p;
        req.seed = rng.next_u64();
        for (const auto& candidate : generator.generate(req)) {
            if (kept.size() == k) break;
            std::string key = text::normalize_option(candidate);
            if (key.empty() || !seen.insert(key).second) continue;
            kept.push_back(text::normalize_whitespace(candidate));
        }
    }
    if (kept.size() < k) {
        throw GenerationExhausted(fmt::format("only {} of {} valid negatives after {} rounds", kept.size(), k,
                                              kMaxGenerationRounds));
    }
    return kept;
}

McDataset synthesize_dataset(std::span<const SourceSentence> corpus, const ContinuationGenerator& generator,
                             const SynthesisOptions& options) {
    McDataset ds;
    ds.name = options.name;
    ds.task_type = TaskType::multiple_choice;
    ds.metric_name = MetricName::accuracy;
    ds.num_options = options.negatives + 1;
    ds.provenance.push_back({"synthesize",
                             {{"size", std::to_string(options.size)},
                              {"seed", std::to_string(options.seed)},
                              {"negatives", std::to_string(options.negatives)},
                              {"top_p", fmt::format("{}", options.top_p)},
                              {"generator", generator.describe()}}});
    if (options.size == 0) return ds;

    std::size_t exhausted = 0;
    for (const auto& sentence : corpus) {
        if (ds.examples.size() == options.size) break;
        auto pair = split_sentence(sentence);
        if (!pair) continue;
        Rng rng(derive_seed(options.seed, sentence.doc_id, sentence.sent_index));
        std::vector<std::string> negatives;
        try {
            negatives = generate_negatives(pair->premise, pair->gold, options.negatives, generator, rng, options.top_p);
        } catch (const GenerationExhausted&) {
            ++exhausted;
            continue;
        }
        const auto gold_pos = static_cast<std::size_t>(rng.below(options.negatives + 1));
        McExample ex;
        ex.id = fmt::format("{}-{}", sentence.doc_id, sentence.sent_index);
        ex.premise = std::move(pair->premise);
        ex.label = static_cast<int>(gold_pos);
        ex.options = std::move(negatives);
        ex.options.insert(ex.options.begin() + static_cast<std::ptrdiff_t>(gold_pos), std::move(pair->gold));
        ex.meta = {{"doc_id", sentence.doc_id}, {"sent_index", std::to_string(sentence.sent_index)}};
        ds.examples.push_back(std::move(ex));
    }
    if (exhausted > 0) log::info("synthesize: skipped {} sentences whose negatives ran out", exhausted);
    if (ds.examples.size() < options.size) {
        throw InsufficientCorpus(fmt::format("needed {} usable sentences, corpus supplied {}", options.size,
                                             ds.examples.size()));
    }
    return ds;
}

}  // namespace stilt
