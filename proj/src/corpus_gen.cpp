#include "stilt/corpus_gen.hpp"

#include "stilt/io.hpp"
#include "stilt/rng.hpp"

#include <array>
#include <set>
#include <string_view>
#include <vector>

namespace stilt {

namespace {

constexpr std::array<std::string_view, 10> kTemplates = {
    "The {A} {N} {V} the {N} near {L}.",
    "{P} {V} a {A} {N} and {V} the {N} before dawn.",
    "In {L} the {N} {V} every {A} {N} with care.",
    "After the {N} {V} the {N}, {P} {V} a {A} {N} again.",
    "Some {A} {N} {V} the {N} while {P} {V} the {A} {N} in {L}.",
    "{P} said that the {N} {V} the {A} {N} near the {N}.",
    "Every {N} in {L} {V} a {N} because the {A} {N} {V} it.",
    "A {A} {N} and a {A} {N} {V} the {N} under {L}.",
    "When {P} {V} the {N}, the {A} {N} {V} the {N} at once.",
    "The {N} of {L} {V} the {A} {N} and then {V} the {N}.",
};

constexpr std::array<std::string_view, 14> kOnsets = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
constexpr std::array<std::string_view, 6> kVowels = {"a", "e", "i", "o", "u", "ai"};

struct Vocabulary {
    std::vector<std::string> nouns, verbs, adjectives, names, places;
};

std::string pseudo_word(Rng& rng, std::size_t syllables) {
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w += kOnsets[rng.below(kOnsets.size())];
        w += kVowels[rng.below(kVowels.size())];
    }
    return w;
}

std::vector<std::string> words(Rng& rng, std::set<std::string>& used, std::size_t n, std::string_view suffix,
                               bool capital) {
    std::vector<std::string> out;
    while (out.size() < n) {
        std::string w = pseudo_word(rng, 2 + rng.below(2)) + std::string(suffix);
        if (capital) w[0] = static_cast<char>(w[0] - 'a' + 'A');
        if (used.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

}  // namespace

std::string generate_topic_corpus(const TopicCorpusOptions& o) {
    Rng vocab_rng(derive_seed(o.seed, "vocabulary"));
    std::set<std::string> used;
    // Index o.topics holds the shared, topic-neutral vocabulary.
    std::vector<Vocabulary> vocab(o.topics + 1);
    for (auto& v : vocab) {
        v.nouns = words(vocab_rng, used, o.nouns, "", false);
        v.verbs = words(vocab_rng, used, o.verbs, "ed", false);
        v.adjectives = words(vocab_rng, used, o.adjectives, "ic", false);
        v.names = words(vocab_rng, used, o.names, "", true);
        v.places = words(vocab_rng, used, o.places, "ia", true);
    }

    std::string out;
    for (std::size_t d = 0; d < o.documents; ++d) {
        Rng rng(derive_seed(o.seed, "document", d));
        const std::size_t topic = rng.below(o.topics);
        const std::size_t sentences = o.min_sentences + rng.below(o.max_sentences - o.min_sentences + 1);
        auto pick = [&](auto member) -> const std::string& {
            const Vocabulary& v = rng.uniform() < o.off_topic ? vocab[o.topics] : vocab[topic];
            const auto& list = v.*member;
            return list[rng.below(list.size())];
        };
        for (std::size_t s = 0; s < sentences; ++s) {
            if (s > 0) out += ' ';
            const std::string_view t = kTemplates[rng.below(kTemplates.size())];
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (t[i] != '{') {
                    out += t[i];
                    continue;
                }
                switch (t[i + 1]) {
                    case 'N': out += pick(&Vocabulary::nouns); break;
                    case 'V': out += pick(&Vocabulary::verbs); break;
                    case 'A': out += pick(&Vocabulary::adjectives); break;
                    case 'P': out += pick(&Vocabulary::names); break;
                    case 'L': out += pick(&Vocabulary::places); break;
                }
                i += 2;
            }
        }
        out += '\n';
    }
    return out;
}

void ensure_topic_corpus(const std::filesystem::path& path, const TopicCorpusOptions& options) {
    if (std::filesystem::exists(path)) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    io::write_file_atomic(path, generate_topic_corpus(options));
}

}  // namespace stilt
