#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace stilt {

/// Deterministic synthetic prose: documents written from a small template
/// grammar over per-topic pseudo-word vocabularies, one document per line.
struct TopicCorpusOptions {
    std::uint64_t seed = 2024;
    std::size_t documents = 2300;
    std::size_t min_sentences = 20;
    std::size_t max_sentences = 40;
    std::size_t topics = 12;
    std::size_t nouns = 40;
    std::size_t verbs = 24;
    std::size_t adjectives = 20;
    std::size_t names = 12;
    std::size_t places = 12;
    double off_topic = 0.15;  // chance that a content slot draws from the shared vocabulary
};

std::string generate_topic_corpus(const TopicCorpusOptions& options = {});

/// Writes the corpus to path unless a file is already there.
void ensure_topic_corpus(const std::filesystem::path& path, const TopicCorpusOptions& options = {});

}  // namespace stilt
