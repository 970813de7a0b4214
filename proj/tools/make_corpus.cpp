// Writes the deterministic topic corpus used by the examples and acceptance tests.
#include "stilt/corpus_gen.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Generate the synthetic topic corpus (one document per line)", "make_corpus"};
    stilt::TopicCorpusOptions o;
    std::string out;
    bool force = false;
    app.add_option("--out", out, "Output path")->required();
    app.add_option("--seed", o.seed, "Seed")->capture_default_str();
    app.add_option("--documents", o.documents, "Number of documents")->capture_default_str();
    app.add_option("--topics", o.topics, "Number of topics")->capture_default_str();
    app.add_flag("--force", force, "Overwrite an existing file");
    CLI11_PARSE(app, argc, argv);
    if (force) std::filesystem::remove(out);
    stilt::ensure_topic_corpus(out, o);
    std::cout << out << "\n";
    return 0;
}
