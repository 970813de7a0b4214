#include <doctest.h>

#include "fixtures.hpp"

#include "stilt/datasets.hpp"
#include "stilt/error.hpp"
#include "stilt/io.hpp"
#include "stilt/text.hpp"

#include <algorithm>
#include <set>

using namespace stilt;
using namespace stilt::testing;

namespace {

McDataset tiny() {
    McDataset ds;
    ds.name = "tiny";
    ds.num_options = 4;
    ds.provenance.push_back({"manual", {}});
    ds.examples.push_back({"e1", "P", {"a", "b", "c", "d"}, 2, {}});
    ds.examples.push_back({"e2", "", {"one two three", "x", "gold words here", "p q r s"}, 2, {{"k", "v"}}});
    return ds;
}

McDataset classification() {
    McDataset ds;
    ds.name = "cls";
    ds.task_type = TaskType::classification;
    ds.metric_name = MetricName::mcc;
    ds.num_options = 2;
    ds.provenance.push_back({"manual", {}});
    ds.examples.push_back({"c1", std::string("a") + std::string(kFieldSeparator) + "b", {"no", "yes"}, 1, {}});
    return ds;
}

std::vector<std::string> ids(const McDataset& ds) {
    std::vector<std::string> out;
    for (const auto& e : ds.examples) out.push_back(e.id);
    return out;
}

std::vector<std::string> sorted_tokens(const std::string& s) {
    auto t = text::tokens(s);
    std::sort(t.begin(), t.end());
    return t;
}

}  // namespace

TEST_SUITE("ablate_premises") {
    TEST_CASE("empties premises only") {
        const McDataset out = ablate_premises(tiny());
        CHECK(out.examples[0].premise.empty());
        CHECK(out.examples[0].options == std::vector<std::string>{"a", "b", "c", "d"});
        CHECK(out.examples[0].label == 2);
        CHECK(out.provenance.back().op == "ablate_premises");
        CHECK(out.provenance.size() == 2);
    }

    TEST_CASE("fixed point on empty premises") {
        const McDataset once = ablate_premises(tiny());
        McDataset twice = ablate_premises(once);
        twice.provenance.pop_back();
        CHECK(twice == once);
    }

    TEST_CASE("classification is rejected") {
        CHECK_THROWS_AS(ablate_premises(classification()), WrongTaskType);
        CHECK_THROWS_AS(shuffle_fake_endings(classification(), 1), WrongTaskType);
    }
}

TEST_SUITE("shuffle_fake_endings") {
    TEST_CASE("gold and single-token fakes unchanged, multisets kept") {
        const McDataset in = tiny();
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const McDataset out = shuffle_fake_endings(in, seed);
            CHECK(out.examples[0].options == in.examples[0].options);
            CHECK(out.examples[1].options[2] == "gold words here");
            CHECK(out.examples[1].options[1] == "x");
            CHECK(out.examples[1].premise == "");
            CHECK(sorted_tokens(out.examples[1].options[0]) == std::vector<std::string>{"one", "three", "two"});
        }
    }

    TEST_CASE("seeded and actually permuting") {
        const McDataset in = tiny();
        CHECK(shuffle_fake_endings(in, 9) == shuffle_fake_endings(in, 9));
        std::set<std::string> variants;
        for (std::uint64_t seed = 0; seed < 50; ++seed) variants.insert(shuffle_fake_endings(in, seed).examples[1].options[3]);
        CHECK(variants.size() > 5);
    }

    TEST_CASE("property: random datasets") {
        for (std::uint64_t c = 0; c < 1000; ++c) {
            const McDataset in = random_dataset(c, 3, 2 + c % 4);
            const McDataset out = shuffle_fake_endings(in, c * 7);
            REQUIRE(out.examples.size() == in.examples.size());
            for (std::size_t i = 0; i < in.examples.size(); ++i) {
                const auto& a = in.examples[i];
                const auto& b = out.examples[i];
                CHECK(a.id == b.id);
                CHECK(a.label == b.label);
                CHECK(a.premise == b.premise);
                CHECK(a.options[a.label] == b.options[b.label]);
                for (std::size_t o = 0; o < a.options.size(); ++o) {
                    CHECK(sorted_tokens(a.options[o]) == sorted_tokens(b.options[o]));
                }
            }
        }
    }
}

TEST_SUITE("subsample") {
    const McDataset big = random_dataset(1, 300);

    TEST_CASE("boundaries") {
        const McDataset all = subsample(big, big.examples.size(), 3);
        auto a = ids(all), b = ids(big);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
        CHECK(subsample(big, 0, 3).examples.empty());
        CHECK_THROWS_AS(subsample(big, big.examples.size() + 1, 3), SampleTooLarge);
    }

    TEST_CASE("deterministic per seed") {
        CHECK(ids(subsample(big, 50, 8)) == ids(subsample(big, 50, 8)));
        CHECK(ids(subsample(big, 50, 8)) != ids(subsample(big, 50, 9)));
    }

    TEST_CASE("nested subsamples stay inside the first") {
        for (std::uint64_t s = 0; s < 100; ++s) {
            const McDataset first = subsample(big, 120, s);
            const McDataset second = subsample(first, 40, s + 1000);
            const auto outer = ids(first);
            const std::set<std::string> pool(outer.begin(), outer.end());
            for (const auto& id : ids(second)) CHECK(pool.count(id) == 1);
        }
    }
}

TEST_SUITE("split_train_dev") {
    TEST_CASE("90/10 disjoint and exhaustive") {
        const McDataset ds = random_dataset(4, 100);
        const auto [train, dev] = split_train_dev(ds, 0.1, 5);
        CHECK(train.examples.size() == 90);
        CHECK(dev.examples.size() == 10);
        std::set<std::string> all;
        for (const auto& id : ids(train)) all.insert(id);
        for (const auto& id : ids(dev)) CHECK(all.insert(id).second);
        CHECK(all.size() == 100);
        const auto again = split_train_dev(ds, 0.1, 5);
        CHECK(again.second == dev);
        CHECK(dev.name == "random4_dev");
    }

    TEST_CASE("fraction outside (0, 1)") {
        CHECK_THROWS_AS(split_train_dev(tiny(), 0.0, 1), std::invalid_argument);
        CHECK_THROWS_AS(split_train_dev(tiny(), 1.0, 1), std::invalid_argument);
    }
}

TEST_SUITE("jsonl") {
    TEST_CASE("round trip, including unicode") {
        TempDir dir;
        for (std::uint64_t c = 0; c < 200; ++c) {
            const McDataset ds = random_dataset(c, 1 + c % 9, 2 + c % 3);
            write_jsonl(ds, dir / "d.jsonl");
            CHECK(read_jsonl(dir / "d.jsonl") == ds);
        }
        const McDataset big = random_dataset(99, 1000);
        write_jsonl(big, dir / "big.jsonl");
        CHECK(read_jsonl(dir / "big.jsonl") == big);
        write_jsonl(classification(), dir / "cls.jsonl");
        CHECK(read_jsonl(dir / "cls.jsonl") == classification());
    }

    TEST_CASE("manifest carries metadata and digest") {
        TempDir dir;
        write_jsonl(tiny(), dir / "t.jsonl");
        const auto manifest = nlohmann::json::parse(io::read_file(dir / "t.manifest.json"));
        CHECK(manifest.at("name") == "tiny");
        CHECK(manifest.at("num_options") == 4);
        CHECK(manifest.at("example_count") == 2);
        CHECK(manifest.at("content_digest") == file_digest(dir / "t.jsonl"));
        CHECK(manifest.at("content_digest") == content_digest(tiny()));
    }

    TEST_CASE("label 4 with 4 options") {
        TempDir dir;
        io::write_file_atomic(dir / "bad.jsonl",
                              "{\"id\":\"a\",\"premise\":\"\",\"options\":[\"1\",\"2\",\"3\",\"4\"],\"label\":0}\n"
                              "{\"id\":\"b\",\"premise\":\"\",\"options\":[\"1\",\"2\",\"3\",\"4\"],\"label\":4}\n");
        try {
            read_jsonl(dir / "bad.jsonl");
            FAIL("expected InvariantViolation");
        } catch (const InvariantViolation& e) {
            CHECK(e.line() == 2);
        }
    }

    TEST_CASE("parse errors name the line") {
        TempDir dir;
        io::write_file_atomic(dir / "bad.jsonl",
                              "{\"id\":\"a\",\"premise\":\"\",\"options\":[\"1\",\"2\"],\"label\":0}\n\n{oops\n");
        try {
            read_jsonl(dir / "bad.jsonl");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
        io::write_file_atomic(dir / "missing.jsonl", "{\"id\":\"a\",\"options\":[\"1\",\"2\"],\"label\":0}\n");
        CHECK_THROWS_AS(read_jsonl(dir / "missing.jsonl"), ParseError);
    }

    TEST_CASE("other invariants") {
        TempDir dir;
        io::write_file_atomic(dir / "dup.jsonl",
                              "{\"id\":\"a\",\"premise\":\"\",\"options\":[\"1\",\"2\"],\"label\":0}\n"
                              "{\"id\":\"a\",\"premise\":\"\",\"options\":[\"1\",\"2\"],\"label\":1}\n");
        CHECK_THROWS_AS(read_jsonl(dir / "dup.jsonl"), InvariantViolation);
        io::write_file_atomic(dir / "empty_opt.jsonl", "{\"id\":\"a\",\"premise\":\"\",\"options\":[\"1\",\"\"],\"label\":0}\n");
        CHECK_THROWS_AS(read_jsonl(dir / "empty_opt.jsonl"), InvariantViolation);
        io::write_file_atomic(dir / "ragged.jsonl",
                              "{\"id\":\"a\",\"premise\":\"\",\"options\":[\"1\",\"2\"],\"label\":0}\n"
                              "{\"id\":\"b\",\"premise\":\"\",\"options\":[\"1\",\"2\",\"3\"],\"label\":0}\n");
        CHECK_THROWS_AS(read_jsonl(dir / "ragged.jsonl"), InvariantViolation);
        McDataset mcc_mc = tiny();
        mcc_mc.metric_name = MetricName::mcc;
        CHECK_THROWS_AS(validate(mcc_mc), InvariantViolation);
    }

    TEST_CASE("empty file is an empty dataset") {
        TempDir dir;
        io::write_file_atomic(dir / "empty.jsonl", "");
        const McDataset ds = read_jsonl(dir / "empty.jsonl");
        CHECK(ds.examples.empty());
        CHECK(ds.name == "empty");
    }

    TEST_CASE("majority label frequency") {
        CHECK(majority_label_frequency(tiny()) == 1.0);
        McDataset ds = tiny();
        ds.examples[1].label = 0;
        CHECK(majority_label_frequency(ds) == 0.5);
    }
}
