#include <doctest.h>

#include "fixtures.hpp"

#include "stilt/error.hpp"
#include "stilt/hash.hpp"
#include "stilt/io.hpp"
#include "stilt/sweep.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <sys/stat.h>

using namespace stilt;
using namespace stilt::testing;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    TempDir dir{"stilt-sweep"};
    fs::path train = dir / "target_train.jsonl";
    fs::path dev = dir / "target_dev.jsonl";
    fs::path inter = dir / "inter.jsonl";

    Fixture() {
        McDataset t = random_dataset(1, 24);
        t.name = "toy_train";
        McDataset d = random_dataset(2, 16);
        d.name = "toy_dev";
        McDataset i = random_dataset(3, 60);
        i.name = "inter";
        write_jsonl(t, train);
        write_jsonl(d, dev);
        write_jsonl(i, inter);
    }

    SweepSpec spec(const std::string& ledger, bool with_intermediate = false) const {
        SweepSpec s;
        s.target_train = train;
        s.target_dev = dev;
        s.ledger = dir / ledger;
        s.max_epochs = 2;
        s.reference.architecture = {1u << 10, 8};
        s.work_dir = dir / (ledger + ".runs");
        s.cache_dir = dir / "cache";
        if (with_intermediate) {
            IntermediateSpec in;
            in.dataset = inter;
            in.max_epochs = 1;
            s.intermediate = in;
        }
        return s;
    }
};

nlohmann::json comparable(const RunRecord& r) {
    nlohmann::json j = to_json(r);
    j.erase("duration_s");
    return j;
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::vector<std::string> out;
    std::istringstream in(io::read_file(p));
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST_SUITE("expand_grid") {
    TEST_CASE("standard grid has 36 distinct configs") {
        const auto g = expand_grid(Grid::standard());
        CHECK(g.size() == 36);
        std::set<std::string> distinct;
        for (const auto& hp : g) distinct.insert(canonical_string(hp));
        CHECK(distinct.size() == 36);
        CHECK(g.front() == HyperParams{5e-6, 8, 0.0, 12});
        CHECK(g[1] == HyperParams{5e-6, 8, 0.0, 42});
        CHECK(g[2] == HyperParams{5e-6, 8, 0.2, 12});
        CHECK(g[4] == HyperParams{5e-6, 16, 0.0, 12});
        CHECK(g[12] == HyperParams{1e-5, 8, 0.0, 12});
        CHECK(g.back() == HyperParams{2e-5, 32, 0.2, 42});
    }

    TEST_CASE("singleton axes") { CHECK(expand_grid(Grid{{1e-5}, {16}, {0.0}, {42}}).size() == 1); }

    TEST_CASE("declared order is kept") {
        const auto g = expand_grid(Grid{{1e-5, 2e-5}, {16}, {0.0}, {42}});
        REQUIRE(g.size() == 2);
        CHECK(g[0].learning_rate == 1e-5);
        const auto r = expand_grid(Grid{{2e-5, 1e-5}, {16}, {0.0}, {42}});
        CHECK(r[0].learning_rate == 2e-5);
    }

    TEST_CASE("repeated values are dropped") {
        CHECK(expand_grid(Grid{{1e-5, 1e-5}, {16, 8, 16}, {0.0}, {42, 42}}).size() == 2);
    }
}

TEST_SUITE("sweep spec") {
    TEST_CASE("parse with relative paths") {
        Fixture f;
        const auto j = nlohmann::json::parse(R"({
            "intermediate": {"dataset": "inter.jsonl", "hyperparams": {"learning_rate": 2e-5}},
            "target": {"dataset_train": "target_train.jsonl", "dataset_dev": "target_dev.jsonl"},
            "grid": {"learning_rate": [1e-5], "seed": [1, 2]},
            "backend": "reference", "worker_command": null, "parallelism": 2, "ledger": "out/ledger.jsonl"})");
        const SweepSpec s = parse_sweep_spec(j, f.dir.path());
        REQUIRE(s.intermediate);
        CHECK(s.intermediate->dataset == f.inter);
        CHECK(s.intermediate->hyperparams == HyperParams{2e-5, 16, 0.0, 42});
        CHECK(s.target_train == f.train);
        CHECK(expand_grid(s.grid).size() == 1 * 3 * 2 * 2);
        CHECK(s.parallelism == 2);
        CHECK(s.ledger == f.dir / "out/ledger.jsonl");
        CHECK(s.work_dir == f.dir / "out/ledger.runs");
        CHECK(s.cache_dir == f.dir / "out/.stilt-cache");
        CHECK(parse_sweep_spec(nlohmann::json::parse(to_json(s).dump())).ledger == s.ledger);
    }

    TEST_CASE("defaults") {
        const auto s = parse_sweep_spec(nlohmann::json::parse(
            R"({"intermediate": null, "target": {"dataset_train": "/a", "dataset_dev": "/b"}, "ledger": "/l.jsonl"})"));
        CHECK_FALSE(s.intermediate);
        CHECK(expand_grid(s.grid).size() == 36);
        CHECK(s.backend == "reference");
        CHECK(s.parallelism == 1);
    }

    TEST_CASE("errors") {
        auto bad = [](const char* text) { return parse_sweep_spec(nlohmann::json::parse(text)); };
        CHECK_THROWS_AS(bad(R"({"ledger": "/l"})"), SpecError);
        CHECK_THROWS_AS(bad(R"({"target": {"dataset_train": "/a", "dataset_dev": "/b"}, "ledger": "/l", "backend": "gpu"})"), SpecError);
        CHECK_THROWS_AS(bad(R"({"target": {"dataset_train": "/a", "dataset_dev": "/b"}, "ledger": "/l", "parallelism": 0})"), SpecError);
        CHECK_THROWS_AS(bad(R"({"target": {"dataset_train": "/a", "dataset_dev": "/b"}, "ledger": "/l", "grid": {"seed": []}})"), SpecError);
        CHECK_THROWS_AS(bad(R"({"target": {"dataset_train": "/a", "dataset_dev": "/b"}, "ledger": "/l", "grid": {"learning_rate": [-1]}})"), SpecError);
        CHECK_THROWS_AS(bad(R"([1, 2])"), SpecError);
    }
}

TEST_SUITE("run_sweep") {
    TEST_CASE("fresh sweep, idempotent rerun, partial resume") {
        Fixture f;
        const SweepSpec s = f.spec("none.jsonl");
        SweepCounters c1;
        const auto first = run_sweep(s, &c1);
        CHECK(first.size() == 36);
        CHECK(c1.target_runs == 36);
        const auto ledger = read_ledger(s.ledger);
        REQUIRE(ledger.size() == 36);
        std::set<std::string> hashes;
        for (const auto& r : ledger) {
            CHECK(r.config_hash == compute_config_hash(r));
            CHECK(r.run_id == r.config_hash.substr(0, 16));
            CHECK(r.pair_label() == "None→toy");
            CHECK(r.status == RunStatus::ok);
            CHECK(r.chance_level == 0.25);
            hashes.insert(r.config_hash);
        }
        CHECK(hashes.size() == 36);

        const std::string digest = sha256_file_hex(s.ledger);
        SweepCounters c2;
        CHECK(run_sweep(s, &c2).empty());
        CHECK(c2.target_runs == 0);
        CHECK(c2.resumed == 36);
        CHECK(sha256_file_hex(s.ledger) == digest);

        auto lines = lines_of(s.ledger);
        lines.resize(30);
        std::string kept;
        for (const auto& l : lines) kept += l + "\n";
        io::write_file_atomic(s.ledger, kept);
        SweepCounters c3;
        const auto resumed = run_sweep(s, &c3);
        CHECK(resumed.size() == 6);
        CHECK(c3.target_runs == 6);
        CHECK(read_ledger(s.ledger).size() == 36);
        for (std::size_t i = 0; i < 6; ++i) CHECK(comparable(resumed[i]) == comparable(first[30 + i]));
    }

    TEST_CASE("parallel sweep matches the serial one") {
        Fixture f;
        SweepSpec serial = f.spec("serial.jsonl");
        serial.grid = Grid{{1e-5, 2e-5}, {8, 16}, {0.0}, {12, 42}};
        SweepSpec parallel = serial;
        parallel.ledger = f.dir / "parallel.jsonl";
        parallel.work_dir = f.dir / "serial.jsonl.runs";
        parallel.parallelism = 3;
        const auto a = run_sweep(serial);
        fs::remove_all(serial.work_dir);
        const auto b = run_sweep(parallel);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(comparable(a[i]) == comparable(b[i]));
        auto ledger_a = read_ledger(serial.ledger), ledger_b = read_ledger(parallel.ledger);
        std::set<std::string> sa, sb;
        for (const auto& r : ledger_a) sa.insert(comparable(r).dump());
        for (const auto& r : ledger_b) sb.insert(comparable(r).dump());
        CHECK(sa == sb);
    }

    TEST_CASE("intermediate trained once across sweeps") {
        Fixture f;
        SweepSpec a = f.spec("stilt_a.jsonl", true);
        a.grid = Grid{{1e-5}, {16}, {0.0}, {12, 42}};
        SweepSpec b = a;
        b.ledger = f.dir / "stilt_b.jsonl";
        b.grid.seed = {7};
        SweepCounters c;
        run_sweep(a, &c);
        run_sweep(b, &c);
        CHECK(c.intermediate_runs == 1);
        CHECK(c.intermediate_cache_hits == 1);
        CHECK(c.target_runs == 3);
        const auto recs = read_ledger(a.ledger);
        CHECK(recs.front().intermediate == "inter");
        CHECK(recs.front().dataset_digests.at("intermediate") == intermediate_config_hash(a));

        const auto cached = prepare_intermediate(a, &c);
        REQUIRE(cached);
        CHECK(cached->cached);
        CHECK(c.intermediate_runs == 1);
        CHECK_FALSE(prepare_intermediate(f.spec("x.jsonl")));
    }

    TEST_CASE("changed dataset invalidates results") {
        Fixture f;
        SweepSpec s = f.spec("n.jsonl");
        s.grid = Grid{{1e-5}, {16}, {0.0}, {42}};
        run_sweep(s);
        McDataset d = read_jsonl(f.dev);
        d.examples.pop_back();
        write_jsonl(d, f.dev);
        CHECK(run_sweep(s).size() == 1);
        CHECK(read_ledger(s.ledger).size() == 2);
    }

    TEST_CASE("failed runs are recorded, the sweep continues") {
        Fixture f;
        const fs::path worker = f.dir / "crash.sh";
        io::write_file_atomic(worker, "#!/bin/sh\nread line\necho boom >&2\nexit 9\n");
        ::chmod(worker.c_str(), 0755);
        SweepSpec s = f.spec("w.jsonl");
        s.backend = "worker";
        s.worker_command = {worker.string()};
        s.grid = Grid{{1e-5}, {8, 16}, {0.0}, {42}};
        const auto recs = run_sweep(s);
        REQUIRE(recs.size() == 2);
        for (const auto& r : recs) {
            CHECK(r.status == RunStatus::failed);
            CHECK(r.dev_metric == 0.0);
            CHECK(r.error.find("boom") != std::string::npos);
        }
        CHECK(read_ledger(s.ledger).size() == 2);
    }

    TEST_CASE("worker backend records worker results") {
        Fixture f;
        const fs::path worker = f.dir / "echo.sh";
        io::write_file_atomic(worker,
                              "#!/bin/sh\nread line\n"
                              "echo '{\"type\":\"result\",\"status\":\"ok\",\"dev_metric\":0.5,\"metric_name\":\"accuracy\","
                              "\"best_epoch\":1,\"checkpoint\":\"\",\"error\":null}'\n");
        ::chmod(worker.c_str(), 0755);
        SweepSpec s = f.spec("w.jsonl");
        s.backend = "worker";
        s.worker_command = {worker.string()};
        s.grid = Grid{{1e-5}, {8}, {0.0}, {1, 2}};
        const auto recs = run_sweep(s);
        REQUIRE(recs.size() == 2);
        CHECK(recs[0].dev_metric == 0.5);
        CHECK(recs[0].backend.at("name") == "worker");
    }

    TEST_CASE("missing datasets and corrupt ledgers") {
        Fixture f;
        SweepSpec s = f.spec("l.jsonl");
        s.target_dev = f.dir / "nope.jsonl";
        CHECK_THROWS_AS(run_sweep(s), DatasetMissing);
        s = f.spec("l.jsonl");
        io::write_file_atomic(s.ledger, "{not json\n");
        try {
            run_sweep(s);
            FAIL("expected LedgerCorrupt");
        } catch (const LedgerCorrupt& e) {
            CHECK(std::string(e.what()).find("line 1") != std::string::npos);
        }
    }
}

TEST_SUITE("ledger") {
    TEST_CASE("record round trip") {
        RunRecord r;
        r.run_id = "abc";
        r.intermediate = "inter";
        r.target = "toy";
        r.hyperparams = {2e-5, 32, 0.2, 12};
        r.dev_metric = 0.625;
        r.status = RunStatus::failed;
        r.error = "boom";
        r.backend = {{"name", "reference"}};
        r.dataset_digests = {{"target_dev", "ff"}};
        r.config_hash = compute_config_hash(r);
        const RunRecord back = record_from_json(nlohmann::json::parse(to_json(r).dump()));
        CHECK(comparable(back) == comparable(r));
        CHECK(to_json(r).at("pair") == nlohmann::json::array({"inter", "toy"}));
        RunRecord other = r;
        other.hyperparams.seed = 42;
        CHECK(compute_config_hash(other) != r.config_hash);
        other = r;
        other.dev_metric = 0.1;
        other.duration_s = 99;
        CHECK(compute_config_hash(other) == r.config_hash);
    }

    TEST_CASE("missing ledger is empty") { CHECK(read_ledger("/nonexistent/ledger.jsonl").empty()); }
}
