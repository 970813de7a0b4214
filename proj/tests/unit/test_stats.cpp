#include <doctest.h>

#include "fixtures.hpp"

#include "stilt/error.hpp"
#include "stilt/io.hpp"
#include "stilt/rng.hpp"
#include "stilt/stats.hpp"
#include "stilt/sweep.hpp"

#include <algorithm>
#include <cmath>

using namespace stilt;
using namespace stilt::testing;
namespace fs = std::filesystem;

namespace {

std::vector<RunRecord> ledger(const std::string& intermediate, const std::string& target,
                              const std::vector<double>& metrics, double chance = 0.25) {
    const auto grid = expand_grid(Grid::standard());
    std::vector<RunRecord> out;
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        RunRecord r;
        r.intermediate = intermediate;
        r.target = target;
        r.hyperparams = grid[i % grid.size()];
        r.dev_metric = metrics[i];
        r.chance_level = chance;
        r.majority_frequency = chance;
        out.push_back(r);
    }
    return out;
}

// A 36-run ledger with the given mean and best: 35 runs share a value, one run is the best.
std::vector<double> with_mean_best(double mean, double best) {
    const double rest = (36 * mean - best) / 35;
    std::vector<double> v(35, rest);
    v.push_back(best);
    return v;
}

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("accuracy") {
        const std::vector<int> g{0, 1, 2, 3};
        CHECK(accuracy(g, g) == 1.0);
        CHECK(accuracy(std::vector<int>{1, 2, 3, 0}, g) == 0.0);
        CHECK(accuracy(std::vector<int>{0, 1, 2, 0}, g) == 0.75);
        CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), EmptyInput);
        CHECK_THROWS_AS(accuracy(std::vector<int>{1}, g), std::invalid_argument);
    }

    TEST_CASE("mcc") {
        const std::vector<int> g{1, 0, 1, 1, 0};
        CHECK(mcc(g, g) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(mcc(BinaryConfusion{50, 40, 10, 0}) == doctest::Approx(2000.0 / std::sqrt(6.0e6)).epsilon(1e-12));
        CHECK(mcc(BinaryConfusion{50, 40, 10, 0}) == doctest::Approx(0.8165).epsilon(1e-4));
        CHECK(mcc(std::vector<int>(5, 1), g) == 0.0);
        CHECK_THROWS_AS(mcc(std::vector<int>{2, 0}, std::vector<int>{1, 0}), NonBinaryLabels);
    }

    TEST_CASE("brute force agreement") {
        Rng rng(9);
        for (int c = 0; c < 10000; ++c) {
            const std::size_t n = 1 + rng.below(30);
            std::vector<int> p(n), g(n);
            for (std::size_t i = 0; i < n; ++i) {
                p[i] = static_cast<int>(rng.below(2));
                g[i] = static_cast<int>(rng.below(2));
            }
            double tp = 0, tn = 0, fp = 0, fn = 0, same = 0;
            for (std::size_t i = 0; i < n; ++i) {
                same += p[i] == g[i];
                tp += p[i] && g[i];
                tn += !p[i] && !g[i];
                fp += p[i] && !g[i];
                fn += !p[i] && g[i];
            }
            const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
            const double expect = den == 0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(den);
            CHECK(std::abs(mcc(p, g) - expect) <= 1e-12);
            CHECK(std::abs(accuracy(p, g) - same / static_cast<double>(n)) <= 1e-12);
        }
    }
}

TEST_SUITE("violin_summary") {
    TEST_CASE("basic arithmetic") {
        const auto s = violin_summary("x", ledger("A", "T", {0.5, 0.7, 0.9}), 0.25, 0.27);
        CHECK(s.min == 0.5);
        CHECK(s.mean == doctest::Approx(0.7).epsilon(1e-15));
        CHECK(s.best == 0.9);
        CHECK(s.std == doctest::Approx(std::sqrt(0.08 / 3)).epsilon(1e-12));
        CHECK(s.degenerate_count == 0);
    }

    TEST_CASE("single record") {
        const auto s = violin_summary("x", ledger("A", "T", {0.4}), 0.25, 0.27);
        CHECK(s.min == s.mean);
        CHECK(s.mean == s.best);
        CHECK(s.std == 0.0);
    }

    TEST_CASE("36 random records against brute force") {
        Rng rng(1);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> v(36);
            for (auto& x : v) x = rng.uniform();
            auto recs = ledger("A", "T", v);
            for (std::size_t i = 0; i < recs.size(); i += 7) recs[i].status = RunStatus::failed;
            std::vector<double> eff;
            for (const auto& r : recs) eff.push_back(r.status == RunStatus::ok ? r.dev_metric : 0.25);
            double sum = 0, lo = 1, hi = 0;
            for (double x : eff) {
                sum += x;
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            const double mean = sum / 36;
            double ss = 0;
            for (double x : eff) ss += (x - mean) * (x - mean);
            const auto degenerate = std::count_if(eff.begin(), eff.end(), [](double x) { return x <= 0.27; });
            const auto s = violin_summary("A→T", recs);
            CHECK(std::abs(s.mean - mean) <= 1e-12);
            CHECK(s.min == lo);
            CHECK(s.best == hi);
            CHECK(std::abs(s.std - std::sqrt(ss / 36)) <= 1e-12);
            CHECK(s.degenerate_count == static_cast<std::size_t>(degenerate));
            CHECK(s.min <= s.mean);
            CHECK(s.mean <= s.best);
        }
    }

    TEST_CASE("adding a record never lowers best nor raises min") {
        Rng rng(2);
        std::vector<double> v{0.5};
        for (int i = 0; i < 35; ++i) {
            const auto before = violin_summary("x", ledger("A", "T", v), 0.25, 0.27);
            v.push_back(rng.uniform());
            const auto after = violin_summary("x", ledger("A", "T", v), 0.25, 0.27);
            CHECK(after.best >= before.best);
            CHECK(after.min <= before.min);
        }
    }

    TEST_CASE("degenerate count is monotone in epsilon") {
        Rng rng(3);
        std::vector<double> v(36);
        for (auto& x : v) x = 0.2 + 0.2 * rng.uniform();
        const auto recs = ledger("A", "T", v);
        std::size_t last = 0;
        for (double eps = 0.0; eps <= 0.2; eps += 0.005) {
            const auto c = violin_summary("x", recs, eps).degenerate_count;
            CHECK(c >= last);
            last = c;
        }
    }

    TEST_CASE("errors") {
        CHECK_THROWS_AS(violin_summary("x", std::vector<RunRecord>{}, 0.25, 0.27), EmptyInput);
        auto recs = ledger("A", "T", {0.5, 0.6});
        recs[1].metric_name = MetricName::mcc;
        CHECK_THROWS_AS(violin_summary("x", recs, 0.25, 0.27), MixedMetrics);
    }
}

TEST_SUITE("degenerate_threshold") {
    TEST_CASE("rule applications") {
        CHECK(degenerate_threshold(MetricName::accuracy, 4, 0.25) == doctest::Approx(0.27).epsilon(1e-15));
        CHECK(degenerate_threshold(MetricName::accuracy, 2, 0.527) == doctest::Approx(0.547).epsilon(1e-15));
        CHECK(degenerate_threshold(MetricName::accuracy, 4, 0.1, 0.0) == 0.25);
        CHECK(degenerate_threshold(MetricName::mcc, 2, 0.9) == 0.02);
    }

    TEST_CASE("from a dataset") {
        McDataset ds = random_dataset(1, 40);
        for (std::size_t i = 0; i < ds.examples.size(); ++i) ds.examples[i].label = static_cast<int>(i % 4);
        CHECK(degenerate_threshold(ds) == doctest::Approx(0.27).epsilon(1e-15));
    }
}

TEST_SUITE("deltas") {
    TEST_CASE("formatting") {
        CHECK(format_delta_cell(100 * (0.746 - 0.707), 100 * (0.712 - 0.715)) == "+3.9 / −0.3");
        CHECK(format_delta(0.0) == "±0.0");
        CHECK(format_delta(0.04) == "±0.0");
        CHECK(format_delta(-0.04) == "±0.0");
        CHECK(format_delta(12.25) == "+12.3");
        CHECK(format_delta(-7.0) == "−7.0");
    }

    TEST_CASE("mean gain with a best-score loss from synthetic ledgers") {
        const auto method = ledger("CoLA", "WiC", with_mean_best(0.746, 0.712 + 0.04), 0.5);
        auto base = ledger("None", "WiC", with_mean_best(0.707, 0.715 + 0.04), 0.5);
        const auto rows = delta_table(method, base);
        REQUIRE(rows.size() == 1);
        REQUIRE(rows[0].cells.size() == 1);
        const auto& c = rows[0].cells[0];
        CHECK(format_delta_cell(c.delta_mean_pp, c.delta_best_pp) == "+3.9 / −0.3");
        CHECK_FALSE(c.mean_negative());
        CHECK(c.best_negative());
    }

    TEST_CASE("identical ledgers give zero") {
        Rng rng(4);
        std::vector<double> v(36);
        for (auto& x : v) x = rng.uniform();
        const auto l = ledger("None", "T", v);
        const auto rows = delta_table(l, l);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].cells[0].delta_mean_pp == 0.0);
        CHECK(rows[0].cells[0].delta_best_pp == 0.0);
        CHECK(format_delta_cell(0.0, 0.0) == "±0.0 / ±0.0");
    }

    TEST_CASE("brute-force recomputation") {
        Rng rng(5);
        std::vector<double> a(36), b(36);
        for (auto& x : a) x = rng.uniform();
        for (auto& x : b) x = rng.uniform();
        auto method = ledger("H", "T", a);
        auto more = ledger("H", "U", b);
        method.insert(method.end(), more.begin(), more.end());
        auto base = ledger("None", "T", b);
        auto base_u = ledger("None", "U", a);
        base.insert(base.end(), base_u.begin(), base_u.end());
        const auto rows = delta_table(method, base);
        REQUIRE(rows.size() == 1);
        REQUIRE(rows[0].cells.size() == 2);
        auto mean = [](const std::vector<double>& v) {
            double s = 0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        const double best_a = *std::max_element(a.begin(), a.end()), best_b = *std::max_element(b.begin(), b.end());
        CHECK(std::abs(rows[0].cells[0].delta_mean_pp - 100 * (mean(a) - mean(b))) <= 1e-12);
        CHECK(std::abs(rows[0].cells[0].delta_best_pp - 100 * (best_a - best_b)) <= 1e-12);
        CHECK(std::abs(rows[0].cells[1].delta_mean_pp - 100 * (mean(b) - mean(a))) <= 1e-12);
    }

    TEST_CASE("grid mismatch") {
        const auto method = ledger("H", "T", std::vector<double>(36, 0.5));
        const auto short_base = ledger("None", "T", std::vector<double>(30, 0.5));
        CHECK_THROWS_AS(delta_table(method, short_base), GridMismatch);
        const auto other_target = ledger("None", "U", std::vector<double>(36, 0.5));
        CHECK_THROWS_AS(delta_table(method, other_target), GridMismatch);
    }

    TEST_CASE("size study") {
        const auto base = ledger("None", "T", with_mean_best(0.6, 0.7));
        std::map<std::size_t, std::vector<RunRecord>> by_size{
            {40000, ledger("S40k", "T", with_mean_best(0.66, 0.75))},
            {2000, ledger("S2k", "T", with_mean_best(0.61, 0.70))},
            {10000, ledger("S10k", "T", with_mean_best(0.64, 0.72))}};
        const auto points = size_study(by_size, base);
        REQUIRE(points.size() == 3);
        CHECK(points[0].size == 2000);
        CHECK(points[2].size == 40000);
        const auto rows = delta_table(by_size.at(10000), base);
        CHECK(points[1].delta_best_pp == rows[0].cells[0].delta_best_pp);
        CHECK(points[1].delta_mean_pp == rows[0].cells[0].delta_mean_pp);
        const std::string csv = size_study_csv(points);
        CHECK(count(csv, "\n") == 4);
        CHECK(csv.rfind("size,target,delta_best_pp,delta_mean_pp\n2000,T,", 0) == 0);
        std::map<std::size_t, std::vector<RunRecord>> one{{500, by_size.at(2000)}};
        CHECK(size_study(one, base).size() == 1);
    }
}

TEST_SUITE("kde") {
    TEST_CASE("scott bandwidth") {
        const std::vector<double> v{1, 2, 3, 4};
        const double sd = std::sqrt(5.0 / 3.0);
        CHECK(scott_bandwidth(v) == doctest::Approx(sd * std::pow(4.0, -0.2)).epsilon(1e-12));
    }

    TEST_CASE("density integrates to about one") {
        Rng rng(6);
        std::vector<double> v(36);
        for (auto& x : v) x = 0.5 + 0.1 * rng.normal();
        std::vector<double> grid;
        for (int i = 0; i <= 2000; ++i) grid.push_back(-0.5 + 2.0 * i / 2000);
        const auto d = kde_scott(v, grid);
        double area = 0;
        for (std::size_t i = 1; i < grid.size(); ++i) area += 0.5 * (d[i] + d[i - 1]) * (grid[i] - grid[i - 1]);
        CHECK(area == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_SUITE("reports") {
    ReportInput four_methods() {
        Rng rng(7);
        std::vector<std::vector<RunRecord>> methods;
        for (const char* name : {"HellaSwag", "Synthesis", "CoLA", "Hella-sh"}) {
            std::vector<double> v(36);
            for (auto& x : v) x = 0.3 + 0.5 * rng.uniform();
            methods.push_back(ledger(name, "RTE", v, 0.5));
        }
        std::vector<double> b(36);
        for (auto& x : b) x = 0.5 + 0.2 * rng.uniform();
        const auto base = ledger("None", "RTE", b, 0.5);
        return build_report_input(methods, base);
    }

    TEST_CASE("svg structure: one violin per method, one chance line") {
        ReportInput in = four_methods();
        in.summaries.erase(in.summaries.begin());  // keep the four methods only
        const std::string svg = render_violin_svg("RTE", in.summaries);
        CHECK(count(svg, "class=\"violin\"") == 4);
        CHECK(count(svg, "class=\"chance\"") == 1);
        CHECK(count(svg, "data-stat=\"min\"") == 4);
        CHECK(count(svg, "data-stat=\"mean\"") == 4);
        CHECK(count(svg, "data-stat=\"best\"") == 4);
        CHECK(svg.find(">100</text>") != std::string::npos);
        CHECK(svg.find(">50</text>") != std::string::npos);
        // Chance line at 50 on a 0..100 axis of height 320 starting at y=40.
        CHECK(svg.find("class=\"chance\" x1=\"70.0\" y1=\"200.00\"") != std::string::npos);
    }

    TEST_CASE("report files are deterministic") {
        TempDir dir;
        const ReportInput in = four_methods();
        const auto a = render_report(in, dir / "a");
        const auto b = render_report(in, dir / "b");
        REQUIRE(a.written.size() == 4);
        for (std::size_t i = 0; i < a.written.size(); ++i) {
            CHECK(a.written[i].filename() == b.written[i].filename());
            CHECK(io::read_file(a.written[i]) == io::read_file(b.written[i]));
        }
        const std::string summary = io::read_file(dir / "a" / "summary.csv");
        CHECK(summary.rfind("pair,n,min,mean,best,std,degenerate_count,chance_level\n", 0) == 0);
        CHECK(count(summary, "\n") == 6);
        const std::string deltas = io::read_file(dir / "a" / "deltas.csv");
        CHECK(deltas.rfind("intermediate,target,delta_mean_pp,delta_best_pp\n", 0) == 0);
        CHECK(count(deltas, "\n") == 5);
        const auto svg = io::read_file(dir / "a" / "violins_RTE.svg");
        CHECK(count(svg, "class=\"violin\"") == 5);
        const auto report = nlohmann::json::parse(io::read_file(dir / "a" / "report.json"));
        CHECK(report.at("summaries").size() == 5);
        CHECK(report.at("deltas").size() == 4);
    }

    TEST_CASE("empty report") {
        TempDir dir;
        const auto files = render_report(ReportInput{}, dir / "empty");
        CHECK(files.written.size() == 3);
        CHECK(io::read_file(dir / "empty" / "summary.csv") == "pair,n,min,mean,best,std,degenerate_count,chance_level\n");
        const auto report = nlohmann::json::parse(io::read_file(dir / "empty" / "report.json"));
        CHECK(report.at("summaries").empty());
    }

    TEST_CASE("unwritable destination") {
        TempDir dir;
        io::write_file_atomic(dir / "file", "x");
        CHECK_THROWS_AS(render_report(ReportInput{}, dir / "file" / "sub"), IoError);
    }

    TEST_CASE("mcc axis spans negative values") {
        auto recs = ledger("None", "CoLA", {-0.2, 0.1, 0.4}, 0.0);
        for (auto& r : recs) r.metric_name = MetricName::mcc;
        const auto s = violin_summary("None→CoLA", recs);
        const std::string svg = render_violin_svg("CoLA", std::span(&s, 1));
        CHECK(svg.find(">-100</text>") != std::string::npos);
    }
}
