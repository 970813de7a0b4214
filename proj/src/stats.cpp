#include "stilt/stats.hpp"

#include "stilt/error.hpp"
#include "stilt/io.hpp"

#include <fmt/core.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace stilt {

namespace {

void check_lengths(std::span<const int> predictions, std::span<const int> golds) {
    if (predictions.size() != golds.size()) {
        throw std::invalid_argument(fmt::format("{} predictions vs {} golds", predictions.size(), golds.size()));
    }
    if (predictions.empty()) throw EmptyInput("no predictions to score");
}

}  // namespace

double accuracy(std::span<const int> predictions, std::span<const int> golds) {
    check_lengths(predictions, golds);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == golds[i];
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

BinaryConfusion confusion(std::span<const int> predictions, std::span<const int> golds) {
    check_lengths(predictions, golds);
    BinaryConfusion c;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i];
        const int g = golds[i];
        if ((p != 0 && p != 1) || (g != 0 && g != 1)) {
            throw NonBinaryLabels(fmt::format("index {}: prediction {}, gold {}", i, p, g));
        }
        if (p == 1 && g == 1) ++c.tp;
        else if (p == 0 && g == 0) ++c.tn;
        else if (p == 1) ++c.fp;
        else ++c.fn;
    }
    return c;
}

double mcc(const BinaryConfusion& c) {
    const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
    const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

double mcc(std::span<const int> predictions, std::span<const int> golds) { return mcc(confusion(predictions, golds)); }

// ---------------------------------------------------------------------------

double degenerate_threshold(MetricName metric, std::size_t num_options, double majority_frequency, double epsilon) {
    if (metric == MetricName::mcc) return epsilon;
    const double chance = num_options > 0 ? 1.0 / static_cast<double>(num_options) : 0.0;
    return std::max(majority_frequency, chance) + epsilon;
}

double degenerate_threshold(const McDataset& dev, double epsilon) {
    return degenerate_threshold(dev.metric_name, dev.num_options, majority_label_frequency(dev), epsilon);
}

ViolinSummary violin_summary(std::string label, std::span<const RunRecord> records, double chance_level,
                             double threshold) {
    if (records.empty()) throw EmptyInput("violin summary needs at least one record");
    const MetricName metric = records.front().metric_name;
    ViolinSummary s;
    s.label = std::move(label);
    s.n = records.size();
    s.chance_level = chance_level;
    for (const auto& r : records) {
        if (r.metric_name != metric) throw MixedMetrics("records mix " + std::string(to_string(metric)) + " and " +
                                                        std::string(to_string(r.metric_name)));
        s.values.push_back(r.status == RunStatus::ok ? r.dev_metric : chance_level);
    }
    const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
    s.min = *lo;
    s.best = *hi;
    double sum = 0.0;
    for (double v : s.values) sum += v;
    s.mean = std::clamp(sum / static_cast<double>(s.n), s.min, s.best);
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n));
    s.degenerate_count = static_cast<std::size_t>(
        std::count_if(s.values.begin(), s.values.end(), [&](double v) { return v <= threshold; }));
    return s;
}

ViolinSummary violin_summary(std::string label, std::span<const RunRecord> records, double epsilon) {
    if (records.empty()) throw EmptyInput("violin summary needs at least one record");
    const auto& r0 = records.front();
    const double threshold = r0.metric_name == MetricName::mcc
                                 ? epsilon
                                 : std::max(r0.majority_frequency, r0.chance_level) + epsilon;
    return violin_summary(std::move(label), records, r0.chance_level, threshold);
}

// ---------------------------------------------------------------------------
// Deltas

namespace {

long rounded_tenths(double pp) { return std::lround(pp * 10.0); }

std::set<std::string> grid_of(std::span<const RunRecord> records) {
    std::set<std::string> g;
    for (const auto& r : records) g.insert(canonical_string(r.hyperparams));
    return g;
}

std::map<std::string, std::vector<RunRecord>> by_target(std::span<const RunRecord> records) {
    std::map<std::string, std::vector<RunRecord>> out;
    for (const auto& r : records) out[r.target].push_back(r);
    return out;
}

}  // namespace

bool DeltaCell::mean_negative() const { return rounded_tenths(delta_mean_pp) < 0; }
bool DeltaCell::best_negative() const { return rounded_tenths(delta_best_pp) < 0; }

std::string format_delta(double pp) {
    const long tenths = rounded_tenths(pp);
    if (tenths == 0) return "±0.0";
    const long mag = std::labs(tenths);
    return fmt::format("{}{}.{}", tenths > 0 ? "+" : "−", mag / 10, mag % 10);
}

std::string format_delta_cell(double delta_mean_pp, double delta_best_pp) {
    return format_delta(delta_mean_pp) + " / " + format_delta(delta_best_pp);
}

std::map<std::pair<std::string, std::string>, std::vector<RunRecord>> group_by_pair(std::span<const RunRecord> records) {
    std::map<std::pair<std::string, std::string>, std::vector<RunRecord>> out;
    for (const auto& r : records) out[{r.intermediate, r.target}].push_back(r);
    return out;
}

std::vector<DeltaRow> delta_table(std::span<const RunRecord> method_records, std::span<const RunRecord> baseline_records) {
    const auto baseline = by_target(baseline_records);
    std::vector<DeltaRow> rows;
    for (const auto& [pair, recs] : group_by_pair(method_records)) {
        const auto& [intermediate, target] = pair;
        auto it = baseline.find(target);
        if (it == baseline.end()) throw GridMismatch("baseline ledger has no runs for target '" + target + "'");
        if (grid_of(recs) != grid_of(it->second)) {
            throw GridMismatch(fmt::format("grid of {}→{} ({} configs) differs from baseline ({} configs)", intermediate,
                                           target, grid_of(recs).size(), grid_of(it->second).size()));
        }
        const auto method = violin_summary(intermediate, recs);
        const auto base = violin_summary("None", it->second);
        if (rows.empty() || rows.back().intermediate != intermediate) rows.push_back({intermediate, {}});
        rows.back().cells.push_back({target, 100.0 * (method.mean - base.mean), 100.0 * (method.best - base.best)});
    }
    return rows;
}

std::vector<SizePoint> size_study(const std::map<std::size_t, std::vector<RunRecord>>& by_size,
                                  std::span<const RunRecord> baseline_records) {
    std::vector<SizePoint> out;
    for (const auto& [size, records] : by_size) {
        for (const auto& row : delta_table(records, baseline_records)) {
            for (const auto& cell : row.cells) out.push_back({size, cell.target, cell.delta_best_pp, cell.delta_mean_pp});
        }
    }
    return out;
}

std::string size_study_csv(std::span<const SizePoint> points) {
    std::string out = "size,target,delta_best_pp,delta_mean_pp\n";
    for (const auto& p : points) out += fmt::format("{},{},{:.6f},{:.6f}\n", p.size, p.target, p.delta_best_pp, p.delta_mean_pp);
    return out;
}

// ---------------------------------------------------------------------------
// KDE and report rendering

double scott_bandwidth(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sigma = std::sqrt(ss / static_cast<double>(n - 1));
    return sigma * std::pow(static_cast<double>(n), -0.2);
}

std::vector<double> kde_scott(std::span<const double> values, std::span<const double> grid) {
    std::vector<double> out(grid.size(), 0.0);
    if (values.empty()) return out;
    double h = scott_bandwidth(values);
    if (!(h > 0.0)) h = 1e-3;
    const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = 0.0;
        for (double v : values) {
            const double z = (grid[g] - v) / h;
            s += std::exp(-0.5 * z * z);
        }
        out[g] = norm * s;
    }
    return out;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string file_safe(const std::string& s) {
    std::string out;
    for (unsigned char c : s) out += (std::isalnum(c) || c == '-' || c == '_' || c == '.') ? static_cast<char>(c) : '_';
    return out;
}

std::string method_of(const std::string& label) {
    const auto arrow = label.find("→");
    return arrow == std::string::npos ? label : label.substr(0, arrow);
}

}  // namespace

std::string summary_csv(std::span<const ViolinSummary> summaries) {
    std::string out = "pair,n,min,mean,best,std,degenerate_count,chance_level\n";
    for (const auto& s : summaries) {
        out += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{},{:.6f}\n", csv_field(s.label), s.n, s.min, s.mean, s.best,
                           s.std, s.degenerate_count, s.chance_level);
    }
    return out;
}

std::string delta_csv(std::span<const DeltaRow> rows) {
    std::string out = "intermediate,target,delta_mean_pp,delta_best_pp\n";
    for (const auto& row : rows) {
        for (const auto& c : row.cells) {
            out += fmt::format("{},{},{:.6f},{:.6f}\n", csv_field(row.intermediate), csv_field(c.target), c.delta_mean_pp,
                               c.delta_best_pp);
        }
    }
    return out;
}

std::string render_violin_svg(const std::string& target, std::span<const ViolinSummary> summaries) {
    constexpr double slot = 160.0, left = 70.0, top = 40.0, plot_h = 320.0, half_width = 60.0;
    const double width = left + slot * static_cast<double>(std::max<std::size_t>(summaries.size(), 1)) + 20.0;
    const double height = top + plot_h + 60.0;

    bool any_negative = false;
    for (const auto& s : summaries) any_negative = any_negative || s.min < 0.0;
    const double lo = any_negative ? -1.0 : 0.0;
    const double hi = 1.0;
    auto y_of = [&](double v) { return top + plot_h * (hi - std::clamp(v, lo, hi)) / (hi - lo); };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n",
        width, height, width, height);
    svg += fmt::format("<title>{}</title>\n", xml_escape(target));
    svg += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += fmt::format("<line class=\"axis\" x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\"/>\n",
                       left, top, left, top + plot_h);
    const int step = any_negative ? 20 : 10;
    for (int tick = static_cast<int>(lo * 100); tick <= 100; tick += step) {
        const double y = y_of(tick / 100.0);
        svg += fmt::format(
            "<text class=\"tick\" x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n", left - 6,
            y + 4, tick);
    }

    // Chance line at the first summary's chance level.
    if (!summaries.empty()) {
        const double y = y_of(summaries.front().chance_level);
        svg += fmt::format(
            "<line class=\"chance\" x1=\"{:.1f}\" y1=\"{:.2f}\" x2=\"{:.1f}\" y2=\"{:.2f}\" stroke=\"green\" "
            "stroke-dasharray=\"6,4\"/>\n",
            left, y, width - 20.0, y);
    }

    constexpr int kGrid = 64;
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        const auto& s = summaries[i];
        const double cx = left + slot * (static_cast<double>(i) + 0.5);
        std::vector<double> grid(kGrid);
        for (int g = 0; g < kGrid; ++g) grid[g] = s.min + (s.best - s.min) * g / (kGrid - 1);
        const auto density = kde_scott(s.values, grid);
        const double peak = *std::max_element(density.begin(), density.end());
        std::string path;
        for (int g = 0; g < kGrid; ++g) {
            const double w = peak > 0 ? half_width * density[g] / peak : 0.0;
            path += fmt::format("{}{:.2f},{:.2f} ", g == 0 ? "M" : "L", cx - w, y_of(grid[g]));
        }
        for (int g = kGrid - 1; g >= 0; --g) {
            const double w = peak > 0 ? half_width * density[g] / peak : 0.0;
            path += fmt::format("L{:.2f},{:.2f} ", cx + w, y_of(grid[g]));
        }
        path += "Z";
        svg += fmt::format(
            "<path class=\"violin\" d=\"{}\" fill=\"#add8e6\" stroke=\"#4682b4\"/>\n", path);
        for (const auto& [name, v] : {std::pair{"min", s.min}, {"mean", s.mean}, {"best", s.best}}) {
            const double y = y_of(v);
            svg += fmt::format(
                "<line class=\"marker\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#4682b4\"/>\n",
                cx - 12, y, cx + 12, y);
            svg += fmt::format(
                "<text class=\"annot\" data-stat=\"{}\" x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"11\">{:.1f}</text>\n", name,
                cx + 16, y + 4, 100.0 * v);
        }
        svg += fmt::format(
            "<text class=\"label\" x=\"{:.2f}\" y=\"{:.1f}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n", cx,
            top + plot_h + 24, xml_escape(method_of(s.label)));
    }
    svg += "</svg>\n";
    return svg;
}

ReportFiles render_report(const ReportInput& input, const std::filesystem::path& out_dir) {
    ReportFiles files;
    try {
        std::filesystem::create_directories(out_dir);
    } catch (const std::filesystem::filesystem_error& e) {
        throw IoError(e.what());
    }
    auto emit = [&](const std::string& name, const std::string& body) {
        io::write_file_atomic(out_dir / name, body);
        files.written.push_back(out_dir / name);
    };
    emit("summary.csv", summary_csv(input.summaries));
    emit("deltas.csv", delta_csv(input.deltas));
    if (!input.size_points.empty()) emit("size_study.csv", size_study_csv(input.size_points));

    nlohmann::ordered_json j;
    j["summaries"] = nlohmann::ordered_json::array();
    for (const auto& s : input.summaries) {
        nlohmann::ordered_json e;
        e["pair"] = s.label;
        e["n"] = s.n;
        e["min"] = s.min;
        e["mean"] = s.mean;
        e["best"] = s.best;
        e["std"] = s.std;
        e["degenerate_count"] = s.degenerate_count;
        e["chance_level"] = s.chance_level;
        j["summaries"].push_back(std::move(e));
    }
    j["deltas"] = nlohmann::ordered_json::array();
    for (const auto& row : input.deltas) {
        for (const auto& c : row.cells) {
            nlohmann::ordered_json e;
            e["intermediate"] = row.intermediate;
            e["target"] = c.target;
            e["delta_mean_pp"] = c.delta_mean_pp;
            e["delta_best_pp"] = c.delta_best_pp;
            e["cell"] = format_delta_cell(c.delta_mean_pp, c.delta_best_pp);
            e["mean_negative"] = c.mean_negative();
            e["best_negative"] = c.best_negative();
            j["deltas"].push_back(std::move(e));
        }
    }
    j["size_study"] = nlohmann::ordered_json::array();
    for (const auto& p : input.size_points) {
        j["size_study"].push_back({{"size", p.size}, {"target", p.target}, {"delta_best_pp", p.delta_best_pp},
                                   {"delta_mean_pp", p.delta_mean_pp}});
    }
    emit("report.json", j.dump(2) + "\n");

    std::map<std::string, std::vector<ViolinSummary>> per_target;
    for (const auto& s : input.summaries) {
        auto it = input.target_of.find(s.label);
        per_target[it == input.target_of.end() ? s.label : it->second].push_back(s);
    }
    for (const auto& [target, summaries] : per_target) {
        emit("violins_" + file_safe(target) + ".svg", render_violin_svg(target, summaries));
    }
    return files;
}

ReportInput build_report_input(std::span<const std::vector<RunRecord>> method_ledgers,
                               std::span<const RunRecord> baseline, double epsilon) {
    ReportInput in;
    auto add = [&](std::span<const RunRecord> records) {
        for (const auto& [pair, recs] : group_by_pair(records)) {
            auto s = violin_summary(pair.first + "→" + pair.second, recs, epsilon);
            in.target_of[s.label] = pair.second;
            in.summaries.push_back(std::move(s));
        }
    };
    add(baseline);
    std::vector<RunRecord> all_methods;
    for (const auto& ledger : method_ledgers) {
        add(ledger);
        all_methods.insert(all_methods.end(), ledger.begin(), ledger.end());
    }
    if (!baseline.empty() && !all_methods.empty()) in.deltas = delta_table(all_methods, baseline);
    return in;
}

}  // namespace stilt
