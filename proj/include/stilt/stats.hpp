#pragma once

#include "stilt/datasets.hpp"
#include "stilt/ledger.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace stilt {

/// Fraction of exactly matching labels. Throws EmptyInput for empty input
/// and std::invalid_argument for mismatched lengths.
double accuracy(std::span<const int> predictions, std::span<const int> golds);

struct BinaryConfusion {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Labels must be 0/1 (NonBinaryLabels otherwise); 1 is the positive class.
BinaryConfusion confusion(std::span<const int> predictions, std::span<const int> golds);

/// Matthews correlation; 0 when any marginal is empty.
double mcc(const BinaryConfusion& c);
double mcc(std::span<const int> predictions, std::span<const int> golds);

// ---------------------------------------------------------------------------
// Stability analytics

struct ViolinSummary {
    std::string label;
    std::size_t n = 0;
    double min = 0.0;
    double mean = 0.0;
    double best = 0.0;
    double std = 0.0;  // population standard deviation
    std::size_t degenerate_count = 0;
    double chance_level = 0.0;
    std::vector<double> values;  // per-run metric after imputing failed runs
};

inline constexpr double kDegenerateEpsilon = 0.02;

/// max(majority frequency, 1/num_options) + epsilon for accuracy tasks,
/// epsilon for MCC tasks.
double degenerate_threshold(MetricName metric, std::size_t num_options, double majority_frequency,
                            double epsilon = kDegenerateEpsilon);
double degenerate_threshold(const McDataset& dev, double epsilon = kDegenerateEpsilon);

/// Failed runs count as chance_level. Throws EmptyInput or MixedMetrics.
ViolinSummary violin_summary(std::string label, std::span<const RunRecord> records, double chance_level,
                             double threshold);

/// Uses the chance level and dev-set majority stored in the records.
ViolinSummary violin_summary(std::string label, std::span<const RunRecord> records,
                             double epsilon = kDegenerateEpsilon);

struct DeltaCell {
    std::string target;
    double delta_mean_pp = 0.0;
    double delta_best_pp = 0.0;

    bool mean_negative() const;
    bool best_negative() const;
};

struct DeltaRow {
    std::string intermediate;
    std::vector<DeltaCell> cells;
};

/// "+3.9", "−0.3" (U+2212), "±0.0" after rounding to one decimal.
std::string format_delta(double pp);
/// "<mean> / <best>".
std::string format_delta_cell(double delta_mean_pp, double delta_best_pp);

/// Records grouped by (intermediate, target), sorted by pair.
std::map<std::pair<std::string, std::string>, std::vector<RunRecord>> group_by_pair(std::span<const RunRecord> records);

/// Per (intermediate, target): 100 * (method - baseline) for mean and best.
/// Throws GridMismatch unless each method grid equals the baseline grid.
std::vector<DeltaRow> delta_table(std::span<const RunRecord> method_records, std::span<const RunRecord> baseline_records);

struct SizePoint {
    std::size_t size = 0;
    std::string target;
    double delta_best_pp = 0.0;
    double delta_mean_pp = 0.0;
};

/// Ledgers keyed by intermediate training size, compared with the None ledger.
std::vector<SizePoint> size_study(const std::map<std::size_t, std::vector<RunRecord>>& by_size,
                                  std::span<const RunRecord> baseline_records);

std::string size_study_csv(std::span<const SizePoint> points);

// ---------------------------------------------------------------------------
// Reports

/// Gaussian KDE with Scott's bandwidth sigma * n^(-1/5), evaluated on grid.
std::vector<double> kde_scott(std::span<const double> values, std::span<const double> grid);
double scott_bandwidth(std::span<const double> values);

struct ReportInput {
    std::vector<ViolinSummary> summaries;   // label is "<intermediate>→<target>"
    std::map<std::string, std::string> target_of;  // summary label → target name
    std::vector<DeltaRow> deltas;
    std::vector<SizePoint> size_points;
};

struct ReportFiles {
    std::vector<std::filesystem::path> written;
};

std::string summary_csv(std::span<const ViolinSummary> summaries);
std::string delta_csv(std::span<const DeltaRow> rows);
std::string render_violin_svg(const std::string& target, std::span<const ViolinSummary> summaries);

/// Writes summary.csv, deltas.csv, report.json, size_study.csv (when size
/// points exist) and violins_<target>.svg per target. Output is a pure
/// function of the input.
ReportFiles render_report(const ReportInput& input, const std::filesystem::path& out_dir);

/// Builds summaries and deltas from ledgers and writes the report.
ReportInput build_report_input(std::span<const std::vector<RunRecord>> method_ledgers,
                               std::span<const RunRecord> baseline, double epsilon = kDegenerateEpsilon);

}  // namespace stilt
