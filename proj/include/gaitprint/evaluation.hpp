#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gaitprint {

/// Rows are test subjects, columns candidate models, both indexed by `ids`
/// (ascending). Entry = mean predicted probability over the subject's test
/// seconds.
struct ScoreMatrix {
    std::vector<std::string> ids;
    Eigen::MatrixXd scores;

    std::size_t size() const { return ids.size(); }
};

/// Per subject, candidate indices best first.
using Rankings = std::vector<std::vector<std::uint32_t>>;

/// `probs` has one row per test second and one column per candidate;
/// `row_subject` maps each row to its subject index in `ids`. Throws
/// CompletenessError when a subject has no scored seconds.
ScoreMatrix subject_scores(const Eigen::MatrixXd& probs, std::span<const std::uint32_t> row_subject,
                           std::vector<std::string> ids);

/// Descending score, ties broken by ascending candidate index.
Rankings rankings_from_scores(const ScoreMatrix& m);

/// 1-based position of each subject's own candidate.
std::vector<std::size_t> true_ranks(const Rankings& rankings);
std::vector<std::size_t> true_ranks(const ScoreMatrix& m);

/// k for a percentage cut: max(1, floor(percent * n / 100)).
std::size_t percent_cutoff(double percent, std::size_t n);

/// Percent of subjects whose true rank is at most k.
double rank_accuracy(std::span<const std::size_t> ranks, std::size_t k);

struct RankReport {
    std::string subgroup;
    std::string paradigm;
    std::string variant;
    std::size_t n = 0;
    double rank1 = 0.0;
    double rank5 = 0.0;
    double rank1pct = 0.0;
    double rank5pct = 0.0;
};

/// Throws ShapeError unless the matrix is square with n >= 2.
RankReport rank_metrics(const ScoreMatrix& m);
RankReport rank_metrics(const Rankings& rankings);

struct Spread {
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct SummaryRow {
    std::string paradigm;
    std::size_t n = 0;
    std::string variant;
    std::size_t subgroups = 0;
    Spread rank1, rank5, rank1pct, rank5pct;
};

Spread spread(std::vector<double> values);

/// One row per (paradigm, n, variant), in sorted key order.
std::vector<SummaryRow> subgroup_summary(std::span<const RankReport> reports);

/// `subject_id,candidate_id,score`
void write_scores_csv(std::ostream& out, const ScoreMatrix& m);
ScoreMatrix read_scores_csv(std::istream& in);

/// Accuracy-vs-n table: `paradigm,variant,n,subgroups,metric,median,min,max`.
void write_accuracy_table(std::ostream& out, std::span<const SummaryRow> rows);
/// Line chart of median accuracies against n, one polyline per metric.
void write_accuracy_svg(std::ostream& out, std::span<const SummaryRow> rows);

/// Heatmap of a bins x bins relative-frequency image. Row 0 is drawn at the
/// bottom so the image reads like the acceleration grid.
void write_heatmap_pgm(std::ostream& out, std::span<const double> cells, int bins);
void write_heatmap_svg(std::ostream& out, std::span<const std::vector<double>> per_lag, int bins,
                       std::span<const int> lags, const std::string& title);

}  // namespace gaitprint
