#include "gaitprint/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include <fmt/format.h>

#include "gaitprint/csv.hpp"
#include "gaitprint/errors.hpp"

namespace gaitprint {

ScoreMatrix subject_scores(const Eigen::MatrixXd& probs, std::span<const std::uint32_t> row_subject,
                           std::vector<std::string> ids) {
    const auto n = static_cast<Eigen::Index>(ids.size());
    if (probs.cols() != n) throw ShapeError(fmt::format("{} candidate columns for {} ids", probs.cols(), n));
    if (static_cast<std::size_t>(probs.rows()) != row_subject.size()) {
        throw ShapeError("probability rows and subject labels differ in length");
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n, n);
    std::vector<std::size_t> counts(ids.size(), 0);
    for (std::size_t r = 0; r < row_subject.size(); ++r) {
        const std::uint32_t s = row_subject[r];
        if (s >= ids.size()) throw ShapeError("row subject index out of range");
        sums.row(s) += probs.row(static_cast<Eigen::Index>(r));
        ++counts[s];
    }
    for (std::size_t s = 0; s < ids.size(); ++s) {
        if (counts[s] == 0) throw CompletenessError("subject " + ids[s] + " has no scored test seconds");
        sums.row(static_cast<Eigen::Index>(s)) /= static_cast<double>(counts[s]);
    }
    return ScoreMatrix{std::move(ids), std::move(sums)};
}

Rankings rankings_from_scores(const ScoreMatrix& m) {
    const std::size_t n = m.size();
    if (static_cast<std::size_t>(m.scores.rows()) != n || static_cast<std::size_t>(m.scores.cols()) != n) {
        throw ShapeError(fmt::format("score matrix is {}x{} for {} ids", m.scores.rows(), m.scores.cols(), n));
    }
    Rankings out(n);
    for (std::size_t s = 0; s < n; ++s) {
        auto& order = out[s];
        order.resize(n);
        std::iota(order.begin(), order.end(), 0U);
        const auto row = m.scores.row(static_cast<Eigen::Index>(s));
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b]; });
    }
    return out;
}

std::vector<std::size_t> true_ranks(const Rankings& rankings) {
    std::vector<std::size_t> ranks;
    ranks.reserve(rankings.size());
    for (std::size_t s = 0; s < rankings.size(); ++s) {
        auto it = std::find(rankings[s].begin(), rankings[s].end(), static_cast<std::uint32_t>(s));
        if (it == rankings[s].end()) throw CompletenessError(fmt::format("subject {} missing from its ranking", s));
        ranks.push_back(static_cast<std::size_t>(it - rankings[s].begin()) + 1);
    }
    return ranks;
}

std::vector<std::size_t> true_ranks(const ScoreMatrix& m) {
    const std::size_t n = m.size();
    if (static_cast<std::size_t>(m.scores.rows()) != n || static_cast<std::size_t>(m.scores.cols()) != n) {
        throw ShapeError("score matrix must be square over its ids");
    }
    std::vector<std::size_t> ranks(n);
    for (std::size_t s = 0; s < n; ++s) {
        const double own = m.scores(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
        std::size_t ahead = 0;
        for (std::size_t c = 0; c < n; ++c) {
            const double v = m.scores(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c));
            if (v > own || (v == own && c < s)) ++ahead;
        }
        ranks[s] = ahead + 1;
    }
    return ranks;
}

std::size_t percent_cutoff(double percent, std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(percent * static_cast<double>(n) / 100.0)));
}

double rank_accuracy(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) return 0.0;
    std::size_t hits = 0;
    for (auto r : ranks) hits += r <= k ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

namespace {

RankReport report_from_ranks(const std::vector<std::size_t>& ranks) {
    const std::size_t n = ranks.size();
    if (n < 2) throw ShapeError("rank metrics need at least two subjects");
    RankReport r;
    r.n = n;
    r.rank1 = rank_accuracy(ranks, 1);
    r.rank5 = rank_accuracy(ranks, 5);
    r.rank1pct = rank_accuracy(ranks, percent_cutoff(1.0, n));
    r.rank5pct = rank_accuracy(ranks, percent_cutoff(5.0, n));
    return r;
}

}  // namespace

RankReport rank_metrics(const ScoreMatrix& m) {
    return report_from_ranks(true_ranks(m));
}

RankReport rank_metrics(const Rankings& rankings) {
    for (const auto& r : rankings) {
        if (r.size() != rankings.size()) throw ShapeError("each ranking must cover every candidate");
    }
    return report_from_ranks(true_ranks(rankings));
}

Spread spread(std::vector<double> values) {
    if (values.empty()) throw EmptyInputError("spread of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    double median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    return {median, values.front(), values.back()};
}

std::vector<SummaryRow> subgroup_summary(std::span<const RankReport> reports) {
    std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<const RankReport*>> groups;
    for (const auto& r : reports) groups[{r.paradigm, r.n, r.variant}].push_back(&r);
    std::vector<SummaryRow> out;
    for (const auto& [key, members] : groups) {
        SummaryRow row;
        std::tie(row.paradigm, row.n, row.variant) = key;
        row.subgroups = members.size();
        auto collect = [&](double RankReport::*field) {
            std::vector<double> v;
            for (const auto* m : members) v.push_back(m->*field);
            return spread(std::move(v));
        };
        row.rank1 = collect(&RankReport::rank1);
        row.rank5 = collect(&RankReport::rank5);
        row.rank1pct = collect(&RankReport::rank1pct);
        row.rank5pct = collect(&RankReport::rank5pct);
        out.push_back(std::move(row));
    }
    return out;
}

void write_scores_csv(std::ostream& out, const ScoreMatrix& m) {
    out << "subject_id,candidate_id,score\n";
    for (std::size_t s = 0; s < m.size(); ++s) {
        for (std::size_t c = 0; c < m.size(); ++c) {
            out << fmt::format("{},{},{}\n", m.ids[s], m.ids[c],
                               m.scores(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c)));
        }
    }
}

ScoreMatrix read_scores_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw EmptyInputError("scores CSV is empty");
    csv::expect_header(line, "subject_id,candidate_id,score");
    std::map<std::pair<std::string, std::string>, double> entries;
    std::map<std::string, std::size_t> ids;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split(line);
        if (f.size() != 3) throw ParseError(line_no, "expected 3 fields");
        std::string s(csv::trim(f[0])), c(csv::trim(f[1]));
        ids.emplace(s, 0);
        ids.emplace(c, 0);
        if (!entries.emplace(std::pair{s, c}, csv::parse_number<double>(f[2], line_no, "score")).second) {
            throw DuplicationError(fmt::format("line {}: duplicate score for {} / {}", line_no, s, c));
        }
    }
    ScoreMatrix m;
    for (auto& [id, idx] : ids) {
        idx = m.ids.size();
        m.ids.push_back(id);
    }
    const auto n = static_cast<Eigen::Index>(m.ids.size());
    if (entries.size() != static_cast<std::size_t>(n * n)) throw CompletenessError("scores CSV is not a full square");
    m.scores.resize(n, n);
    for (const auto& [key, v] : entries) {
        m.scores(static_cast<Eigen::Index>(ids[key.first]), static_cast<Eigen::Index>(ids[key.second])) = v;
    }
    return m;
}

void write_accuracy_table(std::ostream& out, std::span<const SummaryRow> rows) {
    out << "paradigm,variant,n,subgroups,metric,median,min,max\n";
    for (const auto& r : rows) {
        const std::pair<const char*, const Spread*> metrics[] = {
            {"rank1", &r.rank1}, {"rank5", &r.rank5}, {"rank1pct", &r.rank1pct}, {"rank5pct", &r.rank5pct}};
        for (const auto& [name, s] : metrics) {
            out << fmt::format("{},{},{},{},{},{},{},{}\n", r.paradigm, r.variant, r.n, r.subgroups, name, s->median,
                               s->min, s->max);
        }
    }
}

void write_accuracy_svg(std::ostream& out, std::span<const SummaryRow> rows) {
    constexpr double W = 640, H = 400, L = 60, R = 160, T = 30, B = 50;
    std::vector<SummaryRow> sorted(rows.begin(), rows.end());
    std::sort(sorted.begin(), sorted.end(), [](const SummaryRow& a, const SummaryRow& b) {
        return std::tie(a.paradigm, a.variant, a.n) < std::tie(b.paradigm, b.variant, b.n);
    });
    double nmin = 1, nmax = 10;
    if (!sorted.empty()) {
        nmin = static_cast<double>(sorted.front().n);
        nmax = nmin;
        for (const auto& r : sorted) {
            nmin = std::min(nmin, static_cast<double>(r.n));
            nmax = std::max(nmax, static_cast<double>(r.n));
        }
    }
    const double lmin = std::log10(std::max(1.0, nmin));
    const double lmax = std::max(lmin + 1e-9, std::log10(std::max(1.0, nmax)));
    auto px = [&](double n) {
        return sorted.size() <= 1 || lmax - lmin < 1e-6 ? L + (W - L - R) / 2
                                                         : L + (std::log10(n) - lmin) / (lmax - lmin) * (W - L - R);
    };
    auto py = [&](double acc) { return T + (100.0 - acc) / 100.0 * (H - T - B); };

    out << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n", W, H);
    out << fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", L, T,
                       W - L - R, H - T - B);
    for (int a = 0; a <= 100; a += 25) {
        out << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n", L - 6,
                           py(a) + 4, a);
    }
    out << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">subgroup size n (log scale)</text>\n",
                       (W - R + L) / 2, H - 12);
    const char* colours[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a"};
    const char* names[] = {"rank 1", "rank 5", "rank 1%", "rank 5%"};
    const Spread SummaryRow::*fields[] = {&SummaryRow::rank1, &SummaryRow::rank5, &SummaryRow::rank1pct,
                                          &SummaryRow::rank5pct};
    std::map<std::pair<std::string, std::string>, std::vector<const SummaryRow*>> series;
    for (const auto& r : sorted) series[{r.paradigm, r.variant}].push_back(&r);
    int legend = 0;
    for (const auto& [key, pts] : series) {
        for (int m = 0; m < 4; ++m) {
            std::string path;
            for (const auto* p : pts) {
                path += fmt::format("{:.2f},{:.2f} ", px(static_cast<double>(p->n)), py((p->*fields[m]).median));
            }
            const char* dash = key.first == "temporal" ? " stroke-dasharray=\"5,3\"" : "";
            out << fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{}/>\n", path,
                               colours[m], dash);
            out << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{}\">{} {} {}</text>\n", W - R + 8,
                               T + 14 * (legend++ + 1), colours[m], key.first, key.second, names[m]);
        }
        for (const auto* p : pts) {
            out << fmt::format("<text x=\"{:.2f}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                               px(static_cast<double>(p->n)), H - B + 16, p->n);
        }
    }
    out << "</svg>\n";
}

void write_heatmap_pgm(std::ostream& out, std::span<const double> cells, int bins) {
    if (cells.size() != static_cast<std::size_t>(bins * bins)) throw ShapeError("heatmap cell count mismatch");
    constexpr int scale = 20;
    const double peak = cells.empty() ? 0.0 : *std::max_element(cells.begin(), cells.end());
    out << "P2\n" << bins * scale << ' ' << bins * scale << "\n255\n";
    for (int py = 0; py < bins * scale; ++py) {
        const int row = bins - 1 - py / scale;
        for (int px = 0; px < bins * scale; ++px) {
            const int col = px / scale;
            double v = peak > 0.0 ? cells[static_cast<std::size_t>(row * bins + col)] / peak : 0.0;
            out << static_cast<int>(std::lround(255.0 * (1.0 - v))) << (px + 1 == bins * scale ? '\n' : ' ');
        }
    }
}

void write_heatmap_svg(std::ostream& out, std::span<const std::vector<double>> per_lag, int bins,
                       std::span<const int> lags, const std::string& title) {
    constexpr int cell = 16, gap = 30, top = 40;
    const int panel = bins * cell;
    const int width = static_cast<int>(per_lag.size()) * (panel + gap) + gap;
    out << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n", width,
                       panel + top + gap);
    out << fmt::format("<text x=\"{}\" y=\"18\" font-size=\"14\">{}</text>\n", gap, title);
    for (std::size_t l = 0; l < per_lag.size(); ++l) {
        const auto& cells = per_lag[l];
        if (cells.size() != static_cast<std::size_t>(bins * bins)) throw ShapeError("heatmap cell count mismatch");
        const double peak = *std::max_element(cells.begin(), cells.end());
        const int x0 = gap + static_cast<int>(l) * (panel + gap);
        out << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\">lag {}</text>\n", x0, top - 6,
                           l < lags.size() ? lags[l] : 0);
        for (int r = 0; r < bins; ++r) {
            for (int c = 0; c < bins; ++c) {
                double v = peak > 0.0 ? cells[static_cast<std::size_t>(r * bins + c)] / peak : 0.0;
                int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
                out << fmt::format(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({},{},255)\"/>\n", x0 + c * cell,
                    top + (bins - 1 - r) * cell, cell, cell, shade, shade);
            }
        }
    }
    out << "</svg>\n";
}

}  // namespace gaitprint
