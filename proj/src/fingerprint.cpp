#include "gaitprint/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "gaitprint/binio.hpp"
#include "gaitprint/csv.hpp"
#include "gaitprint/errors.hpp"
#include "gaitprint/parallel.hpp"

namespace gaitprint {

int GridSpec::bins() const {
    return static_cast<int>(std::lround((hi - lo) / width));
}

int GridSpec::bin_of(double v) const {
    const int n = bins();
    if (v >= hi) return n - 1;
    if (v < lo) return 0;
    int k = static_cast<int>(std::floor((v - lo) / width));
    return std::clamp(k, 0, n - 1);
}

std::vector<std::string> GridSpec::column_names() const {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(feature_count()));
    const int n = bins();
    for (int lag : lags) {
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) names.push_back(fmt::format("lag{}_r{}_c{}", lag, r, c));
        }
    }
    return names;
}

void GridSpec::validate(int samples_per_second) const {
    if (!(width > 0.0) || !(hi > lo)) throw ConfigError("grid requires hi > lo and width > 0");
    double ratio = (hi - lo) / width;
    if (std::abs(ratio - std::round(ratio)) > 1e-9) throw ConfigError("grid range must be a multiple of width");
    if (lags.empty()) throw ConfigError("grid needs at least one lag");
    for (int lag : lags) {
        if (lag <= 0 || lag >= samples_per_second) {
            throw ConfigError(fmt::format("lag {} outside [1, {})", lag, samples_per_second));
        }
    }
    if (feature_count() <= 0) throw ConfigError("grid has no cells");
}

namespace {

void fill_counts(std::span<const double> v, const GridSpec& grid, std::span<std::uint16_t> out) {
    const int n = grid.bins();
    std::vector<int> bin(v.size());
    for (std::size_t s = 0; s < v.size(); ++s) bin[s] = grid.bin_of(v[s]);
    std::fill(out.begin(), out.end(), 0);
    std::size_t block = 0;
    for (int lag : grid.lags) {
        std::uint16_t* cells = out.data() + block;
        for (std::size_t s = static_cast<std::size_t>(lag); s < v.size(); ++s) {
            cells[bin[s - lag] * n + bin[s]] += 1;
        }
        block += static_cast<std::size_t>(n * n);
    }
}

}  // namespace

SecondFeature grid_cells_for_second(const VmSecond& second, const GridSpec& grid, int samples_per_second) {
    if (second.values.size() != static_cast<std::size_t>(samples_per_second)) {
        throw ShapeError(fmt::format("second {} of {} has {} samples, expected {}", second.second_index,
                                     second.participant_id, second.values.size(), samples_per_second));
    }
    SecondFeature f{second.participant_id, second.second_index,
                    std::vector<std::uint16_t>(static_cast<std::size_t>(grid.feature_count()))};
    fill_counts(second.values, grid, f.values);
    return f;
}

FeatureMatrix build_feature_matrix(std::span<const VmSecond> seconds, const GridSpec& grid, int workers) {
    grid.validate();
    FeatureMatrix m;
    m.grid = grid;
    std::unordered_map<std::string, std::uint32_t> index;
    std::set<std::pair<std::uint32_t, std::int64_t>> seen;
    m.rows.reserve(seconds.size());
    for (const auto& s : seconds) {
        auto [it, inserted] = index.try_emplace(s.participant_id, static_cast<std::uint32_t>(m.participants.size()));
        if (inserted) m.participants.push_back(s.participant_id);
        if (!seen.emplace(it->second, s.second_index).second) {
            throw DuplicationError(fmt::format("duplicate feature row for {} second {}", s.participant_id,
                                               s.second_index));
        }
        if (s.values.size() != static_cast<std::size_t>(kDefaultSampleRate)) {
            throw ShapeError(fmt::format("second {} of {} has {} samples", s.second_index, s.participant_id,
                                         s.values.size()));
        }
        m.rows.push_back({it->second, s.second_index, s.date});
    }
    const std::size_t cols = m.cols();
    m.counts.assign(m.rows.size() * cols, 0);
    parallel_for(seconds.size(), workers, [&](std::size_t i) {
        fill_counts(seconds[i].values, grid, std::span<std::uint16_t>(m.counts.data() + i * cols, cols));
    });
    return m;
}

namespace {

FingerprintImage normalize(std::string participant, const GridSpec& grid, const std::vector<double>& sums) {
    FingerprintImage img;
    img.participant_id = std::move(participant);
    img.bins = grid.bins();
    img.lags = grid.lags;
    const std::size_t per_lag = static_cast<std::size_t>(grid.cells_per_lag());
    for (std::size_t l = 0; l < grid.lags.size(); ++l) {
        std::vector<double> cells(sums.begin() + static_cast<std::ptrdiff_t>(l * per_lag),
                                  sums.begin() + static_cast<std::ptrdiff_t>((l + 1) * per_lag));
        double total = 0.0;
        for (double c : cells) total += c;
        if (total > 0.0) {
            for (double& c : cells) c /= total;
        }
        img.cells.push_back(std::move(cells));
    }
    return img;
}

}  // namespace

FingerprintImage fingerprint_image(std::span<const SecondFeature> seconds, const GridSpec& grid) {
    if (seconds.empty()) throw EmptyInputError("fingerprint_image needs at least one second");
    std::vector<double> sums(static_cast<std::size_t>(grid.feature_count()), 0.0);
    for (const auto& s : seconds) {
        if (s.values.size() != sums.size()) throw ShapeError("feature length does not match grid");
        for (std::size_t j = 0; j < sums.size(); ++j) sums[j] += s.values[j];
    }
    return normalize(seconds.front().participant_id, grid, sums);
}

FingerprintImage fingerprint_image(const FeatureMatrix& matrix, const std::string& participant) {
    std::vector<double> sums(matrix.cols(), 0.0);
    bool any = false;
    for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
        if (matrix.participant_of(i) != participant) continue;
        any = true;
        auto r = matrix.row(i);
        for (std::size_t j = 0; j < sums.size(); ++j) sums[j] += r[j];
    }
    if (!any) throw EmptyInputError("no feature rows for participant " + participant);
    return normalize(participant, matrix.grid, sums);
}

void write_feature_csv(std::ostream& out, const FeatureMatrix& m) {
    out << "participant_id,second_index";
    for (const auto& name : m.grid.column_names()) out << ',' << name;
    out << '\n';
    fmt::memory_buffer buf;
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        buf.clear();
        fmt::format_to(std::back_inserter(buf), "{},{}", m.participant_of(i), m.rows[i].second_index);
        for (auto c : m.row(i)) fmt::format_to(std::back_inserter(buf), ",{}", c);
        buf.push_back('\n');
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

FeatureMatrix read_feature_csv(std::istream& in, const GridSpec& grid) {
    FeatureMatrix m;
    m.grid = grid;
    std::string line;
    if (!std::getline(in, line)) throw EmptyInputError("feature CSV is empty");
    std::string header = "participant_id,second_index";
    for (const auto& name : grid.column_names()) header += "," + name;
    csv::expect_header(line, header);
    std::unordered_map<std::string, std::uint32_t> index;
    const std::size_t cols = m.cols();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split(line);
        if (f.size() != cols + 2) throw ParseError(line_no, "wrong field count");
        std::string id(csv::trim(f[0]));
        auto [it, inserted] = index.try_emplace(id, static_cast<std::uint32_t>(m.participants.size()));
        if (inserted) m.participants.push_back(id);
        m.rows.push_back({it->second, csv::parse_number<std::int64_t>(f[1], line_no, "second_index"), Date{}});
        for (std::size_t j = 0; j < cols; ++j) {
            m.counts.push_back(csv::parse_number<std::uint16_t>(f[j + 2], line_no, "count"));
        }
    }
    return m;
}

void write_feature_binary(std::ostream& out, const FeatureMatrix& m) {
    binio::put_magic(out, "GPFC", 1);
    binio::put<double>(out, m.grid.lo);
    binio::put<double>(out, m.grid.hi);
    binio::put<double>(out, m.grid.width);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.grid.lags.size()));
    for (int lag : m.grid.lags) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(lag));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.participants.size()));
    for (const auto& p : m.participants) binio::put_string16(out, p);
    binio::put<std::uint64_t>(out, m.rows.size());
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        binio::put<std::uint32_t>(out, m.rows[i].participant);
        binio::put<std::int64_t>(out, m.rows[i].second_index);
        binio::put<std::int32_t>(out, m.rows[i].date.days);
        auto r = m.row(i);
        out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size_bytes()));
    }
}

FeatureMatrix read_feature_binary(std::istream& in) {
    binio::expect_magic(in, "GPFC", 1);
    FeatureMatrix m;
    m.grid.lo = binio::get<double>(in);
    m.grid.hi = binio::get<double>(in);
    m.grid.width = binio::get<double>(in);
    auto n_lags = binio::get<std::uint32_t>(in);
    m.grid.lags.clear();
    for (std::uint32_t l = 0; l < n_lags; ++l) m.grid.lags.push_back(static_cast<int>(binio::get<std::uint32_t>(in)));
    m.grid.validate();
    auto n_participants = binio::get<std::uint32_t>(in);
    for (std::uint32_t p = 0; p < n_participants; ++p) m.participants.push_back(binio::get_string16(in));
    auto n_rows = binio::get<std::uint64_t>(in);
    const std::size_t cols = m.cols();
    m.rows.resize(n_rows);
    m.counts.resize(n_rows * cols);
    for (std::uint64_t i = 0; i < n_rows; ++i) {
        m.rows[i].participant = binio::get<std::uint32_t>(in);
        if (m.rows[i].participant >= n_participants) throw DataError("feature row references unknown participant");
        m.rows[i].second_index = binio::get<std::int64_t>(in);
        m.rows[i].date.days = binio::get<std::int32_t>(in);
        if (!in.read(reinterpret_cast<char*>(m.counts.data() + i * cols),
                     static_cast<std::streamsize>(cols * sizeof(std::uint16_t)))) {
            throw DataError("feature cache truncated");
        }
    }
    return m;
}

}  // namespace gaitprint
