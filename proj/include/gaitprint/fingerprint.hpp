#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gaitprint/signal.hpp"

namespace gaitprint {

struct GridSpec {
    double lo = 0.0;
    double hi = 3.0;
    double width = 0.25;
    std::vector<int> lags{12, 24, 36};

    int bins() const;
    int cells_per_lag() const { return bins() * bins(); }
    int feature_count() const { return cells_per_lag() * static_cast<int>(lags.size()); }
    /// Bin of value v: [lo + k*width, lo + (k+1)*width); values at or above
    /// `hi` land in the top bin, values below `lo` in bin 0.
    int bin_of(double v) const;
    /// `lag{u}_r{i}_c{j}` for every feature, in storage order.
    std::vector<std::string> column_names() const;
    /// Lag duration in seconds at the given sample rate.
    double lag_seconds(int lag, int sample_rate = kDefaultSampleRate) const {
        return static_cast<double>(lag) / sample_rate;
    }
    void validate(int samples_per_second = kDefaultSampleRate) const;

    bool operator==(const GridSpec&) const = default;
};

/// Joint histogram counts for one second. Layout: lag blocks in GridSpec
/// order; within a block, row = bin of the lagged value v(s-u), column = bin
/// of the current value v(s), row-major.
struct SecondFeature {
    std::string participant_id;
    std::int64_t second_index = 0;
    std::vector<std::uint16_t> values;
};

SecondFeature grid_cells_for_second(const VmSecond& second, const GridSpec& grid,
                                    int samples_per_second = kDefaultSampleRate);

/// One row per (participant, second). Participants are kept in first-seen
/// order in `participants`; rows in input order.
struct FeatureMatrix {
    struct RowKey {
        std::uint32_t participant = 0;  // index into participants
        std::int64_t second_index = 0;
        Date date;
    };

    GridSpec grid;
    std::vector<std::string> participants;
    std::vector<RowKey> rows;
    std::vector<std::uint16_t> counts;  // rows.size() x cols(), row-major

    std::size_t cols() const { return static_cast<std::size_t>(grid.feature_count()); }
    std::span<const std::uint16_t> row(std::size_t i) const { return {counts.data() + i * cols(), cols()}; }
    const std::string& participant_of(std::size_t i) const { return participants[rows[i].participant]; }
};

/// Throws DuplicationError if a (participant, second) key repeats.
FeatureMatrix build_feature_matrix(std::span<const VmSecond> seconds, const GridSpec& grid, int workers = 1);

struct FingerprintImage {
    std::string participant_id;
    int bins = 0;
    std::vector<int> lags;
    std::vector<std::vector<double>> cells;  // per lag, bins*bins row-major relative frequencies
};

FingerprintImage fingerprint_image(std::span<const SecondFeature> seconds, const GridSpec& grid);
/// Image over the matrix rows belonging to `participant`.
FingerprintImage fingerprint_image(const FeatureMatrix& matrix, const std::string& participant);

// Feature cache formats.
//
// CSV: header `participant_id,second_index,lag12_r0_c0,...`. Dates are not
// part of the CSV; rows read back carry the epoch date.
//
// Binary (little-endian):
//   magic "GPFC", u8 version (=1),
//   f64 lo, f64 hi, f64 width, u32 n_lags, u32 lag[n_lags],
//   u32 n_participants, then per participant: u16 byte length, bytes,
//   u64 n_rows, then fixed-width rows:
//   u32 participant index, i64 second_index, i32 date (days since epoch),
//   u16 count[feature_count].
void write_feature_csv(std::ostream& out, const FeatureMatrix& m);
FeatureMatrix read_feature_csv(std::istream& in, const GridSpec& grid);
void write_feature_binary(std::ostream& out, const FeatureMatrix& m);
FeatureMatrix read_feature_binary(std::istream& in);

}  // namespace gaitprint
