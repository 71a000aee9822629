#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitprint/segmentation.hpp"
#include "gaitprint/signal.hpp"

namespace gaitprint {

struct DatedSecond {
    std::int64_t second_index = 0;
    Date date;
};

struct Partition {
    std::string participant_id;
    Paradigm paradigm = Paradigm::random;
    std::vector<std::int64_t> train_seconds;
    std::vector<std::int64_t> test_seconds;
    std::optional<Date> train_date;  // temporal only
    std::optional<Date> test_date;   // temporal only
    std::uint64_t seed = 0;          // effective per-participant seed

    bool operator==(const Partition&) const = default;
};

/// Draws thresholds.total seconds without replacement, then assigns the first
/// train_day of the draw order to training and the rest to testing.
/// `seed` is the effective seed (see participant_seed).
Partition random_partition(const std::string& participant_id, std::span<const DatedSecond> valid,
                           std::uint64_t seed, int minutes);

/// Training day: earliest date with at least thresholds.train_day seconds.
/// Test day: uniform among strictly later dates with at least
/// thresholds.test_day seconds. Within-day seconds are sampled uniformly.
Partition temporal_partition(const std::string& participant_id, std::span<const DatedSecond> valid,
                             std::uint64_t seed, int minutes);

Partition make_partition(const std::string& participant_id, std::span<const DatedSecond> valid,
                         std::uint64_t global_seed, Paradigm paradigm, int minutes);

/// Shuffles the ids (sorted first) with the global seed and cuts them into
/// consecutive groups of `size`; the remainder is dropped.
std::vector<std::vector<std::string>> make_subgroups(std::vector<std::string> ids, std::size_t size,
                                                     std::uint64_t global_seed);

/// `participant_id,paradigm,role,second_index,date,seed`
void write_partition_manifest(std::ostream& out, std::span<const Partition> parts,
                              std::span<const std::vector<DatedSecond>> valid, bool header);
/// Reads a manifest back; dates restore train_date/test_date for temporal rows.
std::vector<Partition> read_partition_manifest(std::istream& in);

}  // namespace gaitprint
