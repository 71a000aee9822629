#include "gaitprint/partition.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <unordered_map>

#include <fmt/format.h>

#include "gaitprint/csv.hpp"
#include "gaitprint/errors.hpp"
#include "gaitprint/rng.hpp"

namespace gaitprint {

namespace {

constexpr std::uint64_t kTestDayStream = 0x7465'7374'6461'7900ULL;  // "testday"

// First k entries of a partial Fisher-Yates shuffle.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

std::vector<std::int64_t> sorted_unique_check(std::span<const DatedSecond> valid, const std::string& id) {
    std::vector<std::int64_t> idx;
    idx.reserve(valid.size());
    for (const auto& v : valid) idx.push_back(v.second_index);
    std::sort(idx.begin(), idx.end());
    if (std::adjacent_find(idx.begin(), idx.end()) != idx.end()) {
        throw DuplicationError("duplicate valid second for participant " + id);
    }
    return idx;
}

}  // namespace

Partition random_partition(const std::string& participant_id, std::span<const DatedSecond> valid,
                           std::uint64_t seed, int minutes) {
    const Thresholds th = Thresholds::for_minutes(minutes);
    if (valid.size() < static_cast<std::size_t>(th.total)) {
        throw EligibilityError(fmt::format("participant {} has {} valid seconds, needs {}", participant_id,
                                           valid.size(), th.total));
    }
    Rng rng(seed);
    auto drawn = sample_without_replacement(sorted_unique_check(valid, participant_id),
                                            static_cast<std::size_t>(th.total), rng);
    Partition p;
    p.participant_id = participant_id;
    p.paradigm = Paradigm::random;
    p.seed = seed;
    p.train_seconds.assign(drawn.begin(), drawn.begin() + th.train_day);
    p.test_seconds.assign(drawn.begin() + th.train_day, drawn.end());
    std::sort(p.train_seconds.begin(), p.train_seconds.end());
    std::sort(p.test_seconds.begin(), p.test_seconds.end());
    return p;
}

Partition temporal_partition(const std::string& participant_id, std::span<const DatedSecond> valid,
                             std::uint64_t seed, int minutes) {
    const Thresholds th = Thresholds::for_minutes(minutes);
    sorted_unique_check(valid, participant_id);
    std::map<Date, std::vector<std::int64_t>> by_day;
    for (const auto& v : valid) by_day[v.date].push_back(v.second_index);
    DayCounts counts;
    for (auto& [day, secs] : by_day) {
        std::sort(secs.begin(), secs.end());
        counts[day] = static_cast<int>(secs.size());
    }
    auto train_day = temporal_train_day(counts, minutes);
    if (!train_day) {
        throw EligibilityError(fmt::format("participant {} has no training day with a later test day",
                                           participant_id));
    }
    std::vector<Date> later;
    for (const auto& [day, n] : counts) {
        if (day > *train_day && n >= th.test_day) later.push_back(day);
    }

    Rng rng(seed);
    Rng day_rng(mix_seed(seed, kTestDayStream));
    Date test_day = later[static_cast<std::size_t>(day_rng.below(later.size()))];

    Partition p;
    p.participant_id = participant_id;
    p.paradigm = Paradigm::temporal;
    p.seed = seed;
    p.train_date = *train_day;
    p.test_date = test_day;
    p.train_seconds = sample_without_replacement(by_day[*train_day], static_cast<std::size_t>(th.train_day), rng);
    p.test_seconds = sample_without_replacement(by_day[test_day], static_cast<std::size_t>(th.test_day), rng);
    std::sort(p.train_seconds.begin(), p.train_seconds.end());
    std::sort(p.test_seconds.begin(), p.test_seconds.end());
    return p;
}

Partition make_partition(const std::string& participant_id, std::span<const DatedSecond> valid,
                         std::uint64_t global_seed, Paradigm paradigm, int minutes) {
    const std::uint64_t seed = participant_seed(global_seed, participant_id);
    return paradigm == Paradigm::random ? random_partition(participant_id, valid, seed, minutes)
                                        : temporal_partition(participant_id, valid, seed, minutes);
}

std::vector<std::vector<std::string>> make_subgroups(std::vector<std::string> ids, std::size_t size,
                                                     std::uint64_t global_seed) {
    if (size == 0) throw ConfigError("subgroup size must be positive");
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng(mix_seed(global_seed, fnv1a64("subgroups")));
    rng.shuffle(std::span<std::string>(ids));
    std::vector<std::vector<std::string>> groups;
    for (std::size_t start = 0; start + size <= ids.size(); start += size) {
        std::vector<std::string> g(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                   ids.begin() + static_cast<std::ptrdiff_t>(start + size));
        std::sort(g.begin(), g.end());
        groups.push_back(std::move(g));
    }
    return groups;
}

void write_partition_manifest(std::ostream& out, std::span<const Partition> parts,
                              std::span<const std::vector<DatedSecond>> valid, bool header) {
    if (header) out << "participant_id,paradigm,role,second_index,date,seed\n";
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Partition& p = parts[i];
        std::unordered_map<std::int64_t, Date> dates;
        if (i < valid.size()) {
            for (const auto& v : valid[i]) dates[v.second_index] = v.date;
        }
        auto emit = [&](const char* role, const std::vector<std::int64_t>& secs) {
            for (auto s : secs) {
                auto it = dates.find(s);
                std::string date = it == dates.end() ? "" : it->second.str();
                out << fmt::format("{},{},{},{},{},{}\n", p.participant_id, to_string(p.paradigm), role, s, date,
                                   p.seed);
            }
        };
        emit("train", p.train_seconds);
        emit("test", p.test_seconds);
    }
}

std::vector<Partition> read_partition_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw EmptyInputError("partition manifest is empty");
    csv::expect_header(line, "participant_id,paradigm,role,second_index,date,seed");
    std::vector<Partition> parts;
    std::map<std::string, std::size_t> index;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split(line);
        if (f.size() != 6) throw ParseError(line_no, "expected 6 fields");
        std::string id(csv::trim(f[0]));
        auto [it, inserted] = index.try_emplace(id, parts.size());
        if (inserted) {
            Partition p;
            p.participant_id = id;
            p.paradigm = parse_paradigm(csv::trim(f[1]));
            p.seed = csv::parse_number<std::uint64_t>(f[5], line_no, "seed");
            parts.push_back(std::move(p));
        }
        Partition& p = parts[it->second];
        auto second = csv::parse_number<std::int64_t>(f[3], line_no, "second_index");
        std::string_view role = csv::trim(f[2]);
        std::string_view date = csv::trim(f[4]);
        bool train = role == "train";
        if (!train && role != "test") throw ParseError(line_no, "role must be train or test");
        (train ? p.train_seconds : p.test_seconds).push_back(second);
        if (p.paradigm == Paradigm::temporal && !date.empty()) (train ? p.train_date : p.test_date) = Date::parse(date);
    }
    return parts;
}

}  // namespace gaitprint
