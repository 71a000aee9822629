#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "gaitprint/errors.hpp"
#include "gaitprint/partition.hpp"
#include "gaitprint/rng.hpp"

using namespace gaitprint;

namespace {

// `per_day[d]` valid seconds on day d, indices day*86400 + k.
std::vector<DatedSecond> days_of(std::initializer_list<int> per_day) {
    std::vector<DatedSecond> out;
    int d = 0;
    for (int n : per_day) {
        for (int k = 0; k < n; ++k) out.push_back({std::int64_t{d} * 86'400 + k, Date{19'000 + d}});
        ++d;
    }
    return out;
}

void check_disjoint(const Partition& p) {
    std::set<std::int64_t> train(p.train_seconds.begin(), p.train_seconds.end());
    CHECK(train.size() == p.train_seconds.size());
    for (auto s : p.test_seconds) CHECK_FALSE(train.contains(s));
}

}  // namespace

TEST_SUITE("partition") {

TEST_CASE("random paradigm: exactly 180 seconds uses them all") {
    auto valid = days_of({180});
    Partition p = random_partition("A", valid, 42, 3);
    CHECK(p.train_seconds.size() == 135);
    CHECK(p.test_seconds.size() == 45);
    check_disjoint(p);
    std::set<std::int64_t> all(p.train_seconds.begin(), p.train_seconds.end());
    all.insert(p.test_seconds.begin(), p.test_seconds.end());
    CHECK(all.size() == 180);
    CHECK_FALSE(p.train_date.has_value());
}

TEST_CASE("random paradigm: determinism, six-minute mode, eligibility") {
    auto valid = days_of({300, 250});
    CHECK(random_partition("A", valid, 7, 3) == random_partition("A", valid, 7, 3));
    CHECK_FALSE(random_partition("A", valid, 7, 3) == random_partition("A", valid, 8, 3));
    Partition six = random_partition("A", valid, 7, 6);
    CHECK(six.train_seconds.size() == 270);
    CHECK(six.test_seconds.size() == 90);
    check_disjoint(six);
    CHECK_THROWS_AS(random_partition("A", days_of({179}), 1, 3), EligibilityError);
    CHECK_THROWS_AS(random_partition("A", days_of({359}), 1, 6), EligibilityError);
}

TEST_CASE("random paradigm draws cover the pool evenly") {
    // Each of 200 seconds is selected with probability 0.9; over 400 seeds the
    // count for every second should stay well inside a 6-sigma band.
    auto valid = days_of({200});
    std::vector<int> picked(200, 0);
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
        Partition p = random_partition("A", valid, seed, 3);
        for (auto s : p.train_seconds) ++picked[static_cast<std::size_t>(s)];
        for (auto s : p.test_seconds) ++picked[static_cast<std::size_t>(s)];
    }
    for (int c : picked) {
        CHECK(c > 360 - 36);
        CHECK(c < 360 + 36);
    }
}

TEST_CASE("temporal paradigm: forced choice") {
    Partition p = temporal_partition("A", days_of({140, 30, 50}), 5, 3);
    CHECK(p.train_date == Date{19'000});
    CHECK(p.test_date == Date{19'002});
    CHECK(p.train_seconds.size() == 135);
    CHECK(p.test_seconds.size() == 45);
    for (auto s : p.train_seconds) CHECK(s / 86'400 == 0);
    for (auto s : p.test_seconds) CHECK(s / 86'400 == 2);
}

TEST_CASE("temporal paradigm: seeded test-day choice") {
    auto valid = days_of({200, 60, 60});
    std::set<std::int32_t> chosen;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Partition p = temporal_partition("A", valid, seed, 3);
        CHECK(p.train_date == Date{19'000});
        REQUIRE(p.test_date.has_value());
        CHECK(*p.test_date > *p.train_date);
        chosen.insert(p.test_date->days);
        CHECK(temporal_partition("A", valid, seed, 3) == p);
        check_disjoint(p);
    }
    CHECK(chosen == std::set<std::int32_t>{19'001, 19'002});
}

TEST_CASE("temporal paradigm: no later qualifying day") {
    CHECK_THROWS_AS(temporal_partition("A", days_of({100, 300}), 1, 3), EligibilityError);
    CHECK_THROWS_AS(temporal_partition("A", days_of({500}), 1, 3), EligibilityError);
    Partition six = temporal_partition("A", days_of({270, 0, 90}), 1, 6);
    CHECK(six.train_seconds.size() == 270);
    CHECK(six.test_seconds.size() == 90);
}

TEST_CASE("per-participant seeds do not depend on the participant set") {
    auto valid = days_of({200, 100});
    Partition alone = make_partition("P0001", valid, 11, Paradigm::random, 3);
    Partition again = make_partition("P0001", valid, 11, Paradigm::random, 3);
    CHECK(alone == again);
    CHECK(alone.seed == participant_seed(11, "P0001"));
    CHECK(make_partition("P0002", valid, 11, Paradigm::random, 3).seed != alone.seed);
    CHECK(make_partition("P0001", valid, 11, Paradigm::temporal, 3).paradigm == Paradigm::temporal);
}

TEST_CASE("subgroups: sorted ids, seeded shuffle, remainder dropped") {
    std::vector<std::string> ids;
    for (int i = 0; i < 23; ++i) ids.push_back("P" + std::to_string(100 + i));
    auto groups = make_subgroups(ids, 5, 3);
    CHECK(groups.size() == 4);
    std::set<std::string> seen;
    for (const auto& g : groups) {
        CHECK(g.size() == 5);
        CHECK(std::is_sorted(g.begin(), g.end()));
        for (const auto& id : g) CHECK(seen.insert(id).second);
    }
    auto reversed = ids;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(make_subgroups(reversed, 5, 3) == groups);
    CHECK(make_subgroups(ids, 5, 4) != groups);
    CHECK(make_subgroups(ids, 30, 3).empty());
    CHECK_THROWS_AS(make_subgroups(ids, 0, 3), ConfigError);
}

TEST_CASE("manifest round trip") {
    std::vector<std::vector<DatedSecond>> valid{days_of({200, 60}), days_of({150, 50, 50})};
    std::vector<Partition> parts{make_partition("A", valid[0], 9, Paradigm::temporal, 3),
                                 make_partition("B", valid[1], 9, Paradigm::temporal, 3)};
    std::stringstream out;
    write_partition_manifest(out, parts, valid, true);
    std::string first;
    std::getline(out, first);
    CHECK(first == "participant_id,paradigm,role,second_index,date,seed");
    out.seekg(0);
    auto back = read_partition_manifest(out);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == parts[0]);
    CHECK(back[1] == parts[1]);
}

TEST_CASE("temporal dates order train before test across many layouts") {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<DatedSecond> valid;
        int days = 2 + static_cast<int>(rng.below(4));
        for (int d = 0; d < days; ++d) {
            int n = static_cast<int>(rng.below(250));
            for (int k = 0; k < n; ++k) valid.push_back({std::int64_t{d} * 86'400 + k, Date{d}});
        }
        DayCounts counts;
        for (const auto& v : valid) ++counts[v.date];
        if (!temporal_eligible(counts, 3)) {
            CHECK_THROWS_AS(temporal_partition("A", valid, rng.next(), 3), EligibilityError);
            continue;
        }
        Partition p = temporal_partition("A", valid, rng.next(), 3);
        CHECK(*p.train_date < *p.test_date);
        std::int64_t last_train = *std::max_element(p.train_seconds.begin(), p.train_seconds.end());
        std::int64_t first_test = *std::min_element(p.test_seconds.begin(), p.test_seconds.end());
        CHECK(last_train < first_test);
    }
}

}  // TEST_SUITE
