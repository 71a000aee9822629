#include <doctest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "gaitprint/errors.hpp"
#include "gaitprint/rng.hpp"
#include "gaitprint/segmentation.hpp"
#include "gaitprint/synthgait.hpp"
#include "support.hpp"

using namespace gaitprint;

namespace {

StepSeries series_from(const std::vector<int>& steps, std::int64_t first = 0) {
    StepSeries s;
    s.participant_id = "A";
    for (std::size_t i = 0; i < steps.size(); ++i) s.seconds.push_back({first + static_cast<std::int64_t>(i), {}, steps[i]});
    return s;
}

std::vector<VmSecond> constant_seconds(std::size_t n, double v) {
    std::vector<VmSecond> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(support::vm_second(std::vector<double>(80, v), "A", static_cast<std::int64_t>(i)));
    return out;
}

// Direct scan of the bout invariants.
void check_bout_invariants(const StepSeries& series, const std::vector<Bout>& bouts) {
    std::map<std::int64_t, int> steps;
    for (const auto& s : series.seconds) steps[s.second_index] = s.steps;
    for (const auto& b : bouts) {
        CHECK(b.walking_seconds.size() >= 10);
        CHECK(b.end_second - b.start_second + 1 >= 10);
        CHECK(b.walking_seconds.front() == b.start_second);
        CHECK(b.walking_seconds.back() == b.end_second);
        for (std::size_t i = 0; i < b.walking_seconds.size(); ++i) {
            CHECK(steps[b.walking_seconds[i]] > 0);
            if (i > 0) CHECK(b.walking_seconds[i] - b.walking_seconds[i - 1] <= 2);
        }
    }
}

}  // namespace

TEST_SUITE("segmentation") {

TEST_CASE("a 12-second run with two separated rests is one bout") {
    //               1  2  3  4  5  6  7  8  9 10 11 12
    auto s = series_from({2, 2, 0, 2, 2, 2, 0, 2, 2, 2, 2, 2});
    auto bouts = assemble_bouts(s);
    REQUIRE(bouts.size() == 1);
    CHECK(bouts[0].start_second == 0);
    CHECK(bouts[0].end_second == 11);
    CHECK(bouts[0].walking_seconds.size() == 10);
    CHECK(valid_seconds(bouts) == std::vector<std::int64_t>{0, 1, 3, 4, 5, 7, 8, 9, 10, 11});
}

TEST_CASE("two consecutive rests split a 13-second run into short fragments") {
    auto s = series_from({2, 2, 2, 2, 2, 0, 0, 2, 2, 2, 2, 2, 2});
    CHECK(assemble_bouts(s).empty());
}

TEST_CASE("bout boundaries") {
    auto ten = assemble_bouts(series_from(std::vector<int>(10, 1)));
    REQUIRE(ten.size() == 1);
    CHECK(ten[0].walking_seconds.size() == 10);
    CHECK(assemble_bouts(series_from(std::vector<int>(9, 1))).empty());
    CHECK(assemble_bouts(StepSeries{}).empty());
    CHECK(valid_seconds(std::vector<Bout>{}).empty());

    // A missing (masked) second counts as a one-second gap.
    StepSeries gap = series_from(std::vector<int>(5, 1));
    for (std::int64_t i = 6; i < 11; ++i) gap.seconds.push_back({i, {}, 1});
    CHECK(assemble_bouts(gap).size() == 1);

    std::vector<int> two(30, 0);
    std::fill(two.begin(), two.begin() + 10, 1);
    std::fill(two.begin() + 15, two.begin() + 25, 3);
    auto bouts = assemble_bouts(series_from(two));
    CHECK(bouts.size() == 2);
    CHECK(valid_seconds(bouts).size() == 20);
}

TEST_CASE("bout assembly: invariants and idempotence on random series") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> steps(200);
        for (auto& s : steps) s = rng.uniform() < 0.7 ? 1 + static_cast<int>(rng.below(3)) : 0;
        auto series = series_from(steps, 1000);
        auto bouts = assemble_bouts(series);
        check_bout_invariants(series, bouts);

        StepSeries again;
        again.participant_id = "A";
        for (auto s : valid_seconds(bouts)) again.seconds.push_back({s, {}, 1});
        auto bouts2 = assemble_bouts(again);
        CHECK(valid_seconds(bouts2) == valid_seconds(bouts));
    }
}

TEST_CASE("detector configuration is validated") {
    DetectorConfig c;
    CHECK_NOTHROW(c.validate());
    c.threshold = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.threshold = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = DetectorConfig{};
    c.template_count = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = DetectorConfig{};
    c.min_stride_s = 2.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("template bank spans 0.5 to 2.0 s") {
    TemplateDetector d(DetectorConfig{});
    const auto& lengths = d.template_lengths();
    REQUIRE(lengths.size() == 16);
    CHECK(lengths.front() == 40);
    CHECK(lengths.back() == 160);
    CHECK(std::is_sorted(lengths.begin(), lengths.end()));
}

TEST_CASE("a flat signal has no steps") {
    auto series = detect_steps(constant_seconds(20, 1.0), DetectorConfig{});
    REQUIRE(series.seconds.size() == 20);
    for (const auto& s : series.seconds) CHECK(s.steps == 0);
    CHECK(detect_steps(std::vector<VmSecond>{}, DetectorConfig{}).seconds.empty());
}

TEST_CASE("2 Hz synthetic gait gives 2 steps/s on most walking seconds") {
    PersonRanges ranges;
    ranges.frequency = {2.0, 2.0};
    int exact = 0, walking = 0;
    for (std::size_t person = 0; person < 5; ++person) {
        PersonModel p = generate_person(99, person, ranges);
        Schedule sched;
        sched.days = 1;
        LabeledRecording rec = synthesize_recording(p, sched, p.seed);
        auto seconds = apply_mask(rec.recording);
        auto series = detect_steps(seconds, DetectorConfig{});
        REQUIRE(series.seconds.size() == rec.labels.size());
        for (std::size_t i = 0; i < rec.labels.size(); ++i) {
            if (!rec.labels[i].walking) continue;
            ++walking;
            exact += series.seconds[i].steps == 2 ? 1 : 0;
        }
    }
    REQUIRE(walking > 0);
    CHECK(static_cast<double>(exact) / walking >= 0.90);
}

TEST_CASE("oracle detector replays labels") {
    PersonModel p = generate_person(3, 0, PersonRanges{});
    Schedule sched;
    sched.days = 1;
    LabeledRecording rec = synthesize_recording(p, sched, p.seed);
    std::ostringstream out;
    write_labels(out, p.participant_id, rec.labels, true);
    std::istringstream in(out.str());
    LabelTable labels = parse_labels(in);

    DetectorConfig cfg;
    cfg.kind = DetectorKind::oracle;
    auto seconds = apply_mask(rec.recording);
    auto series = detect_steps(seconds, cfg, &labels);
    REQUIRE(series.seconds.size() == rec.labels.size());
    for (std::size_t i = 0; i < rec.labels.size(); ++i) {
        CHECK(series.seconds[i].second_index == rec.labels[i].second_index);
        CHECK(series.seconds[i].steps == rec.labels[i].steps);
    }
    CHECK_THROWS_AS(detect_steps(seconds, cfg, nullptr), ConfigError);

    // Valid seconds under the oracle are true walking seconds.
    std::set<std::int64_t> truth;
    for (const auto& l : rec.labels) {
        if (l.walking) truth.insert(l.second_index);
    }
    for (auto s : valid_seconds(assemble_bouts(series))) CHECK(truth.contains(s));
}

TEST_CASE("eligibility thresholds") {
    const Date d1{100}, d2{101}, d3{102};
    CHECK_FALSE(random_eligible({{d1, 179}}, 3));
    CHECK(random_eligible({{d1, 100}, {d2, 80}}, 3));
    CHECK_FALSE(random_eligible({{d1, 359}}, 6));

    DayCounts split{{d1, 200}, {d3, 50}};
    CHECK(temporal_eligible(split, 3));
    CHECK(temporal_train_day(split, 3) == d1);

    DayCounts one_day{{d1, 500}};
    CHECK(random_eligible(one_day, 3));
    CHECK_FALSE(temporal_eligible(one_day, 3));

    // The training day is the first qualifying day, even when a later one would work.
    CHECK_FALSE(temporal_eligible({{d1, 100}, {d2, 300}}, 3));
    CHECK(temporal_eligible({{d1, 270}, {d2, 90}}, 6));
    CHECK_FALSE(temporal_eligible({{d1, 269}, {d2, 90}}, 6));
    CHECK_FALSE(temporal_eligible({{d1, 270}, {d2, 89}}, 6));

    std::map<std::string, DayCounts> all{{"a", split}, {"b", one_day}, {"c", {{d1, 10}}}};
    CHECK(eligibility(all, Paradigm::random, 3) == std::set<std::string>{"a", "b"});
    CHECK(eligibility(all, Paradigm::temporal, 3) == std::set<std::string>{"a"});
    CHECK_THROWS_AS(Thresholds::for_minutes(4), ConfigError);
}

TEST_CASE("temporal eligibility implies random eligibility") {
    Rng rng(8);
    for (int trial = 0; trial < 2000; ++trial) {
        DayCounts c;
        int days = 1 + static_cast<int>(rng.below(4));
        for (int d = 0; d < days; ++d) c[Date{d}] = static_cast<int>(rng.below(300));
        for (int minutes : {3, 6}) {
            if (temporal_eligible(c, minutes)) CHECK(random_eligible(c, minutes));
        }
    }
}

TEST_CASE("step and bout tables") {
    auto s = series_from({1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    std::ostringstream steps, bouts;
    write_step_series(steps, s, true);
    write_bouts(bouts, assemble_bouts(s), true);
    CHECK(steps.str().rfind("participant_id,second_index,date,steps\nA,0,1970-01-01,1\n", 0) == 0);
    CHECK(bouts.str() == "participant_id,start_second,end_second,n_walking_seconds\nA,0,9,10\n");
}

}  // TEST_SUITE
