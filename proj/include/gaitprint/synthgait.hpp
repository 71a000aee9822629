#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gaitprint/segmentation.hpp"
#include "gaitprint/signal.hpp"

namespace gaitprint {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Parameter ranges for person draws. Defaults keep 1 + sum(a) + 4 sigma <= 3
/// and 1 - sum(a) - 4 sigma >= 0, so the magnitude never leaves [0, 3] g.
struct PersonRanges {
    Range frequency{1.6, 2.4};
    std::array<Range, 4> amplitude{{{0.25, 0.45}, {0.03, 0.15}, {0.0, 0.08}, {0.0, 0.05}}};
    Range noise{0.05, 0.05};
    double drift_frequency = 0.0;  // sd of the per-day step-frequency offset, Hz
    double drift_amplitude = 0.0;  // sd of the per-day relative amplitude change

    void validate() const;
};

struct PersonModel {
    std::string participant_id;
    std::uint64_t seed = 0;
    double frequency = 2.0;
    std::array<double, 4> amplitude{};
    std::array<double, 4> phase{};
    double noise = 0.0;
    double drift_frequency = 0.0;
    double drift_amplitude = 0.0;
};

struct Schedule {
    int days = 3;
    int bouts_per_day = 4;
    int bout_seconds = 50;
    int rest_seconds = 20;      // before, between and after bouts
    int first_day = 19'723;     // 2024-01-01
    int day_start_seconds = 9 * 3600;

    void validate() const;
    int seconds_per_day() const { return bouts_per_day * bout_seconds + (bouts_per_day + 1) * rest_seconds; }
};

struct LabeledRecording {
    Recording recording;
    std::vector<SecondLabel> labels;  // aligned 1:1 with recording.seconds
};

/// Draws a person from substream mix_seed(corpus_seed, index). Ids are
/// `P` followed by the zero-padded index.
PersonModel generate_person(std::uint64_t corpus_seed, std::size_t index, const PersonRanges& ranges);

/// Per day d: f_d = f + drift_frequency * N(0,1), a_{h,d} = a_h * (1 + drift_amplitude * N(0,1)).
/// Walking seconds: vm(t) = 1 + sum_h a_{h,d} sin(2 pi h f_d t + phi_h) + e(t);
/// resting seconds: vm = 1 + e(t); e ~ N(0, sigma^2) truncated at 4 sigma.
/// Samples are vm * (0.6, 0.8, 0). True steps per walking second = round(f_d).
LabeledRecording synthesize_recording(const PersonModel& person, const Schedule& schedule, std::uint64_t seed,
                                      int sample_rate = kDefaultSampleRate);

/// Day-level parameters actually used by synthesize_recording.
std::pair<double, std::array<double, 4>> day_parameters(const PersonModel& person, std::uint64_t seed, int day);

}  // namespace gaitprint
