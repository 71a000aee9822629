#include "gaitprint/synthgait.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "gaitprint/errors.hpp"
#include "gaitprint/rng.hpp"

namespace gaitprint {

namespace {

constexpr std::int64_t kUsPerSecond = 1'000'000;
constexpr std::uint64_t kNoiseStream = 1;
constexpr std::uint64_t kDayStream = 2;

void check_range(const Range& r, const char* name) {
    if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
        throw ConfigError(fmt::format("empty or invalid range for {}", name));
    }
}

}  // namespace

void PersonRanges::validate() const {
    check_range(frequency, "frequency");
    for (const auto& a : amplitude) check_range(a, "amplitude");
    check_range(noise, "noise");
    if (frequency.lo <= 0.0) throw ConfigError("step frequency must be positive");
    if (noise.lo < 0.0 || drift_frequency < 0.0 || drift_amplitude < 0.0) {
        throw ConfigError("noise and drift must be non-negative");
    }
}

void Schedule::validate() const {
    if (days < 1) throw ConfigError("schedule needs at least one day");
    if (bouts_per_day < 0 || bout_seconds < 0 || rest_seconds < 0) throw ConfigError("schedule lengths must be >= 0");
    if (seconds_per_day() <= 0) throw ConfigError("schedule produces no seconds");
    if (seconds_per_day() + day_start_seconds > 86'400) throw ConfigError("schedule does not fit in one day");
    const double last_day_us = (static_cast<double>(first_day) + days) * 86'400.0 * kUsPerSecond;
    if (last_day_us > static_cast<double>(std::numeric_limits<std::int64_t>::max()) / 2) {
        throw ConfigError("schedule exceeds representable timestamps");
    }
}

PersonModel generate_person(std::uint64_t corpus_seed, std::size_t index, const PersonRanges& ranges) {
    ranges.validate();
    PersonModel p;
    p.participant_id = fmt::format("P{:04d}", index);
    p.seed = mix_seed(corpus_seed, index);
    Rng rng(p.seed);
    p.frequency = rng.uniform(ranges.frequency.lo, ranges.frequency.hi);
    for (std::size_t h = 0; h < 4; ++h) p.amplitude[h] = rng.uniform(ranges.amplitude[h].lo, ranges.amplitude[h].hi);
    for (std::size_t h = 0; h < 4; ++h) p.phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    p.noise = rng.uniform(ranges.noise.lo, ranges.noise.hi);
    p.drift_frequency = ranges.drift_frequency;
    p.drift_amplitude = ranges.drift_amplitude;
    return p;
}

std::pair<double, std::array<double, 4>> day_parameters(const PersonModel& person, std::uint64_t seed, int day) {
    Rng rng(mix_seed(mix_seed(seed, kDayStream), static_cast<std::uint64_t>(day)));
    double f = person.frequency;
    std::array<double, 4> a = person.amplitude;
    // draws happen even at zero drift so streams line up across drift settings
    const double zf = rng.normal();
    f += person.drift_frequency * zf;
    for (auto& amp : a) amp *= std::max(0.0, 1.0 + person.drift_amplitude * rng.normal());
    return {f, a};
}

LabeledRecording synthesize_recording(const PersonModel& person, const Schedule& schedule, std::uint64_t seed,
                                      int sample_rate) {
    schedule.validate();
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    LabeledRecording out;
    Recording& rec = out.recording;
    rec.participant_id = person.participant_id;
    rec.sample_rate = sample_rate;
    const std::int64_t day_us = 86'400 * kUsPerSecond;
    rec.start_time = std::int64_t{schedule.first_day} * day_us + std::int64_t{schedule.day_start_seconds} * kUsPerSecond;
    Rng noise(mix_seed(seed, kNoiseStream));
    const double dt = 1.0 / sample_rate;
    const std::int64_t step_us = kUsPerSecond / sample_rate;

    for (int d = 0; d < schedule.days; ++d) {
        const auto [f, a] = day_parameters(person, seed, d);
        const int steps = static_cast<int>(std::lround(f));
        const std::int64_t day_start = rec.start_time + d * day_us;
        int sec_of_day = 0;
        auto emit_second = [&](bool walking) {
            RecordedSecond sec;
            sec.second_index = std::int64_t{d} * 86'400 + sec_of_day;
            const std::int64_t t0 = day_start + std::int64_t{sec_of_day} * kUsPerSecond;
            sec.date = date_of(t0);
            sec.samples.reserve(static_cast<std::size_t>(sample_rate));
            sec.timestamps.reserve(static_cast<std::size_t>(sample_rate));
            for (int s = 0; s < sample_rate; ++s) {
                const double t = sec_of_day + s * dt;
                double vm = 1.0;
                if (walking) {
                    for (int h = 0; h < 4; ++h) {
                        vm += a[h] * std::sin(2.0 * std::numbers::pi * (h + 1) * f * t + person.phase[h]);
                    }
                }
                vm += noise.truncated_normal(person.noise, 4.0);
                vm = std::clamp(vm, 0.0, 3.0);
                sec.timestamps.push_back(t0 + s * step_us);
                sec.samples.push_back({0.6 * vm, 0.8 * vm, 0.0});
            }
            out.labels.push_back({sec.second_index, walking, walking ? steps : 0});
            rec.seconds.push_back(std::move(sec));
            ++sec_of_day;
        };
        for (int b = 0; b < schedule.bouts_per_day; ++b) {
            for (int r = 0; r < schedule.rest_seconds; ++r) emit_second(false);
            for (int w = 0; w < schedule.bout_seconds; ++w) emit_second(true);
        }
        for (int r = 0; r < schedule.rest_seconds; ++r) emit_second(false);
    }
    rec.mask.assign(rec.seconds.size(), true);
    return out;
}

}  // namespace gaitprint
