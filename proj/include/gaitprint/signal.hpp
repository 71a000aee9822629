#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace gaitprint {

inline constexpr int kDefaultSampleRate = 80;

/// Calendar date (UTC), stored as days since 1970-01-01.
struct Date {
    std::int32_t days = 0;

    static Date parse(std::string_view iso);  // YYYY-MM-DD
    std::string str() const;
    auto operator<=>(const Date&) const = default;
};

/// Microseconds since the Unix epoch, UTC.
using TimestampUs = std::int64_t;

/// Accepts `YYYY-MM-DDTHH:MM:SS[.frac][Z|+00:00]` (a space may replace `T`).
/// Fractional digits beyond microseconds are truncated.
TimestampUs parse_timestamp(std::string_view text);
/// Always emits microsecond precision with a trailing `Z`.
std::string format_timestamp(TimestampUs t);
Date date_of(TimestampUs t);

struct Sample {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

/// One whole second of raw samples, aligned to the recording's first sample.
struct RecordedSecond {
    std::int64_t second_index = 0;
    Date date;
    std::vector<TimestampUs> timestamps;
    std::vector<Sample> samples;
};

struct Recording {
    std::string participant_id;
    TimestampUs start_time = 0;
    int sample_rate = kDefaultSampleRate;
    std::vector<RecordedSecond> seconds;  // whole seconds only, increasing index
    std::vector<bool> mask;               // one flag per entry of `seconds`

    std::size_t sample_count() const { return seconds.size() * static_cast<std::size_t>(sample_rate); }
};

struct VmSecond {
    std::string participant_id;
    std::int64_t second_index = 0;
    Date date;
    std::vector<double> values;
};

/// sqrt(x^2 + y^2 + z^2). Throws NumericError on non-finite input.
double vector_magnitude(double x, double y, double z);

/// Reads `participant_id,timestamp,x,y,z`. Samples are bucketed into seconds
/// counted from the first sample; buckets without exactly `sample_rate`
/// samples are dropped. One participant per stream.
Recording parse_recording(std::istream& in, int sample_rate = kDefaultSampleRate);

/// Inverse of parse_recording for the retained seconds.
void write_recording(std::ostream& out, const Recording& rec);

/// Reads `participant_id,second_index,usable` rows for `rec` into per-second
/// flags aligned with rec.seconds. Unlisted seconds stay usable; rows for
/// other participants or for dropped seconds are ignored.
std::vector<bool> parse_mask(std::istream& in, const Recording& rec);

/// Emits one VmSecond per second whose flag is true.
std::vector<VmSecond> apply_mask(const Recording& rec, const std::vector<bool>& flags);
/// Uses rec.mask (all usable when empty).
std::vector<VmSecond> apply_mask(const Recording& rec);

}  // namespace gaitprint
