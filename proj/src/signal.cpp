#include "gaitprint/signal.hpp"

#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <unordered_map>

#include <fmt/format.h>

#include "gaitprint/csv.hpp"
#include "gaitprint/errors.hpp"

namespace gaitprint {

namespace {

constexpr std::int64_t kUsPerSecond = 1'000'000;
constexpr std::int64_t kUsPerDay = 86'400 * kUsPerSecond;

int digits(std::string_view s, std::size_t pos, std::size_t n) {
    if (pos + n > s.size()) throw DataError("truncated timestamp '" + std::string(s) + "'");
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') throw DataError("bad timestamp '" + std::string(s) + "'");
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

Date make_date(int y, int m, int d, std::string_view source) {
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw DataError("invalid calendar date '" + std::string(source) + "'");
    return Date{static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count())};
}

}  // namespace

Date Date::parse(std::string_view iso) {
    iso = csv::trim(iso);
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
        throw DataError("bad date '" + std::string(iso) + "'");
    }
    return make_date(digits(iso, 0, 4), digits(iso, 5, 2), digits(iso, 8, 2), iso);
}

std::string Date::str() const {
    using namespace std::chrono;
    year_month_day ymd{sys_days{std::chrono::days{days}}};
    return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

TimestampUs parse_timestamp(std::string_view text) {
    std::string_view s = csv::trim(text);
    if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' ||
        s[16] != ':') {
        throw DataError("bad timestamp '" + std::string(s) + "'");
    }
    Date date = make_date(digits(s, 0, 4), digits(s, 5, 2), digits(s, 8, 2), s);
    int hh = digits(s, 11, 2), mm = digits(s, 14, 2), ss = digits(s, 17, 2);
    if (hh > 23 || mm > 59 || ss > 59) throw DataError("bad time of day '" + std::string(s) + "'");
    std::int64_t frac_us = 0;
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        std::int64_t scale = 100'000;
        std::size_t start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            frac_us += (s[pos] - '0') * scale;
            scale /= 10;
            ++pos;
        }
        if (pos == start) throw DataError("bad fractional seconds '" + std::string(s) + "'");
    }
    std::string_view zone = s.substr(pos);
    if (!(zone.empty() || zone == "Z" || zone == "+00:00")) {
        throw DataError("only UTC timestamps are supported: '" + std::string(s) + "'");
    }
    return std::int64_t{date.days} * kUsPerDay + ((hh * 60 + mm) * 60 + ss) * kUsPerSecond + frac_us;
}

Date date_of(TimestampUs t) {
    return Date{static_cast<std::int32_t>(floor_div(t, kUsPerDay))};
}

std::string format_timestamp(TimestampUs t) {
    Date d = date_of(t);
    std::int64_t rem = t - std::int64_t{d.days} * kUsPerDay;
    std::int64_t secs = rem / kUsPerSecond;
    std::int64_t us = rem % kUsPerSecond;
    return fmt::format("{}T{:02d}:{:02d}:{:02d}.{:06d}Z", d.str(), secs / 3600, (secs / 60) % 60, secs % 60, us);
}

double vector_magnitude(double x, double y, double z) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
        throw NumericError("vector_magnitude: non-finite input");
    }
    return std::sqrt(x * x + y * y + z * z);
}

Recording parse_recording(std::istream& in, int sample_rate) {
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    std::string line;
    if (!std::getline(in, line)) throw EmptyInputError("recording stream is empty");
    csv::expect_header(line, "participant_id,timestamp,x,y,z");

    Recording rec;
    rec.sample_rate = sample_rate;
    RecordedSecond current;
    bool have_first = false;
    bool have_current = false;
    TimestampUs last = 0;
    std::size_t line_no = 1;

    auto flush = [&] {
        if (have_current && current.samples.size() == static_cast<std::size_t>(sample_rate)) {
            rec.seconds.push_back(std::move(current));
        }
        current = RecordedSecond{};
        have_current = false;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split(line);
        if (f.size() != 5) throw ParseError(line_no, fmt::format("expected 5 fields, got {}", f.size()));
        std::string_view id = csv::trim(f[0]);
        if (id.empty()) throw ParseError(line_no, "empty participant_id");
        TimestampUs t;
        try {
            t = parse_timestamp(f[1]);
        } catch (const DataError& e) {
            throw ParseError(line_no, e.what());
        }
        Sample s{csv::parse_number<double>(f[2], line_no, "x"), csv::parse_number<double>(f[3], line_no, "y"),
                 csv::parse_number<double>(f[4], line_no, "z")};
        if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.z)) {
            throw ParseError(line_no, "non-finite axis value");
        }
        if (!have_first) {
            rec.participant_id = std::string(id);
            rec.start_time = t;
            have_first = true;
        } else {
            if (id != rec.participant_id) {
                throw ParseError(line_no, "participant_id changes within one recording");
            }
            if (t <= last) {
                throw OrderingError(fmt::format("line {}: timestamp {} does not increase", line_no,
                                                format_timestamp(t)));
            }
        }
        last = t;
        std::int64_t idx = floor_div(t - rec.start_time, kUsPerSecond);
        if (!have_current || idx != current.second_index) {
            flush();
            current.second_index = idx;
            current.date = date_of(t);
            have_current = true;
        }
        current.timestamps.push_back(t);
        current.samples.push_back(s);
    }
    if (!have_first) throw EmptyInputError("recording stream has no samples");
    flush();
    rec.mask.assign(rec.seconds.size(), true);
    return rec;
}

void write_recording(std::ostream& out, const Recording& rec) {
    out << "participant_id,timestamp,x,y,z\n";
    fmt::memory_buffer buf;
    for (const auto& sec : rec.seconds) {
        for (std::size_t i = 0; i < sec.samples.size(); ++i) {
            const Sample& s = sec.samples[i];
            buf.clear();
            fmt::format_to(std::back_inserter(buf), "{},{},{},{},{}\n", rec.participant_id,
                           format_timestamp(sec.timestamps[i]), s.x, s.y, s.z);
            out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        }
    }
}

std::vector<bool> parse_mask(std::istream& in, const Recording& rec) {
    std::vector<bool> flags(rec.seconds.size(), true);
    std::unordered_map<std::int64_t, std::size_t> position;
    for (std::size_t i = 0; i < rec.seconds.size(); ++i) position[rec.seconds[i].second_index] = i;

    std::string line;
    if (!std::getline(in, line)) return flags;
    csv::expect_header(line, "participant_id,second_index,usable");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split(line);
        if (f.size() != 3) throw ParseError(line_no, "expected 3 fields");
        if (csv::trim(f[0]) != rec.participant_id) continue;
        auto idx = csv::parse_number<std::int64_t>(f[1], line_no, "second_index");
        auto usable = csv::parse_number<int>(f[2], line_no, "usable");
        if (usable != 0 && usable != 1) throw ParseError(line_no, "usable must be 0 or 1");
        if (auto it = position.find(idx); it != position.end()) flags[it->second] = usable == 1;
    }
    return flags;
}

std::vector<VmSecond> apply_mask(const Recording& rec, const std::vector<bool>& flags) {
    if (flags.size() != rec.seconds.size()) {
        throw ShapeError(fmt::format("mask has {} flags for {} whole seconds", flags.size(), rec.seconds.size()));
    }
    std::vector<VmSecond> out;
    for (std::size_t i = 0; i < rec.seconds.size(); ++i) {
        if (!flags[i]) continue;
        const auto& sec = rec.seconds[i];
        VmSecond vm{rec.participant_id, sec.second_index, sec.date, {}};
        vm.values.reserve(sec.samples.size());
        for (const auto& s : sec.samples) vm.values.push_back(vector_magnitude(s.x, s.y, s.z));
        out.push_back(std::move(vm));
    }
    return out;
}

std::vector<VmSecond> apply_mask(const Recording& rec) {
    if (rec.mask.empty()) return apply_mask(rec, std::vector<bool>(rec.seconds.size(), true));
    return apply_mask(rec, rec.mask);
}

}  // namespace gaitprint
