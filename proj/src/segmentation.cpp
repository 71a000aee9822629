#include "gaitprint/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "gaitprint/csv.hpp"
#include "gaitprint/errors.hpp"

namespace gaitprint {

LabelTable parse_labels(std::istream& in) {
    LabelTable table;
    std::string line;
    if (!std::getline(in, line)) throw EmptyInputError("labels stream is empty");
    csv::expect_header(line, "participant_id,second_index,walking,steps");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split(line);
        if (f.size() != 4) throw ParseError(line_no, "expected 4 fields");
        SecondLabel label;
        label.second_index = csv::parse_number<std::int64_t>(f[1], line_no, "second_index");
        label.walking = csv::parse_number<int>(f[2], line_no, "walking") != 0;
        label.steps = csv::parse_number<int>(f[3], line_no, "steps");
        if (label.steps < 0) throw ParseError(line_no, "negative steps");
        table[std::string(csv::trim(f[0]))][label.second_index] = label;
    }
    return table;
}

void write_labels(std::ostream& out, const std::string& participant_id, std::span<const SecondLabel> labels,
                  bool header) {
    if (header) out << "participant_id,second_index,walking,steps\n";
    for (const auto& l : labels) {
        out << fmt::format("{},{},{},{}\n", participant_id, l.second_index, l.walking ? 1 : 0, l.steps);
    }
}

void DetectorConfig::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("detector threshold must lie in (0, 1)");
    if (template_count < 1) throw ConfigError("detector needs at least one template");
    if (!(min_stride_s > 0.0) || max_stride_s < min_stride_s) throw ConfigError("invalid stride duration range");
    if (min_amplitude_g < 0.0) throw ConfigError("min_amplitude_g must be non-negative");
}

TemplateDetector::TemplateDetector(DetectorConfig config, int sample_rate)
    : config_(config), sample_rate_(sample_rate) {
    config_.validate();
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    for (int k = 0; k < config_.template_count; ++k) {
        double t = config_.template_count == 1
                       ? config_.min_stride_s
                       : config_.min_stride_s +
                             k * (config_.max_stride_s - config_.min_stride_s) / (config_.template_count - 1);
        int len = std::max(4, static_cast<int>(std::lround(t * sample_rate)));
        if (!lengths_.empty() && lengths_.back() == len) continue;
        std::vector<double> shape(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) {
            shape[i] = std::abs(std::sin(2.0 * std::numbers::pi * (i + 0.5) / len));
        }
        double mean = std::accumulate(shape.begin(), shape.end(), 0.0) / len;
        double norm = 0.0;
        for (double& v : shape) {
            v -= mean;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : shape) v /= norm;
        lengths_.push_back(len);
        templates_.push_back(std::move(shape));
    }
}

StepSeries TemplateDetector::detect(std::span<const VmSecond> seconds) const {
    StepSeries out;
    if (seconds.empty()) return out;
    out.participant_id = seconds.front().participant_id;
    out.seconds.reserve(seconds.size());
    for (const auto& s : seconds) out.seconds.push_back({s.second_index, s.date, 0});

    const double min_ss_scale = config_.min_amplitude_g * config_.min_amplitude_g;
    std::size_t run_begin = 0;
    while (run_begin < seconds.size()) {
        std::size_t run_end = run_begin + 1;
        while (run_end < seconds.size() && seconds[run_end].second_index == seconds[run_end - 1].second_index + 1) {
            ++run_end;
        }

        std::vector<double> signal;
        for (std::size_t i = run_begin; i < run_end; ++i) {
            if (seconds[i].values.size() != static_cast<std::size_t>(sample_rate_)) {
                throw ShapeError(fmt::format("second {} has {} samples, expected {}", seconds[i].second_index,
                                             seconds[i].values.size(), sample_rate_));
            }
            signal.insert(signal.end(), seconds[i].values.begin(), seconds[i].values.end());
        }
        const std::size_t n = signal.size();
        std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            s1[i + 1] = s1[i] + signal[i];
            s2[i + 1] = s2[i] + signal[i] * signal[i];
        }

        std::vector<double> best(n, -1.0);
        std::vector<int> best_len(n, 0);
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t k = 0; k < lengths_.size(); ++k) {
                const std::size_t len = static_cast<std::size_t>(lengths_[k]);
                if (p + len > n) break;
                double sum = s1[p + len] - s1[p];
                double ss = (s2[p + len] - s2[p]) - sum * sum / static_cast<double>(len);
                if (ss <= 0.0 || ss < min_ss_scale * static_cast<double>(len)) continue;
                const auto& tmpl = templates_[k];
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) dot += signal[p + i] * tmpl[i];
                double r = dot / std::sqrt(ss);
                if (r > best[p]) {
                    best[p] = r;
                    best_len[p] = lengths_[k];
                }
            }
        }

        std::vector<std::size_t> candidates;
        for (std::size_t p = 0; p < n; ++p) {
            if (best[p] < config_.threshold) continue;
            bool left_ok = p == 0 || best[p] >= best[p - 1];
            bool right_ok = p + 1 == n || best[p] >= best[p + 1];
            if (left_ok && right_ok) candidates.push_back(p);
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](std::size_t a, std::size_t b) { return best[a] > best[b]; });
        std::set<std::size_t> accepted;
        for (std::size_t p : candidates) {
            // suppression window spans half the matched stride, centred on p
            const std::size_t radius = static_cast<std::size_t>(best_len[p] / 4);
            auto it = accepted.lower_bound(p >= radius ? p - radius + 1 : 0);
            if (it != accepted.end() && *it < p + radius) continue;
            accepted.insert(p);
        }
        for (std::size_t p : accepted) {
            std::size_t pulse = p + static_cast<std::size_t>(best_len[p] / 4);
            std::size_t sec = run_begin + pulse / static_cast<std::size_t>(sample_rate_);
            out.seconds[sec].steps += 1;
        }
        run_begin = run_end;
    }
    return out;
}

StepSeries OracleDetector::detect(std::span<const VmSecond> seconds) const {
    StepSeries out;
    if (seconds.empty()) return out;
    out.participant_id = seconds.front().participant_id;
    const std::map<std::int64_t, SecondLabel>* mine = nullptr;
    if (auto it = labels_->find(out.participant_id); it != labels_->end()) mine = &it->second;
    for (const auto& s : seconds) {
        int steps = 0;
        if (mine) {
            if (auto it = mine->find(s.second_index); it != mine->end()) steps = it->second.steps;
        }
        out.seconds.push_back({s.second_index, s.date, steps});
    }
    return out;
}

StepSeries detect_steps(std::span<const VmSecond> seconds, const DetectorConfig& config, const LabelTable* labels) {
    config.validate();
    if (config.kind == DetectorKind::oracle) {
        if (!labels) throw ConfigError("oracle detector requires a labels table");
        return OracleDetector(*labels).detect(seconds);
    }
    return TemplateDetector(config).detect(seconds);
}

std::vector<Bout> assemble_bouts(const StepSeries& series) {
    std::vector<Bout> bouts;
    Bout current;
    auto close = [&] {
        if (current.walking_seconds.size() >= 10) {
            current.participant_id = series.participant_id;
            current.start_second = current.walking_seconds.front();
            current.end_second = current.walking_seconds.back();
            bouts.push_back(std::move(current));
        }
        current = Bout{};
    };
    for (const auto& s : series.seconds) {
        if (s.steps <= 0) continue;
        // a single missing or zero-step second between walking seconds is bridged
        if (!current.walking_seconds.empty() && s.second_index - current.walking_seconds.back() > 2) close();
        current.walking_seconds.push_back(s.second_index);
    }
    close();
    return bouts;
}

std::vector<std::int64_t> valid_seconds(std::span<const Bout> bouts) {
    std::vector<std::int64_t> out;
    for (const auto& b : bouts) out.insert(out.end(), b.walking_seconds.begin(), b.walking_seconds.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Paradigm parse_paradigm(std::string_view s) {
    if (s == "random") return Paradigm::random;
    if (s == "temporal") return Paradigm::temporal;
    throw ConfigError("unknown paradigm '" + std::string(s) + "'");
}

std::string to_string(Paradigm p) {
    return p == Paradigm::random ? "random" : "temporal";
}

Thresholds Thresholds::for_minutes(int minutes) {
    if (minutes == 3) return {180, 135, 45};
    if (minutes == 6) return {360, 270, 90};
    throw ConfigError(fmt::format("minutes must be 3 or 6, got {}", minutes));
}

bool random_eligible(const DayCounts& counts, int minutes) {
    int total = 0;
    for (const auto& [day, n] : counts) total += n;
    return total >= Thresholds::for_minutes(minutes).total;
}

std::optional<Date> temporal_train_day(const DayCounts& counts, int minutes) {
    const Thresholds th = Thresholds::for_minutes(minutes);
    auto train = std::find_if(counts.begin(), counts.end(), [&](const auto& kv) { return kv.second >= th.train_day; });
    if (train == counts.end()) return std::nullopt;
    for (auto it = std::next(train); it != counts.end(); ++it) {
        if (it->second >= th.test_day) return train->first;
    }
    return std::nullopt;
}

bool temporal_eligible(const DayCounts& counts, int minutes) {
    return temporal_train_day(counts, minutes).has_value();
}

std::set<std::string> eligibility(const std::map<std::string, DayCounts>& counts, Paradigm paradigm, int minutes) {
    std::set<std::string> out;
    for (const auto& [id, days] : counts) {
        bool ok = paradigm == Paradigm::random ? random_eligible(days, minutes) : temporal_eligible(days, minutes);
        if (ok) out.insert(id);
    }
    return out;
}

void write_step_series(std::ostream& out, const StepSeries& series, bool header) {
    if (header) out << "participant_id,second_index,date,steps\n";
    for (const auto& s : series.seconds) {
        out << fmt::format("{},{},{},{}\n", series.participant_id, s.second_index, s.date.str(), s.steps);
    }
}

void write_bouts(std::ostream& out, std::span<const Bout> bouts, bool header) {
    if (header) out << "participant_id,start_second,end_second,n_walking_seconds\n";
    for (const auto& b : bouts) {
        out << fmt::format("{},{},{},{}\n", b.participant_id, b.start_second, b.end_second, b.walking_seconds.size());
    }
}

}  // namespace gaitprint
