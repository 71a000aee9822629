#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gaitprint/signal.hpp"

namespace gaitprint {

struct StepSecond {
    std::int64_t second_index = 0;
    Date date;
    int steps = 0;

    bool operator==(const StepSecond&) const = default;
};

struct StepSeries {
    std::string participant_id;
    std::vector<StepSecond> seconds;  // sorted by second_index
};

/// A maximal run of walking seconds separated by at most one zero-step second.
struct Bout {
    std::string participant_id;
    std::int64_t start_second = 0;  // first walking second
    std::int64_t end_second = 0;    // last walking second, inclusive
    std::vector<std::int64_t> walking_seconds;
};

/// Ground truth per second, as written by the synthetic generator.
struct SecondLabel {
    std::int64_t second_index = 0;
    bool walking = false;
    int steps = 0;
};

/// participant id -> second index -> label
using LabelTable = std::map<std::string, std::map<std::int64_t, SecondLabel>>;

LabelTable parse_labels(std::istream& in);
void write_labels(std::ostream& out, const std::string& participant_id, std::span<const SecondLabel> labels,
                  bool header);

enum class DetectorKind { template_correlation, oracle };

struct DetectorConfig {
    DetectorKind kind = DetectorKind::template_correlation;
    double threshold = 0.7;      // minimum normalized cross-correlation
    double min_stride_s = 0.5;
    double max_stride_s = 2.0;
    int template_count = 16;
    double min_amplitude_g = 0.1;  // windows with a smaller vm standard deviation never match

    void validate() const;
};

class StepDetector {
public:
    virtual ~StepDetector() = default;
    /// `seconds` belong to a single participant and are sorted by index.
    virtual StepSeries detect(std::span<const VmSecond> seconds) const = 0;
};

/// Slides a bank of stride templates over each contiguous run of seconds.
/// A stride template of duration T is |sin(2*pi*t/T)|, i.e. two half-sine
/// step pulses. Local maxima of the best-template correlation above the
/// threshold are kept greedily with a suppression radius of T/2 (one step);
/// each kept maximum counts one step in the second holding its first pulse.
class TemplateDetector final : public StepDetector {
public:
    TemplateDetector(DetectorConfig config, int sample_rate = kDefaultSampleRate);
    StepSeries detect(std::span<const VmSecond> seconds) const override;

    /// Stride durations in samples, ascending.
    const std::vector<int>& template_lengths() const { return lengths_; }

private:
    DetectorConfig config_;
    int sample_rate_;
    std::vector<int> lengths_;
    std::vector<std::vector<double>> templates_;  // centred, unit norm
};

/// Replays ground-truth labels; seconds without a label count zero steps.
class OracleDetector final : public StepDetector {
public:
    explicit OracleDetector(const LabelTable& labels) : labels_(&labels) {}
    StepSeries detect(std::span<const VmSecond> seconds) const override;

private:
    const LabelTable* labels_;
};

StepSeries detect_steps(std::span<const VmSecond> seconds, const DetectorConfig& config,
                        const LabelTable* labels = nullptr);

std::vector<Bout> assemble_bouts(const StepSeries& series);

/// Sorted union of the bouts' walking seconds.
std::vector<std::int64_t> valid_seconds(std::span<const Bout> bouts);

enum class Paradigm { random, temporal };

Paradigm parse_paradigm(std::string_view s);
std::string to_string(Paradigm p);

struct Thresholds {
    int total;      // random paradigm
    int train_day;  // temporal paradigm, first qualifying day
    int test_day;   // temporal paradigm, strictly later day

    static Thresholds for_minutes(int minutes);
};

/// Valid seconds per calendar date for one participant.
using DayCounts = std::map<Date, int>;

bool random_eligible(const DayCounts& counts, int minutes);
/// Earliest day meeting the training threshold, if a strictly later day meets
/// the test threshold.
std::optional<Date> temporal_train_day(const DayCounts& counts, int minutes);
bool temporal_eligible(const DayCounts& counts, int minutes);

std::set<std::string> eligibility(const std::map<std::string, DayCounts>& counts, Paradigm paradigm,
                                  int minutes);

void write_step_series(std::ostream& out, const StepSeries& series, bool header);
void write_bouts(std::ostream& out, std::span<const Bout> bouts, bool header);

}  // namespace gaitprint
