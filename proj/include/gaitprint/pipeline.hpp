#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaitprint/classifier.hpp"
#include "gaitprint/evaluation.hpp"
#include "gaitprint/fingerprint.hpp"
#include "gaitprint/partition.hpp"
#include "gaitprint/segmentation.hpp"
#include "gaitprint/synthgait.hpp"

namespace gaitprint {

namespace fs = std::filesystem;

inline constexpr const char* kCacheDirEnv = "GAITPRINT_CACHE_DIR";

/// Stage names in execution order.
const std::vector<std::string>& pipeline_stages();

struct PipelineConfig {
    std::vector<std::string> stages = pipeline_stages();
    std::string input;   // directory of recording CSVs, or one CSV file
    std::string labels;  // ground-truth labels CSV (oracle detector)
    std::string mask;    // optional mask CSV
    std::string output = "gaitprint-out";
    std::string cache_dir;  // default: <output>/cache; GAITPRINT_CACHE_DIR overrides
    std::uint64_t seed = 7;
    Paradigm paradigm = Paradigm::random;
    int minutes = 3;
    std::size_t subgroup_size = 100;
    VariantConfig variant;
    DetectorConfig detector;
    GridSpec grid;
    bool feature_csv = false;
    int workers = 1;

    /// Unknown keys are a ConfigError. Missing keys keep their defaults.
    static PipelineConfig from_json(const nlohmann::json& j);
    /// Every key; with `execution` false the keys that cannot change results
    /// (workers, output, cache_dir) are left out.
    nlohmann::ordered_json to_json(bool execution = true) const;
    void validate() const;
    fs::path resolved_cache_dir() const;
};

PipelineConfig load_config(const fs::path& path);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const fs::path& path);

struct StageOutcome {
    std::string name;
    std::string key;
    fs::path dir;
    bool cached = false;
};

struct RunResult {
    std::vector<StageOutcome> stages;
    fs::path report_path;  // empty unless the report stage ran
    std::vector<RankReport> reports;
    std::vector<SummaryRow> summary;
};

/// Runs stages up to and including `last_stage` (limited to config.stages),
/// reusing any stage whose content-hashed cache directory is complete.
/// Errors are rethrown with the stage name prefixed and their kind kept.
RunResult run_pipeline(const PipelineConfig& config, const std::string& last_stage = "report",
                       std::ostream* log = nullptr);

struct SimulationSpec {
    std::size_t persons = 100;
    std::uint64_t seed = 7;
    PersonRanges ranges;
    Schedule schedule;
};

/// Writes one recording CSV per person (`<id>.csv`) into `dir/recordings`
/// and `dir/labels.csv`. Returns the generated person models.
std::vector<PersonModel> simulate_corpus(const fs::path& dir, const SimulationSpec& spec, int workers = 1);

// In-memory corpus helpers shared by the CLI and the test suites.

struct ParticipantData {
    std::string participant_id;
    std::vector<VmSecond> seconds;  // usable seconds
    std::vector<DatedSecond> valid;
};

/// Synthesizes a person and runs detection and bout assembly on it.
ParticipantData simulate_participant(std::uint64_t corpus_seed, std::size_t index, const PersonRanges& ranges,
                                     const Schedule& schedule, const DetectorConfig& detector);

struct Experiment {
    Paradigm paradigm = Paradigm::random;
    int minutes = 3;
    std::uint64_t seed = 7;
    VariantConfig variant;
    GridSpec grid;
    int workers = 1;
};

struct SubgroupResult {
    std::vector<std::string> ids;
    ScoreMatrix stage1;
    Rankings final_rankings;
    RankReport stage1_report;
    RankReport report;  // after two-stage re-ranking when enabled
    ModelBank bank;
};

/// Partitions, fits and scores one subgroup of participants.
SubgroupResult evaluate_subgroup(std::span<const ParticipantData* const> participants, const Experiment& exp);

}  // namespace gaitprint
