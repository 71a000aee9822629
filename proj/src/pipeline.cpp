#include "gaitprint/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "gaitprint/binio.hpp"
#include "gaitprint/csv.hpp"
#include "gaitprint/errors.hpp"
#include "gaitprint/parallel.hpp"
#include "gaitprint/partition.hpp"
#include "gaitprint/rng.hpp"

namespace gaitprint {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kCacheVersion = 1;

std::string detector_kind_name(DetectorKind k) {
    return k == DetectorKind::oracle ? "oracle" : "template";
}

DetectorKind parse_detector_kind(std::string_view s) {
    if (s == "template") return DetectorKind::template_correlation;
    if (s == "oracle") return DetectorKind::oracle;
    throw ConfigError(fmt::format("unknown detector '{}'", s));
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
    if (!j.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", where));
    for (const auto& [key, value] : j.items()) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
        }
    }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("key '{}': {}", key, e.what()));
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    return in;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
    return out;
}

// ---------------------------------------------------------------------------
// Stage payloads

void write_vm_cache(std::ostream& out, std::span<const std::vector<VmSecond>> people) {
    binio::put_magic(out, "GPVM", 1);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(people.size()));
    for (const auto& seconds : people) {
        binio::put_string16(out, seconds.empty() ? std::string() : seconds.front().participant_id);
        binio::put<std::uint64_t>(out, seconds.size());
        for (const auto& s : seconds) {
            binio::put<std::int64_t>(out, s.second_index);
            binio::put<std::int32_t>(out, s.date.days);
            binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.values.size()));
            for (double v : s.values) binio::put<double>(out, v);
        }
    }
}

std::vector<std::vector<VmSecond>> read_vm_cache(std::istream& in) {
    binio::expect_magic(in, "GPVM", 1);
    std::vector<std::vector<VmSecond>> people(binio::get<std::uint32_t>(in));
    for (auto& seconds : people) {
        std::string id = binio::get_string16(in);
        seconds.resize(binio::get<std::uint64_t>(in));
        for (auto& s : seconds) {
            s.participant_id = id;
            s.second_index = binio::get<std::int64_t>(in);
            s.date.days = binio::get<std::int32_t>(in);
            s.values.resize(binio::get<std::uint32_t>(in));
            for (double& v : s.values) v = binio::get<double>(in);
        }
    }
    return people;
}

using ValidTable = std::map<std::string, std::vector<DatedSecond>>;

void write_valid(std::ostream& out, const ValidTable& valid) {
    out << "participant_id,second_index,date\n";
    for (const auto& [id, seconds] : valid) {
        for (const auto& s : seconds) out << id << ',' << s.second_index << ',' << s.date.str() << '\n';
    }
}

ValidTable read_valid(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw EmptyInputError("valid-second table is empty");
    csv::expect_header(line, "participant_id,second_index,date");
    ValidTable valid;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (csv::trim(line).empty()) continue;
        auto f = csv::split(line);
        if (f.size() != 3) throw ParseError(line_no, "expected 3 fields");
        valid[std::string(csv::trim(f[0]))].push_back(
            {csv::parse_number<std::int64_t>(f[1], line_no, "second_index"), Date::parse(csv::trim(f[2]))});
    }
    return valid;
}

ordered_json report_json(const RankReport& r) {
    ordered_json j;
    j["subgroup"] = r.subgroup;
    j["paradigm"] = r.paradigm;
    j["variant"] = r.variant;
    j["n"] = r.n;
    j["rank1"] = r.rank1;
    j["rank5"] = r.rank5;
    j["rank1pct"] = r.rank1pct;
    j["rank5pct"] = r.rank5pct;
    return j;
}

RankReport report_from_json(const json& j) {
    RankReport r;
    r.subgroup = j.at("subgroup").get<std::string>();
    r.paradigm = j.at("paradigm").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.rank1 = j.at("rank1").get<double>();
    r.rank5 = j.at("rank5").get<double>();
    r.rank1pct = j.at("rank1pct").get<double>();
    r.rank5pct = j.at("rank5pct").get<double>();
    return r;
}

ordered_json spread_json(const Spread& s) {
    ordered_json j;
    j["median"] = s.median;
    j["min"] = s.min;
    j["max"] = s.max;
    return j;
}

ordered_json summary_json(std::span<const SummaryRow> rows) {
    ordered_json out = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json j;
        j["paradigm"] = r.paradigm;
        j["n"] = r.n;
        j["variant"] = r.variant;
        j["subgroups"] = r.subgroups;
        j["rank1"] = spread_json(r.rank1);
        j["rank5"] = spread_json(r.rank5);
        j["rank1pct"] = spread_json(r.rank1pct);
        j["rank5pct"] = spread_json(r.rank5pct);
        out.push_back(std::move(j));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Row assembly shared by the pipeline and evaluate_subgroup

using RowIndex = std::map<std::string, std::unordered_map<std::int64_t, std::size_t>>;

RowIndex index_rows(const FeatureMatrix& m) {
    RowIndex index;
    for (std::size_t i = 0; i < m.rows.size(); ++i) index[m.participant_of(i)][m.rows[i].second_index] = i;
    return index;
}

/// Participants sorted by id; per participant, rows in partition order.
RowSet gather_rows(const FeatureMatrix& m, const RowIndex& index, std::vector<std::string> ids,
                   const std::map<std::string, const Partition*>& parts, bool train) {
    std::sort(ids.begin(), ids.end());
    RowSet set;
    set.participants = ids;
    std::vector<std::size_t> rows;
    for (std::uint32_t p = 0; p < ids.size(); ++p) {
        const auto pit = parts.find(ids[p]);
        if (pit == parts.end()) throw CompletenessError(fmt::format("participant {} has no partition", ids[p]));
        const auto iit = index.find(ids[p]);
        const auto& seconds = train ? pit->second->train_seconds : pit->second->test_seconds;
        for (auto s : seconds) {
            std::size_t row = 0;
            if (iit == index.end() || !iit->second.contains(s)) {
                throw CompletenessError(fmt::format("participant {}: no features for second {}", ids[p], s));
            }
            row = iit->second.at(s);
            rows.push_back(row);
            set.row_participant.push_back(p);
        }
    }
    const auto cols = static_cast<Eigen::Index>(m.cols());
    set.X.resize(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = m.row(rows[r]);
        for (Eigen::Index c = 0; c < cols; ++c) set.X(static_cast<Eigen::Index>(r), c) = src[c];
    }
    return set;
}

VariantConfig effective_variant(VariantConfig v, std::uint64_t global_seed) {
    v.seed = mix_seed(global_seed, v.seed);
    return v;
}

ModelBank train_checked(const RowSet& train, const VariantConfig& variant, int workers) {
    ModelBank bank = ovr_train(train, variant, workers);
    if (!bank.failures.empty()) {
        const auto& f = bank.failures.front();
        throw NumericError(fmt::format("participant {}: {}", f.target, f.message));
    }
    return bank;
}

struct Scored {
    ScoreMatrix stage1;
    Rankings final_rankings;
    RankReport stage1_report;
    RankReport report;
};

Scored score_subgroup(const ModelBank& bank, const RowSet& train, const RowSet& test, const VariantConfig& variant,
                      Paradigm paradigm, const std::string& name, int workers) {
    Scored s;
    s.stage1 = subject_scores(bank.predict(test.X), test.row_participant, test.participants);
    VariantConfig base = variant;
    base.two_stage = false;
    s.stage1_report = rank_metrics(s.stage1);
    s.stage1_report.subgroup = name;
    s.stage1_report.paradigm = to_string(paradigm);
    s.stage1_report.variant = base.label();
    if (variant.two_stage) {
        s.final_rankings = two_stage_rank(s.stage1, train, test, base, workers);
        s.report = rank_metrics(s.final_rankings);
        s.report.subgroup = name;
        s.report.paradigm = s.stage1_report.paradigm;
        s.report.variant = variant.label();
    } else {
        s.final_rankings = rankings_from_scores(s.stage1);
        s.report = s.stage1_report;
    }
    return s;
}

std::string subgroup_name(std::size_t i) { return fmt::format("subgroup-{:03d}", i); }

// ---------------------------------------------------------------------------
// Stage machinery

struct StageRecord {
    StageOutcome outcome;
    ordered_json inputs;
};

class Runner {
public:
    Runner(const PipelineConfig& config, std::ostream* log)
        : cfg_(config), log_(log), cache_(config.resolved_cache_dir()) {
        config_json_ = cfg_.to_json(false);
        config_hash_ = sha256_hex(config_json_.dump());
    }

    /// Runs `body(dir)` unless a complete cache directory exists for `inputs`.
    template <typename Body>
    const StageOutcome& stage(const std::string& name, ordered_json inputs, Body&& body) {
        ordered_json keyed;
        keyed["stage"] = name;
        keyed["cache_version"] = kCacheVersion;
        keyed["inputs"] = inputs;
        StageRecord rec;
        rec.outcome.name = name;
        rec.outcome.key = sha256_hex(keyed.dump());
        rec.outcome.dir = cache_ / fmt::format("{}-{}", name, rec.outcome.key.substr(0, 16));
        rec.inputs = std::move(inputs);
        const fs::path marker = rec.outcome.dir / "manifest.json";
        if (fs::exists(marker)) {
            rec.outcome.cached = true;
            if (log_) *log_ << fmt::format("[{}] cached {}\n", name, rec.outcome.dir.string());
        } else {
            const fs::path tmp = rec.outcome.dir.string() + ".partial";
            std::error_code ec;
            fs::remove_all(tmp, ec);
            fs::create_directories(tmp);
            try {
                body(tmp);
            } catch (const Error& e) {
                throw Error(e.kind(), fmt::format("stage {}: {}", name, e.what()));
            } catch (const fs::filesystem_error& e) {
                throw DataError(fmt::format("stage {}: {}", name, e.what()));
            } catch (const json::exception& e) {
                throw DataError(fmt::format("stage {}: {}", name, e.what()));
            }
            ordered_json manifest;
            manifest["stage"] = name;
            manifest["key"] = rec.outcome.key;
            manifest["config_hash"] = config_hash_;
            manifest["config"] = config_json_;
            manifest["inputs"] = rec.inputs;
            open_out(tmp / "manifest.json") << manifest.dump(2) << '\n';
            fs::remove_all(rec.outcome.dir, ec);
            fs::rename(tmp, rec.outcome.dir);
            if (log_) *log_ << fmt::format("[{}] wrote {}\n", name, rec.outcome.dir.string());
        }
        records_.push_back(std::move(rec));
        return records_.back().outcome;
    }

    template <typename Fn>
    auto guarded(const std::string& name, Fn&& fn) {
        try {
            return fn();
        } catch (const Error& e) {
            throw Error(e.kind(), fmt::format("stage {}: {}", name, e.what()));
        } catch (const json::exception& e) {
            throw DataError(fmt::format("stage {}: {}", name, e.what()));
        }
    }

    const PipelineConfig& cfg_;
    std::ostream* log_;
    fs::path cache_;
    ordered_json config_json_;
    std::string config_hash_;
    std::deque<StageRecord> records_;  // stable references across push_back
};

std::vector<fs::path> input_files(const fs::path& input) {
    if (input.empty()) throw ConfigError("no input given");
    if (!fs::exists(input)) throw ConfigError(fmt::format("input {} does not exist", input.string()));
    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input)) {
            if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw EmptyInputError(fmt::format("no .csv recordings in {}", input.string()));
    } else {
        files.push_back(input);
    }
    return files;
}

std::map<std::string, const Partition*> by_id(const std::vector<Partition>& parts) {
    std::map<std::string, const Partition*> out;
    for (const auto& p : parts) out[p.participant_id] = &p;
    return out;
}

std::vector<std::vector<std::string>> read_subgroups(const fs::path& dir) {
    json j = json::parse(read_file(dir / "subgroups.json"));
    return j.at("subgroups").get<std::vector<std::vector<std::string>>>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages{"ingest", "segment", "fingerprint", "partition",
                                                 "train",  "evaluate", "report"};
    return stages;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    reject_unknown(j,
                   {"stages", "input", "labels", "mask", "output", "cache_dir", "seed", "paradigm", "minutes",
                    "subgroup_size", "variant", "detector", "grid", "feature_csv", "workers"},
                   "config");
    PipelineConfig c;
    read_key(j, "stages", c.stages);
    read_key(j, "input", c.input);
    read_key(j, "labels", c.labels);
    read_key(j, "mask", c.mask);
    read_key(j, "output", c.output);
    read_key(j, "cache_dir", c.cache_dir);
    read_key(j, "seed", c.seed);
    if (j.contains("paradigm")) c.paradigm = parse_paradigm(j.at("paradigm").get<std::string>());
    read_key(j, "minutes", c.minutes);
    read_key(j, "subgroup_size", c.subgroup_size);
    read_key(j, "feature_csv", c.feature_csv);
    read_key(j, "workers", c.workers);
    if (auto it = j.find("variant"); it != j.end()) {
        const json& v = *it;
        reject_unknown(v, {"model", "mode", "oversample_p", "two_stage", "ridge", "seed", "lasso_folds", "lasso_lambdas"},
                       "variant");
        if (v.contains("model")) c.variant.model = parse_model_kind(v.at("model").get<std::string>());
        if (v.contains("mode")) c.variant.mode = parse_variant_mode(v.at("mode").get<std::string>());
        read_key(v, "oversample_p", c.variant.oversample_p);
        read_key(v, "two_stage", c.variant.two_stage);
        read_key(v, "ridge", c.variant.ridge);
        read_key(v, "seed", c.variant.seed);
        read_key(v, "lasso_folds", c.variant.lasso_folds);
        read_key(v, "lasso_lambdas", c.variant.lasso_lambdas);
    }
    if (auto it = j.find("detector"); it != j.end()) {
        const json& d = *it;
        reject_unknown(d, {"kind", "threshold", "min_stride_s", "max_stride_s", "template_count", "min_amplitude_g"},
                       "detector");
        if (d.contains("kind")) c.detector.kind = parse_detector_kind(d.at("kind").get<std::string>());
        read_key(d, "threshold", c.detector.threshold);
        read_key(d, "min_stride_s", c.detector.min_stride_s);
        read_key(d, "max_stride_s", c.detector.max_stride_s);
        read_key(d, "template_count", c.detector.template_count);
        read_key(d, "min_amplitude_g", c.detector.min_amplitude_g);
    }
    if (auto it = j.find("grid"); it != j.end()) {
        const json& g = *it;
        reject_unknown(g, {"lo", "hi", "width", "lags"}, "grid");
        read_key(g, "lo", c.grid.lo);
        read_key(g, "hi", c.grid.hi);
        read_key(g, "width", c.grid.width);
        read_key(g, "lags", c.grid.lags);
    }
    return c;
}

ordered_json PipelineConfig::to_json(bool execution) const {
    ordered_json j;
    j["stages"] = stages;
    j["input"] = input;
    j["labels"] = labels;
    j["mask"] = mask;
    if (execution) {
        j["output"] = output;
        j["cache_dir"] = cache_dir;
    }
    j["seed"] = seed;
    j["paradigm"] = to_string(paradigm);
    j["minutes"] = minutes;
    j["subgroup_size"] = subgroup_size;
    ordered_json v;
    v["model"] = to_string(variant.model);
    v["mode"] = to_string(variant.mode);
    v["oversample_p"] = variant.oversample_p;
    v["two_stage"] = variant.two_stage;
    v["ridge"] = variant.ridge;
    v["seed"] = variant.seed;
    v["lasso_folds"] = variant.lasso_folds;
    v["lasso_lambdas"] = variant.lasso_lambdas;
    j["variant"] = std::move(v);
    ordered_json d;
    d["kind"] = detector_kind_name(detector.kind);
    d["threshold"] = detector.threshold;
    d["min_stride_s"] = detector.min_stride_s;
    d["max_stride_s"] = detector.max_stride_s;
    d["template_count"] = detector.template_count;
    d["min_amplitude_g"] = detector.min_amplitude_g;
    j["detector"] = std::move(d);
    ordered_json g;
    g["lo"] = grid.lo;
    g["hi"] = grid.hi;
    g["width"] = grid.width;
    g["lags"] = grid.lags;
    j["grid"] = std::move(g);
    j["feature_csv"] = feature_csv;
    if (execution) j["workers"] = workers;
    return j;
}

void PipelineConfig::validate() const {
    const auto& known = pipeline_stages();
    if (stages.empty()) throw ConfigError("stage list is empty");
    std::size_t last = 0;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        auto it = std::find(known.begin(), known.end(), stages[i]);
        if (it == known.end()) throw ConfigError(fmt::format("unknown stage '{}'", stages[i]));
        auto pos = static_cast<std::size_t>(it - known.begin());
        if (i > 0 && pos <= last) throw ConfigError("stages must be listed in pipeline order without repeats");
        last = pos;
    }
    if (stages.front() != known.front()) throw ConfigError("the stage list must start with ingest");
    for (std::size_t i = 1; i < stages.size(); ++i) {
        auto prev = std::find(known.begin(), known.end(), stages[i - 1]);
        if (stages[i] != *(prev + 1)) throw ConfigError(fmt::format("stage '{}' is missing its predecessor", stages[i]));
    }
    if (minutes != 3 && minutes != 6) throw ConfigError(fmt::format("minutes must be 3 or 6, got {}", minutes));
    if (subgroup_size < 2) throw ConfigError("subgroup size must be at least 2");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (output.empty()) throw ConfigError("output path is empty");
    if (detector.kind == DetectorKind::oracle && labels.empty()) {
        throw ConfigError("the oracle detector needs a labels file");
    }
    variant.validate();
    detector.validate();
    grid.validate();
}

fs::path PipelineConfig::resolved_cache_dir() const {
    if (const char* env = std::getenv(kCacheDirEnv); env && *env) return env;
    if (!cache_dir.empty()) return cache_dir;
    return fs::path(output) / "cache";
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config {}: {}", path.string(), e.what()));
    }
    return PipelineConfig::from_json(j);
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw DataError("SHA-256 failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Pipeline

RunResult run_pipeline(const PipelineConfig& config, const std::string& last_stage, std::ostream* log) {
    config.validate();
    const auto& known = pipeline_stages();
    auto last_it = std::find(known.begin(), known.end(), last_stage);
    if (last_it == known.end()) throw ConfigError(fmt::format("unknown stage '{}'", last_stage));
    auto wanted = [&](const std::string& name) {
        auto it = std::find(known.begin(), known.end(), name);
        return it <= last_it && std::find(config.stages.begin(), config.stages.end(), name) != config.stages.end();
    };

    Runner run(config, log);
    RunResult result;
    const int workers = config.workers;

    // ingest
    std::vector<fs::path> files = run.guarded("ingest", [&] { return input_files(config.input); });
    ordered_json ingest_in;
    {
        ordered_json list = ordered_json::array();
        for (const auto& f : files) {
            ordered_json e;
            e["name"] = f.filename().string();
            e["sha256"] = sha256_file(f);
            list.push_back(std::move(e));
        }
        ingest_in["recordings"] = std::move(list);
        ingest_in["mask"] = config.mask.empty() ? "" : sha256_file(config.mask);
        ingest_in["sample_rate"] = kDefaultSampleRate;
    }
    const auto& ingest = run.stage("ingest", ingest_in, [&](const fs::path& dir) {
        std::string mask_text = config.mask.empty() ? std::string() : read_file(config.mask);
        std::vector<std::vector<VmSecond>> people(files.size());
        parallel_for(files.size(), workers, [&](std::size_t i) {
            auto in = open_in(files[i]);
            try {
                Recording rec = parse_recording(in);
                if (!mask_text.empty()) {
                    std::istringstream mask(mask_text);
                    rec.mask = parse_mask(mask, rec);
                }
                people[i] = apply_mask(rec);
            } catch (const Error& e) {
                throw Error(e.kind(), fmt::format("{}: {}", files[i].filename().string(), e.what()));
            }
        });
        std::sort(people.begin(), people.end(), [](const auto& a, const auto& b) {
            const std::string& ia = a.empty() ? std::string() : a.front().participant_id;
            const std::string& ib = b.empty() ? std::string() : b.front().participant_id;
            return ia < ib;
        });
        std::erase_if(people, [](const auto& p) { return p.empty(); });
        for (std::size_t i = 1; i < people.size(); ++i) {
            if (people[i].front().participant_id == people[i - 1].front().participant_id) {
                throw DuplicationError(fmt::format("participant {} appears in more than one recording",
                                                   people[i].front().participant_id));
            }
        }
        auto out = open_out(dir / "vm.bin");
        write_vm_cache(out, people);
    });
    result.stages.push_back(ingest);
    if (!wanted("segment")) return result;

    // segment
    ordered_json seg_in;
    seg_in["ingest"] = ingest.key;
    seg_in["detector"] = run.config_json_["detector"];
    seg_in["labels"] = config.detector.kind == DetectorKind::oracle ? sha256_file(config.labels) : "";
    const auto& segment = run.stage("segment", seg_in, [&](const fs::path& dir) {
        auto in = open_in(ingest.dir / "vm.bin");
        auto people = read_vm_cache(in);
        LabelTable labels;
        if (config.detector.kind == DetectorKind::oracle) {
            auto lin = open_in(config.labels);
            labels = parse_labels(lin);
        }
        std::vector<StepSeries> series(people.size());
        std::vector<std::vector<Bout>> bouts(people.size());
        parallel_for(people.size(), workers, [&](std::size_t i) {
            try {
                series[i] = detect_steps(people[i], config.detector, &labels);
                bouts[i] = assemble_bouts(series[i]);
            } catch (const Error& e) {
                throw Error(e.kind(), fmt::format("participant {}: {}", people[i].front().participant_id, e.what()));
            }
        });
        auto steps_out = open_out(dir / "steps.csv");
        auto bouts_out = open_out(dir / "bouts.csv");
        ValidTable valid;
        for (std::size_t i = 0; i < people.size(); ++i) {
            write_step_series(steps_out, series[i], i == 0);
            write_bouts(bouts_out, bouts[i], i == 0);
            std::map<std::int64_t, Date> dates;
            for (const auto& s : series[i].seconds) dates[s.second_index] = s.date;
            auto& v = valid[people[i].front().participant_id];
            for (auto s : valid_seconds(bouts[i])) v.push_back({s, dates.at(s)});
        }
        auto valid_out = open_out(dir / "valid.csv");
        write_valid(valid_out, valid);
    });
    result.stages.push_back(segment);
    if (!wanted("fingerprint")) return result;

    // fingerprint
    ordered_json fp_in;
    fp_in["ingest"] = ingest.key;
    fp_in["segment"] = segment.key;
    fp_in["grid"] = run.config_json_["grid"];
    fp_in["feature_csv"] = config.feature_csv;
    const auto& fingerprint = run.stage("fingerprint", fp_in, [&](const fs::path& dir) {
        auto in = open_in(ingest.dir / "vm.bin");
        auto people = read_vm_cache(in);
        auto vin = open_in(segment.dir / "valid.csv");
        ValidTable valid = read_valid(vin);
        std::vector<VmSecond> selected;
        for (auto& seconds : people) {
            auto it = valid.find(seconds.front().participant_id);
            if (it == valid.end()) continue;
            std::set<std::int64_t> keep;
            for (const auto& s : it->second) keep.insert(s.second_index);
            for (auto& s : seconds) {
                if (keep.contains(s.second_index)) selected.push_back(std::move(s));
            }
        }
        FeatureMatrix m = build_feature_matrix(selected, config.grid, workers);
        auto out = open_out(dir / "features.bin");
        write_feature_binary(out, m);
        if (config.feature_csv) {
            auto cout = open_out(dir / "features.csv");
            write_feature_csv(cout, m);
        }
    });
    result.stages.push_back(fingerprint);
    if (!wanted("partition")) return result;

    // partition
    ordered_json part_in;
    part_in["segment"] = segment.key;
    part_in["seed"] = config.seed;
    part_in["paradigm"] = to_string(config.paradigm);
    part_in["minutes"] = config.minutes;
    part_in["subgroup_size"] = config.subgroup_size;
    const auto& partition = run.stage("partition", part_in, [&](const fs::path& dir) {
        auto vin = open_in(segment.dir / "valid.csv");
        ValidTable valid = read_valid(vin);
        std::map<std::string, DayCounts> counts;
        for (const auto& [id, seconds] : valid) {
            auto& c = counts[id];
            for (const auto& s : seconds) ++c[s.date];
        }
        std::set<std::string> eligible = eligibility(counts, config.paradigm, config.minutes);
        std::vector<Partition> parts;
        std::vector<std::vector<DatedSecond>> part_valid;
        for (const auto& id : eligible) {
            parts.push_back(make_partition(id, valid.at(id), config.seed, config.paradigm, config.minutes));
            part_valid.push_back(valid.at(id));
        }
        auto out = open_out(dir / "partitions.csv");
        write_partition_manifest(out, parts, part_valid, true);
        std::vector<std::string> ids(eligible.begin(), eligible.end());
        if (ids.size() < config.subgroup_size) {
            throw EligibilityError(fmt::format("{} eligible participants, fewer than the subgroup size {}", ids.size(),
                                               config.subgroup_size));
        }
        ordered_json sg;
        sg["eligible"] = ids.size();
        std::vector<std::string> excluded;
        for (const auto& [id, c] : counts) {
            if (!eligible.contains(id)) excluded.push_back(id);
        }
        sg["excluded"] = excluded;
        sg["subgroups"] = make_subgroups(ids, config.subgroup_size, config.seed);
        open_out(dir / "subgroups.json") << sg.dump(2) << '\n';
    });
    result.stages.push_back(partition);
    if (!wanted("train")) return result;

    // train
    const VariantConfig variant = effective_variant(config.variant, config.seed);
    auto load_shared = [&] {
        auto fin = open_in(fingerprint.dir / "features.bin");
        FeatureMatrix m = read_feature_binary(fin);
        auto pin = open_in(partition.dir / "partitions.csv");
        std::vector<Partition> parts = read_partition_manifest(pin);
        return std::make_pair(std::move(m), std::move(parts));
    };
    ordered_json train_in;
    train_in["fingerprint"] = fingerprint.key;
    train_in["partition"] = partition.key;
    train_in["variant"] = run.config_json_["variant"];
    const auto& train = run.stage("train", train_in, [&](const fs::path& dir) {
        auto [m, parts] = load_shared();
        const RowIndex index = index_rows(m);
        const auto lookup = by_id(parts);
        const auto groups = read_subgroups(partition.dir);
        fs::create_directories(dir / "models");
        for (std::size_t g = 0; g < groups.size(); ++g) {
            RowSet rows = gather_rows(m, index, groups[g], lookup, true);
            ModelBank bank = train_checked(rows, variant, workers);
            auto out = open_out(dir / "models" / (subgroup_name(g) + ".bin"));
            write_model_bank(out, bank);
            open_out(dir / "models" / (subgroup_name(g) + ".json")) << model_bank_json(bank) << '\n';
            if (log) *log << fmt::format("[train] {} fitted {} models\n", subgroup_name(g), bank.models.size());
        }
    });
    result.stages.push_back(train);
    if (!wanted("evaluate")) return result;

    // evaluate
    ordered_json eval_in;
    eval_in["train"] = train.key;
    const auto& evaluate = run.stage("evaluate", eval_in, [&](const fs::path& dir) {
        auto [m, parts] = load_shared();
        const RowIndex index = index_rows(m);
        const auto lookup = by_id(parts);
        const auto groups = read_subgroups(partition.dir);
        fs::create_directories(dir / "scores");
        ordered_json reports = ordered_json::array();
        for (std::size_t g = 0; g < groups.size(); ++g) {
            auto bin = open_in(train.dir / "models" / (subgroup_name(g) + ".bin"));
            ModelBank bank = read_model_bank(bin);
            RowSet test = gather_rows(m, index, groups[g], lookup, false);
            RowSet tr;
            if (variant.two_stage) tr = gather_rows(m, index, groups[g], lookup, true);
            Scored s = score_subgroup(bank, tr, test, variant, config.paradigm, subgroup_name(g), workers);
            auto out = open_out(dir / "scores" / (subgroup_name(g) + ".csv"));
            write_scores_csv(out, s.stage1);
            ordered_json entry;
            entry["subgroup"] = subgroup_name(g);
            entry["participants"] = test.participants;
            entry["stage1"] = report_json(s.stage1_report);
            entry["final"] = report_json(s.report);
            reports.push_back(std::move(entry));
        }
        open_out(dir / "evaluation.json") << reports.dump(2) << '\n';
    });
    result.stages.push_back(evaluate);
    json evaluation = run.guarded("evaluate", [&] { return json::parse(read_file(evaluate.dir / "evaluation.json")); });
    for (const auto& e : evaluation) result.reports.push_back(report_from_json(e.at("final")));
    result.summary = subgroup_summary(result.reports);
    if (!wanted("report")) return result;

    // report
    ordered_json report_in;
    report_in["evaluate"] = evaluate.key;
    report_in["config_hash"] = run.config_hash_;
    const auto& report = run.stage("report", report_in, [&](const fs::path& dir) {
        ordered_json r;
        r["format"] = "gaitprint-report";
        r["version"] = 1;
        r["config"] = run.config_json_;
        r["config_hash"] = run.config_hash_;
        ordered_json stages = ordered_json::array();
        for (const auto& rec : run.records_) {
            ordered_json s;
            s["name"] = rec.outcome.name;
            s["key"] = rec.outcome.key;
            s["inputs"] = rec.inputs;
            stages.push_back(std::move(s));
        }
        r["stages"] = std::move(stages);
        ordered_json groups = ordered_json::array();
        for (const auto& e : evaluation) groups.push_back(ordered_json::parse(e.dump()));
        r["subgroups"] = std::move(groups);
        r["summary"] = summary_json(result.summary);
        open_out(dir / "report.json") << r.dump(2) << '\n';
        auto table = open_out(dir / "accuracy.csv");
        write_accuracy_table(table, result.summary);
    });
    result.stages.push_back(report);
    fs::create_directories(config.output);
    fs::copy_file(report.dir / "report.json", fs::path(config.output) / "report.json",
                  fs::copy_options::overwrite_existing);
    fs::copy_file(report.dir / "accuracy.csv", fs::path(config.output) / "accuracy.csv",
                  fs::copy_options::overwrite_existing);
    result.report_path = fs::path(config.output) / "report.json";
    return result;
}

// ---------------------------------------------------------------------------
// Simulation and in-memory experiments

std::vector<PersonModel> simulate_corpus(const fs::path& dir, const SimulationSpec& spec, int workers) {
    spec.ranges.validate();
    spec.schedule.validate();
    if (spec.persons == 0) throw ConfigError("corpus needs at least one person");
    fs::create_directories(dir / "recordings");
    std::vector<PersonModel> people(spec.persons);
    std::vector<std::string> label_text(spec.persons);
    parallel_for(spec.persons, workers, [&](std::size_t i) {
        people[i] = generate_person(spec.seed, i, spec.ranges);
        LabeledRecording rec = synthesize_recording(people[i], spec.schedule, people[i].seed);
        auto out = open_out(dir / "recordings" / (people[i].participant_id + ".csv"));
        write_recording(out, rec.recording);
        std::ostringstream labels;
        write_labels(labels, people[i].participant_id, rec.labels, false);
        label_text[i] = labels.str();
    });
    auto out = open_out(dir / "labels.csv");
    out << "participant_id,second_index,walking,steps\n";
    for (const auto& t : label_text) out << t;
    return people;
}

ParticipantData simulate_participant(std::uint64_t corpus_seed, std::size_t index, const PersonRanges& ranges,
                                     const Schedule& schedule, const DetectorConfig& detector) {
    PersonModel person = generate_person(corpus_seed, index, ranges);
    LabeledRecording rec = synthesize_recording(person, schedule, person.seed);
    ParticipantData data;
    data.participant_id = person.participant_id;
    data.seconds = apply_mask(rec.recording);
    LabelTable labels;
    auto& mine = labels[person.participant_id];
    for (const auto& l : rec.labels) mine[l.second_index] = l;
    StepSeries series = detect_steps(data.seconds, detector, &labels);
    auto bouts = assemble_bouts(series);
    std::map<std::int64_t, Date> dates;
    for (const auto& s : series.seconds) dates[s.second_index] = s.date;
    for (auto s : valid_seconds(bouts)) data.valid.push_back({s, dates.at(s)});
    return data;
}

SubgroupResult evaluate_subgroup(std::span<const ParticipantData* const> participants, const Experiment& exp) {
    exp.variant.validate();
    exp.grid.validate();
    std::vector<Partition> parts;
    parts.reserve(participants.size());
    for (const auto* p : participants) {
        parts.push_back(make_partition(p->participant_id, p->valid, exp.seed, exp.paradigm, exp.minutes));
    }
    std::vector<VmSecond> selected;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < participants.size(); ++i) {
        ids.push_back(participants[i]->participant_id);
        std::set<std::int64_t> keep(parts[i].train_seconds.begin(), parts[i].train_seconds.end());
        keep.insert(parts[i].test_seconds.begin(), parts[i].test_seconds.end());
        for (const auto& s : participants[i]->seconds) {
            if (keep.contains(s.second_index)) selected.push_back(s);
        }
    }
    FeatureMatrix m = build_feature_matrix(selected, exp.grid, exp.workers);
    const RowIndex index = index_rows(m);
    const auto lookup = by_id(parts);
    const VariantConfig variant = effective_variant(exp.variant, exp.seed);
    RowSet train = gather_rows(m, index, ids, lookup, true);
    RowSet test = gather_rows(m, index, ids, lookup, false);

    SubgroupResult r;
    r.bank = train_checked(train, variant, exp.workers);
    Scored s = score_subgroup(r.bank, train, test, variant, exp.paradigm, subgroup_name(0), exp.workers);
    r.ids = test.participants;
    r.stage1 = std::move(s.stage1);
    r.final_rankings = std::move(s.final_rankings);
    r.stage1_report = s.stage1_report;
    r.report = s.report;
    return r;
}

}  // namespace gaitprint
