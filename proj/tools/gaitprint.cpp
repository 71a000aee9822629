// gaitprint: command-line front end for the identification pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gaitprint/errors.hpp"
#include "gaitprint/evaluation.hpp"
#include "gaitprint/fingerprint.hpp"
#include "gaitprint/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gaitprint;

namespace {

// Flags mirror the config keys; only flags actually given override the file.
struct Overrides {
    std::string config;
    std::optional<std::string> input, labels, mask, output, cache_dir, paradigm, model, mode, detector;
    std::optional<std::uint64_t> seed;
    std::optional<int> minutes, workers;
    std::optional<std::size_t> subgroup_size;
    std::optional<double> oversample_p, ridge, threshold, grid_width;
    std::optional<std::vector<int>> lags;
    bool two_stage = false;
    bool feature_csv = false;

    void attach(CLI::App& cmd) {
        cmd.add_option("-c,--config", config, "JSON configuration file")->check(CLI::ExistingFile);
        cmd.add_option("--input", input, "recording CSV or directory of CSVs");
        cmd.add_option("--labels", labels, "ground-truth labels CSV");
        cmd.add_option("--mask", mask, "mask CSV");
        cmd.add_option("--output", output, "output directory");
        cmd.add_option("--cache-dir", cache_dir, fmt::format("stage cache directory (env {} wins)", kCacheDirEnv));
        cmd.add_option("--seed", seed, "global seed");
        cmd.add_option("--paradigm", paradigm, "random or temporal");
        cmd.add_option("--minutes", minutes, "3 or 6");
        cmd.add_option("--subgroup-size", subgroup_size, "participants per subgroup");
        cmd.add_option("--model", model, "logistic or lasso");
        cmd.add_option("--mode", mode, "none, oversample or weighted");
        cmd.add_option("--oversample-p", oversample_p, "target fraction for oversampling");
        cmd.add_flag("--two-stage", two_stage, "re-rank the top 1% with refitted models");
        cmd.add_option("--ridge", ridge, "ridge penalty on slopes");
        cmd.add_option("--detector", detector, "template or oracle");
        cmd.add_option("--threshold", threshold, "template correlation threshold");
        cmd.add_option("--grid-width", grid_width, "grid bin width in g");
        cmd.add_option("--lags", lags, "lags in samples")->expected(1, -1);
        cmd.add_flag("--feature-csv", feature_csv, "also write features.csv");
        cmd.add_option("--workers", workers, "worker threads");
    }

    PipelineConfig resolve() const {
        PipelineConfig c = config.empty() ? PipelineConfig{} : load_config(config);
        if (input) c.input = *input;
        if (labels) c.labels = *labels;
        if (mask) c.mask = *mask;
        if (output) c.output = *output;
        if (cache_dir) c.cache_dir = *cache_dir;
        if (seed) c.seed = *seed;
        if (paradigm) c.paradigm = parse_paradigm(*paradigm);
        if (minutes) c.minutes = *minutes;
        if (subgroup_size) c.subgroup_size = *subgroup_size;
        if (model) c.variant.model = parse_model_kind(*model);
        if (mode) c.variant.mode = parse_variant_mode(*mode);
        if (oversample_p) {
            c.variant.oversample_p = *oversample_p;
            if (!mode) c.variant.mode = VariantMode::oversample;
        }
        if (two_stage) c.variant.two_stage = true;
        if (ridge) c.variant.ridge = *ridge;
        if (detector) {
            if (*detector == "oracle") c.detector.kind = DetectorKind::oracle;
            else if (*detector == "template") c.detector.kind = DetectorKind::template_correlation;
            else throw ConfigError(fmt::format("unknown detector '{}'", *detector));
        }
        if (threshold) c.detector.threshold = *threshold;
        if (grid_width) c.grid.width = *grid_width;
        if (lags) c.grid.lags = *lags;
        if (feature_csv) c.feature_csv = true;
        if (workers) c.workers = *workers;
        return c;
    }
};

int run_stage(const Overrides& o, const std::string& last) {
    PipelineConfig c = o.resolve();
    RunResult r = run_pipeline(c, last, &std::cerr);
    for (const auto& s : r.stages) std::cout << fmt::format("{}\t{}\t{}\n", s.name, s.cached ? "cached" : "ran", s.dir.string());
    if (!r.report_path.empty()) {
        std::cout << "report\t" << r.report_path.string() << '\n';
        for (const auto& row : r.summary) {
            std::cout << fmt::format("{} n={} {}: rank-1 {:.1f}% rank-5 {:.1f}% (median of {})\n", row.paradigm, row.n,
                                     row.variant, row.rank1.median, row.rank5.median, row.subgroups);
        }
    }
    return 0;
}

int plot(const std::string& features, std::vector<std::string> participants, const std::string& reports,
         const fs::path& out) {
    if (features.empty() && reports.empty()) throw ConfigError("plot needs --features or --reports");
    fs::create_directories(out);
    if (!features.empty()) {
        std::ifstream in(features, std::ios::binary);
        if (!in) throw DataError(fmt::format("cannot open {}", features));
        FeatureMatrix m = read_feature_binary(in);
        if (participants.empty()) participants = m.participants;
        for (const auto& id : participants) {
            FingerprintImage img = fingerprint_image(m, id);
            for (std::size_t l = 0; l < img.lags.size(); ++l) {
                std::ofstream pgm(out / fmt::format("{}_lag{}.pgm", id, img.lags[l]), std::ios::binary);
                write_heatmap_pgm(pgm, img.cells[l], img.bins);
            }
            std::ofstream svg(out / (id + ".svg"));
            write_heatmap_svg(svg, img.cells, img.bins, img.lags, id);
        }
    }
    if (!reports.empty()) {
        std::ifstream in(reports);
        if (!in) throw DataError(fmt::format("cannot open {}", reports));
        auto j = nlohmann::json::parse(in);
        std::vector<RankReport> rows;
        for (const auto& g : j.at("subgroups")) {
            const auto& f = g.at("final");
            RankReport r;
            r.subgroup = f.at("subgroup").get<std::string>();
            r.paradigm = f.at("paradigm").get<std::string>();
            r.variant = f.at("variant").get<std::string>();
            r.n = f.at("n").get<std::size_t>();
            r.rank1 = f.at("rank1").get<double>();
            r.rank5 = f.at("rank5").get<double>();
            r.rank1pct = f.at("rank1pct").get<double>();
            r.rank5pct = f.at("rank5pct").get<double>();
            rows.push_back(r);
        }
        auto summary = subgroup_summary(rows);
        std::ofstream csv(out / "accuracy.csv");
        write_accuracy_table(csv, summary);
        std::ofstream svg(out / "accuracy.svg");
        write_accuracy_svg(svg, summary);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gait-based participant identification from wrist accelerometry"};
    app.require_subcommand(1);

    SimulationSpec sim;
    std::string sim_out;
    int sim_workers = 1;
    bool write_config = false;
    std::string sim_detector = "oracle";
    auto* simulate = app.add_subcommand("simulate", "write a synthetic corpus");
    simulate->add_option("--n", sim.persons, "number of persons");
    simulate->add_option("--seed", sim.seed, "corpus seed");
    simulate->add_option("--out", sim_out, "corpus directory")->required();
    simulate->add_option("--days", sim.schedule.days, "days per person");
    simulate->add_option("--bouts-per-day", sim.schedule.bouts_per_day, "walking bouts per day");
    simulate->add_option("--bout-seconds", sim.schedule.bout_seconds, "seconds per bout");
    simulate->add_option("--rest-seconds", sim.schedule.rest_seconds, "rest between bouts");
    simulate->add_option("--sigma", sim.ranges.noise.lo, "noise sd in g")->each([&](const std::string&) {
        sim.ranges.noise.hi = sim.ranges.noise.lo;
    });
    simulate->add_option("--drift-frequency", sim.ranges.drift_frequency, "per-day step frequency sd in Hz");
    simulate->add_option("--drift-amplitude", sim.ranges.drift_amplitude, "per-day relative amplitude sd");
    simulate->add_option("--workers", sim_workers, "worker threads");
    simulate->add_flag("--write-config", write_config, "also write <out>/config.json for `run`");
    simulate->add_option("--detector", sim_detector, "detector for the written config")
        ->check(CLI::IsMember({"oracle", "template"}));

    std::vector<std::pair<std::string, std::string>> stage_commands{
        {"ingest", "parse recordings into vector magnitudes"},
        {"segment", "detect steps and walking bouts"},
        {"fingerprint", "compute grid-cell features"},
        {"partition", "split seconds and form subgroups"},
        {"train", "fit one-vs-rest models"},
        {"evaluate", "score test seconds and rank candidates"},
        {"run", "run every stage and write the report"}};
    std::vector<Overrides> overrides(stage_commands.size());
    std::vector<CLI::App*> stage_apps;
    for (std::size_t i = 0; i < stage_commands.size(); ++i) {
        auto* cmd = app.add_subcommand(stage_commands[i].first, stage_commands[i].second);
        overrides[i].attach(*cmd);
        stage_apps.push_back(cmd);
    }

    std::string plot_features, plot_reports, plot_out = "plots";
    std::vector<std::string> plot_ids;
    auto* plot_cmd = app.add_subcommand("plot", "fingerprint heatmaps and accuracy tables");
    plot_cmd->add_option("--features", plot_features, "features.bin from the fingerprint stage");
    plot_cmd->add_option("--participant", plot_ids, "participants to draw (default all)");
    plot_cmd->add_option("--reports", plot_reports, "report.json from the report stage");
    plot_cmd->add_option("--out", plot_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ErrorKind::config);
    }

    try {
        if (simulate->parsed()) {
            auto people = simulate_corpus(sim_out, sim, sim_workers);
            std::cout << fmt::format("wrote {} recordings to {}\n", people.size(), (fs::path(sim_out) / "recordings").string());
            if (write_config) {
                PipelineConfig c;
                c.input = (fs::path(sim_out) / "recordings").string();
                c.labels = (fs::path(sim_out) / "labels.csv").string();
                c.output = (fs::path(sim_out) / "out").string();
                c.detector.kind = sim_detector == "oracle" ? DetectorKind::oracle : DetectorKind::template_correlation;
                c.subgroup_size = std::min<std::size_t>(c.subgroup_size, sim.persons);
                std::ofstream out(fs::path(sim_out) / "config.json");
                out << c.to_json().dump(2) << '\n';
            }
            return 0;
        }
        for (std::size_t i = 0; i < stage_apps.size(); ++i) {
            if (stage_apps[i]->parsed()) {
                std::string last = stage_commands[i].first == "run" ? "report" : stage_commands[i].first;
                return run_stage(overrides[i], last);
            }
        }
        if (plot_cmd->parsed()) return plot(plot_features, plot_ids, plot_reports, plot_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    }
    return 0;
}
