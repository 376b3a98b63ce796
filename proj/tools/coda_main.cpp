#include "commands.hpp"

#include "coda/errors.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

namespace fs = std::filesystem;
using coda::cli::Invocation;
using coda::cli::UsageError;

// A flag that is a shortcut for one config key.
struct KeyFlag {
    const char* flag;
    const char* key;
};

struct Subcommand {
    CLI::App* app = nullptr;
    std::map<std::string, std::string> arguments;
    std::map<std::string, std::string> key_values;
    std::vector<KeyFlag> key_flags;
    bool unconstrained = false;
};

struct GlobalOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string seed;
    std::string threads;
};

void add_argument(Subcommand& sub, const std::string& name, const std::string& help, bool required) {
    auto* opt = sub.app->add_option("--" + name, sub.arguments[name], help);
    if (required) opt->required();
}

void add_key_flags(Subcommand& sub, std::vector<KeyFlag> flags) {
    for (const auto& f : flags) {
        const auto& reg = coda::RunConfig::registry();
        const auto it = std::find_if(reg.begin(), reg.end(), [&](const auto& k) { return k.name == f.key; });
        sub.app->add_option(f.flag, sub.key_values[f.key], it->help + " (" + f.key + ")");
        sub.key_flags.push_back(f);
    }
}

std::string config_help() {
    std::ostringstream os;
    os << "Config keys (file lines key=value, or --set key=value):\n";
    for (const auto& k : coda::RunConfig::registry()) {
        os << "  " << k.name << " = " << k.default_value << "    " << k.help << "\n";
    }
    return os.str();
}

Invocation resolve(const std::string& command, const Subcommand& sub, const GlobalOptions& global) {
    Invocation inv;
    inv.command = command;
    try {
        if (!global.config_file.empty()) inv.config.load_file(global.config_file);
        for (const auto& kv : global.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            inv.config.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!global.seed.empty()) inv.config.set("run.seed", global.seed);
        if (!global.threads.empty()) inv.config.set("run.threads", global.threads);
        for (const auto& f : sub.key_flags) {
            if (sub.app->count(f.flag) > 0) inv.config.set(f.key, sub.key_values.at(f.key));
        }
        if (sub.unconstrained) inv.config.set("cluster.constrained", "false");
    } catch (const coda::ArgumentError& e) {
        throw UsageError(e.what());
    }
    for (const auto& [name, value] : sub.arguments) {
        if (!value.empty()) inv.arguments[name] = value;
    }
    return inv;
}

Invocation replay_invocation(const std::string& manifest_file, const std::string& out_dir, bool force) {
    std::ifstream in(manifest_file, std::ios::binary);
    if (!in) throw coda::IoError("cannot open " + manifest_file);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto manifest = coda::manifest_from_json(ss.str());
    auto inv = coda::cli::invocation_from_manifest(manifest);

    for (const auto& recorded : manifest.inputs) {
        const auto now = coda::describe_file(recorded.path);
        if (now.sha256 != recorded.sha256) {
            if (!force) throw coda::FormatError("input " + recorded.path + " changed since the recorded run");
            spdlog::warn("event=input_changed path={}", recorded.path);
        }
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        for (const auto& name : coda::cli::output_arguments(inv.command)) {
            const auto it = inv.arguments.find(name);
            if (it == inv.arguments.end()) continue;
            it->second = name == "out-dir" ? out_dir : (fs::path(out_dir) / fs::path(it->second).filename()).string();
        }
    }
    return inv;
}

}  // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_logger_st("coda");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e level=%l %v");

    CLI::App app{"Sperm-whale coda detection, annotation and exchange analysis"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer(config_help());
    app.set_version_flag("--version", coda::cli::version_text());

    GlobalOptions global;
    app.add_option("--config", global.config_file, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--set", global.overrides, "override one config key (key=value), repeatable");
    app.add_option("--seed", global.seed, "seed for every random choice (run.seed)");
    app.add_option("--threads", global.threads, "worker threads, 0 = all cores (run.threads)");
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

    std::map<std::string, Subcommand> subs;
    auto make = [&](const std::string& name, const std::string& help) -> Subcommand& {
        auto& s = subs[name];
        s.app = app.add_subcommand(name, help);
        return s;
    };

    auto& detect = make("detect", "detect and annotate codas in a recording");
    add_argument(detect, "in", "input WAV file", true);
    add_argument(detect, "model", "trained coda type model (JSON)", true);
    add_argument(detect, "out", "annotation output (JSON)", true);
    add_argument(detect, "csv", "optional flat CSV annotation output", false);
    detect.app->add_flag("--unconstrained", detect.unconstrained, "disable the pulse-count and resonance constraints");
    add_key_flags(detect, {{"--channel", "audio.channel"},
                           {"--buffer-sec", "audio.buffer_sec"},
                           {"--overlap-sec", "audio.overlap_sec"},
                           {"--band-lo", "detector.band_lo"},
                           {"--band-hi", "detector.band_hi"},
                           {"--min-peak-dist-ms", "detector.min_peak_dist_ms"},
                           {"--snr-min-db", "detector.snr_min_db"},
                           {"--max-peaks", "detector.max_peaks"},
                           {"--roi-ms", "detector.roi_ms"},
                           {"--rho-d", "cluster.rho_d"}});

    auto& train = make("train", "train the coda type model from a coda database CSV");
    add_argument(train, "db", "CSV rows click_count,type_label,ici_1,...", true);
    add_argument(train, "out", "model output (JSON)", true);
    add_key_flags(train, {{"--k-max", "train.k_max"}, {"--q", "train.q"}});

    auto& analyze = make("analyze", "exchange statistics from annotations");
    add_argument(analyze, "annotations", "annotation JSON", true);
    add_argument(analyze, "out-dir", "directory for the statistics tables", true);
    add_argument(analyze, "model", "optional model supplying typical ICI templates", false);
    add_key_flags(analyze, {{"--pair-window-sec", "analyze.pair_window_sec"},
                            {"--amp-gap-db", "analyze.amp_gap_db"},
                            {"--delta-ici-mode", "analyze.delta_ici_mode"}});

    auto& simulate = make("simulate", "render a scene script to audio and ground truth");
    add_argument(simulate, "script", "scene script (JSON)", true);
    add_argument(simulate, "out", "output WAV", true);
    add_argument(simulate, "truth", "ground truth output (JSON)", true);

    auto& eval = make("eval", "ROC and click-ratio evaluation against ground truth");
    add_argument(eval, "detections", "annotation JSON", true);
    add_argument(eval, "truth", "ground truth JSON", true);
    add_argument(eval, "out", "ROC table output (CSV)", true);
    add_argument(eval, "cdf", "optional click-ratio CDF output (CSV)", false);
    add_argument(eval, "rho", "comma-separated detection thresholds to sweep", false);
    add_key_flags(eval, {{"--match-tol-ms", "eval.match_tol_ms"}});

    auto& make_scene = make("make-scene", "write a random scene script");
    add_argument(make_scene, "out", "scene script output (JSON)", true);
    add_argument(make_scene, "kind", "coda, overlap or echolocation", false);
    add_argument(make_scene, "duration", "scene length in seconds", false);

    auto& synth_db = make("synth-db", "write a synthetic coda database CSV from built-in rhythm templates");
    add_argument(synth_db, "out", "database output (CSV)", true);
    add_argument(synth_db, "per-type", "codas per type (default 200)", false);

    auto* replay = app.add_subcommand("replay", "re-run a recorded invocation from its manifest");
    std::string replay_manifest;
    std::string replay_out_dir;
    bool replay_force = false;
    replay->add_option("--manifest", replay_manifest, "manifest written by an earlier run")->required();
    replay->add_option("--out-dir", replay_out_dir, "write outputs here instead of the recorded paths");
    replay->add_flag("--force", replay_force, "run even if an input changed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const auto level = spdlog::level::from_str(log_level);
    spdlog::set_level(level);

    try {
        Invocation inv;
        if (replay->parsed()) {
            inv = replay_invocation(replay_manifest, replay_out_dir, replay_force);
        } else {
            for (auto& [name, sub] : subs) {
                if (sub.app->parsed()) inv = resolve(name, sub, global);
            }
        }
        coda::cli::run_invocation(inv);
        return 0;
    } catch (const UsageError& e) {
        spdlog::error("event=usage_error detail=\"{}\"", e.what());
        std::cerr << app.help() << std::flush;
        return 1;
    } catch (const std::exception& e) {
        spdlog::error("event=failed detail=\"{}\"", e.what());
        return 2;
    }
}
