#include "commands.hpp"

#include "coda/errors.hpp"
#include "coda/exchange.hpp"
#include "coda/synth.hpp"
#include "coda/temporal_model.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace coda::cli {
namespace {

namespace fs = std::filesystem;

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

const std::string& require(const Invocation& inv, const std::string& name) {
    const auto it = inv.arguments.find(name);
    if (it == inv.arguments.end() || it->second.empty()) {
        throw UsageError(inv.command + ": missing --" + name);
    }
    return it->second;
}

std::optional<std::string> optional_arg(const Invocation& inv, const std::string& name) {
    const auto it = inv.arguments.find(name);
    if (it == inv.arguments.end() || it->second.empty()) return std::nullopt;
    return it->second;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

// Config problems discovered while converting keys are usage errors.
template <typename F>
auto convert(F&& f) {
    try {
        return f();
    } catch (const ArgumentError& e) {
        throw UsageError(e.what());
    }
}

struct RunResult {
    std::vector<fs::path> outputs;
    std::optional<int> model_version;
};

RunResult run_detect(const Invocation& inv) {
    const auto cfg = convert([&] { return detector_config(inv.config); });
    const fs::path in = require(inv, "in");
    const fs::path model_path = require(inv, "model");
    const fs::path out = require(inv, "out");

    const auto model = load_model(model_path);
    const auto signal = load_audio(in, cfg.channel);
    spdlog::info("event=loaded input={} seconds={} rate={}", in.string(), signal.duration(), signal.sample_rate);

    const auto detections = detect_codas(signal, model, cfg);
    spdlog::info("event=detected codas={} constrained={}", detections.size(), cfg.cluster.constrained);

    RunResult r;
    r.model_version = CodaTypeModel::kVersion;
    write_annotations(detections, out, AnnotationFormat::json);
    r.outputs.push_back(out);
    if (const auto csv = optional_arg(inv, "csv")) {
        write_annotations(detections, *csv, AnnotationFormat::csv);
        r.outputs.emplace_back(*csv);
    }
    return r;
}

RunResult run_train(const Invocation& inv) {
    const auto options = convert([&] { return train_options(inv.config); });
    const fs::path db_path = require(inv, "db");
    const fs::path out = require(inv, "out");

    const auto db = read_coda_database(db_path);
    for (const auto& w : db.warnings) spdlog::warn("event=database_warning detail=\"{}\"", w);
    const auto model = train_model(db, options);
    for (const auto& [w, group] : model.groups) {
        for (const auto& [label, type] : group.types) {
            spdlog::info("event=trained clicks={} type={} components={} samples={}", w + 1, label,
                         type.mixture.components.size(), type.sample_count);
        }
    }
    save_model(model, out);
    return {{out}, CodaTypeModel::kVersion};
}

RunResult run_analyze(const Invocation& inv) {
    const auto options = convert([&] { return analyze_options(inv.config); });
    const fs::path annotations = require(inv, "annotations");
    const fs::path out_dir = require(inv, "out-dir");

    const auto detections = read_annotations(annotations);
    std::optional<CodaTypeModel> model;
    if (const auto m = optional_arg(inv, "model")) model = load_model(*m);

    const auto stats = analyze_exchange(detections, model ? &*model : nullptr, options);
    for (const auto& w : stats.warnings) spdlog::warn("event=data_warning detail=\"{}\"", w);
    spdlog::info("event=analyzed codas={} pairs={} discovered={}", detections.size(), stats.pairs.size(),
                 stats.discovered.size());

    fs::create_directories(out_dir);
    export_stats(stats, detections, out_dir, options);

    RunResult r;
    if (model) r.model_version = CodaTypeModel::kVersion;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json") r.outputs.push_back(entry.path());
    }
    std::sort(r.outputs.begin(), r.outputs.end());
    return r;
}

RunResult run_simulate(const Invocation& inv) {
    const fs::path script_path = require(inv, "script");
    const fs::path out = require(inv, "out");
    const fs::path truth_path = require(inv, "truth");

    const auto script = load_script(script_path);
    const auto [signal, truth] = synth_scene(script);
    write_wav(out, signal, WavEncoding::float32);
    save_truth(truth, truth_path);
    spdlog::info("event=simulated seconds={} events={} codas={}", signal.duration(), truth.events.size(),
                 truth.codas().size());
    return {{out, truth_path}, std::nullopt};
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("cannot parse '" + item + "' as a number");
        }
    }
    return values;
}

RunResult run_eval(const Invocation& inv) {
    const fs::path det_path = require(inv, "detections");
    const fs::path truth_path = require(inv, "truth");
    const fs::path out = require(inv, "out");
    const double tol = inv.config.real("eval.match_tol_ms") * 1e-3;

    EvalScene scene{read_annotations(det_path), load_truth(truth_path)};

    std::vector<double> rho;
    if (const auto list = optional_arg(inv, "rho")) {
        rho = parse_list(*list);
    } else {
        // Every distinct operating point: the configured threshold, then each
        // detection utility (detections at exactly rho are dropped).
        rho.push_back(inv.config.real("cluster.rho_d"));
        for (const auto& d : scene.detections) rho.push_back(d.utility);
    }
    std::sort(rho.begin(), rho.end());
    rho.erase(std::unique(rho.begin(), rho.end()), rho.end());

    const std::vector<EvalScene> scenes{scene};
    const auto curve = roc_eval(scenes, rho, tol);
    std::ostringstream os;
    os << "rho_d,pd,far_per_min,true_positives,false_positives,truth_codas\n";
    for (const auto& p : curve) {
        os << format_double(p.rho_d) << ',' << format_double(p.pd) << ',' << format_double(p.far_per_min) << ','
           << p.true_positives << ',' << p.false_positives << ',' << p.truth_codas << '\n';
    }
    write_text(out, os.str());

    RunResult r{{out}, std::nullopt};
    if (const auto cdf_path = optional_arg(inv, "cdf")) {
        std::ostringstream cs;
        cs << "ratio,cdf\n";
        for (const auto& p : click_ratio_cdf(click_ratios(scenes, tol))) {
            cs << format_double(p.ratio) << ',' << format_double(p.cdf) << '\n';
        }
        write_text(*cdf_path, cs.str());
        r.outputs.emplace_back(*cdf_path);
    }
    if (!curve.empty()) {
        spdlog::info("event=evaluated truth_codas={} pd={} far_per_min={}", curve.front().truth_codas,
                     curve.front().pd, curve.front().far_per_min);
    }
    return r;
}

RunResult run_make_scene(const Invocation& inv) {
    const fs::path out = require(inv, "out");
    const std::string kind = optional_arg(inv, "kind").value_or("coda");
    const auto seed = static_cast<std::uint64_t>(inv.config.integer("run.seed"));
    RandomSceneOptions options;
    if (const auto d = optional_arg(inv, "duration")) {
        const auto v = parse_list(*d);
        if (v.size() != 1 || !(v[0] > 0.0)) throw UsageError("make-scene: --duration must be positive");
        options.duration = v[0];
    }
    SceneScript script;
    if (kind == "coda") {
        script = random_coda_scene(seed, options);
    } else if (kind == "overlap") {
        script = random_overlap_scene(seed, options);
    } else if (kind == "echolocation") {
        script = random_echolocation_scene(seed, options);
    } else {
        throw UsageError("make-scene: --kind must be coda, overlap or echolocation");
    }
    save_script(script, out);
    spdlog::info("event=scene kind={} events={}", kind, script.events.size());
    return {{out}, std::nullopt};
}

RunResult run_synth_db(const Invocation& inv) {
    const fs::path out = require(inv, "out");
    int per_type = 200;
    if (const auto n = optional_arg(inv, "per-type")) {
        const auto v = parse_list(*n);
        if (v.size() != 1 || v[0] < 1.0 || v[0] != static_cast<int>(v[0])) {
            throw UsageError("synth-db: --per-type must be a positive integer");
        }
        per_type = static_cast<int>(v[0]);
    }
    auto types = known_five_click_types();
    const auto six = known_six_click_types();
    types.insert(types.end(), six.begin(), six.end());
    const auto db = synth_database(types, per_type, static_cast<std::uint64_t>(inv.config.integer("run.seed")));
    write_coda_database(db, out);
    return {{out}, std::nullopt};
}

RunResult dispatch(const Invocation& inv) {
    if (inv.command == "detect") return run_detect(inv);
    if (inv.command == "train") return run_train(inv);
    if (inv.command == "analyze") return run_analyze(inv);
    if (inv.command == "simulate") return run_simulate(inv);
    if (inv.command == "eval") return run_eval(inv);
    if (inv.command == "make-scene") return run_make_scene(inv);
    if (inv.command == "synth-db") return run_synth_db(inv);
    throw UsageError("unknown command '" + inv.command + "'");
}

}  // namespace

std::vector<std::string> output_arguments(const std::string& command) {
    if (command == "detect") return {"out", "csv"};
    if (command == "analyze") return {"out-dir"};
    if (command == "simulate") return {"out", "truth"};
    if (command == "eval") return {"out", "cdf"};
    return {"out"};
}

std::vector<std::string> input_arguments(const std::string& command) {
    if (command == "detect") return {"in", "model"};
    if (command == "train") return {"db"};
    if (command == "analyze") return {"annotations", "model"};
    if (command == "simulate") return {"script"};
    if (command == "eval") return {"detections", "truth"};
    return {};
}

fs::path manifest_path(const Invocation& inv) {
    if (inv.command == "analyze") return fs::path(require(inv, "out-dir")) / "manifest.json";
    return fs::path(require(inv, "out") + ".manifest.json");
}

fs::path run_invocation(const Invocation& inv) {
    const auto started = std::chrono::steady_clock::now();
    RunManifest manifest;
    manifest.command = inv.command;
    manifest.tool_version = kToolVersion;
    manifest.config = inv.config.values();
    manifest.arguments = inv.arguments;
    manifest.started_at = utc_now();
    for (const auto& name : input_arguments(inv.command)) {
        if (const auto p = optional_arg(inv, name)) manifest.inputs.push_back(describe_file(*p));
    }

    const auto result = dispatch(inv);

    for (const auto& p : result.outputs) manifest.outputs.push_back(describe_file(p));
    manifest.model_version = result.model_version;
    manifest.finished_at = utc_now();
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const auto path = manifest_path(inv);
    write_text(path, manifest_to_json(manifest));
    spdlog::info("event=done command={} outputs={} seconds={:.3f} manifest={}", inv.command, result.outputs.size(),
                 manifest.wall_seconds, path.string());
    return path;
}

Invocation invocation_from_manifest(const RunManifest& manifest) {
    Invocation inv;
    inv.command = manifest.command;
    inv.arguments = manifest.arguments;
    try {
        for (const auto& [k, v] : manifest.config) inv.config.set(k, v);
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("manifest config: ") + e.what());
    }
    return inv;
}

std::string version_text() {
    std::ostringstream os;
    os << "coda " << kToolVersion << "\n"
       << "annotations schema " << kAnnotationSchema << "\n"
       << "manifest schema " << RunManifest::kSchema << "\n"
       << "model version " << CodaTypeModel::kVersion << "\n"
       << "scene script version " << SceneScript::kVersion << "\n";
    return os.str();
}

}  // namespace coda::cli
