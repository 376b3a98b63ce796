#include "coda/annotator.hpp"
#include "coda/errors.hpp"
#include "coda/synth.hpp"

#include "fixtures.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace coda;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "coda_unit_annotator";
    fs::create_directories(dir);
    return dir / name;
}

CodaDetection detection(std::vector<double> times, int buffer = 0, std::string label = "5R1") {
    CodaDetection d;
    d.click_times = std::move(times);
    d.start_time = d.click_times.front();
    for (std::size_t i = 1; i < d.click_times.size(); ++i) d.ici.push_back(d.click_times[i] - d.click_times[i - 1]);
    d.buffer_index = buffer;
    d.type_label = std::move(label);
    return d;
}

SceneScript single_coda_scene(const std::vector<double>& ici, double start, double snr_db) {
    SceneScript s;
    s.duration = 4.0;
    s.seed = 5;
    s.noise.white_db = -50.0;
    SceneEvent e;
    e.start_time = start;
    e.ici = ici;
    e.ipi_ms = 4.0;
    e.n_pulses = 5;
    e.pulse_decay = 0.7;
    e.resonance_hz = 9000.0;
    e.type_label = "probe";
    e.level_db = level_for_snr(snr_db, -50.0, e, s.sample_rate);
    s.events.push_back(e);
    return s;
}

}  // namespace

TEST_CASE("templates classify as their own type", "[annotator][classify]") {
    const auto& model = fixture::trained_model();
    auto types = known_five_click_types();
    const auto six = known_six_click_types();
    types.insert(types.end(), six.begin(), six.end());
    for (const auto& t : types) {
        for (const auto& v : t.variants) {
            const auto decision = classify_coda_type(v, model);
            REQUIRE(decision.label == t.label);
            double total = 0.0;
            for (const auto& [label, p] : decision.posterior) total += p;
            REQUIRE(total == Approx(1.0).epsilon(1e-12));
        }
    }

    const auto none = classify_coda_type({0.2, 0.2}, model);
    REQUIRE(none.label == kUnknownType);
    REQUIRE(none.posterior.empty());

    // A rhythm far outside every type falls below the unknown floor.
    REQUIRE(classify_coda_type({0.9, 0.02, 0.9, 0.02}, model).label == kUnknownType);
}

TEST_CASE("merging keeps one copy of each coda and drops subsets", "[annotator][merge]") {
    std::vector<CodaDetection> in{
        detection({5.5, 5.7, 5.9, 6.1}, 1),
        detection({5.5001, 5.7, 5.9, 6.1}, 0),  // same clicks within tolerance, earlier buffer
        detection({5.7, 5.9, 6.1}, 1),          // subset of the four-click coda
        detection({1.0, 1.2, 1.4}, 0),
        detection({5.7, 5.9, 7.0}, 1),          // overlaps but is not contained
    };
    const auto out = merge_duplicates(in, 0.0005);
    REQUIRE(out.size() == 3);
    REQUIRE(out[0].start_time == 1.0);
    REQUIRE(out[1].start_time == 5.5001);
    REQUIRE(out[1].buffer_index == 0);
    REQUIRE(out[2].click_times.back() == 7.0);
}

TEST_CASE("annotation JSON round trip", "[annotator][io]") {
    auto d = detection({1.0, 1.15, 1.30, 1.45, 1.60});
    d.posterior = {{"5R1", 0.9}, {"5R2", 0.1}};
    d.utility = 1.25;
    d.mean_ipi_ms = 4.1;
    ClickAnnotation c;
    c.time = 1.0;
    c.snr_db = 18.0;
    c.pulses = 5;
    d.clicks.push_back(c);
    auto e = detection({3.0, 3.2, 3.4});
    e.type_label = kUnknownType;
    e.constrained_mode = false;

    const auto path = temp_path("ann.json");
    write_annotations({d, e}, path, AnnotationFormat::json);
    const auto back = read_annotations(path);
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].click_times == d.click_times);
    REQUIRE(back[0].ici == d.ici);
    REQUIRE(back[0].posterior == d.posterior);
    REQUIRE(back[0].utility == 1.25);
    REQUIRE(back[0].mean_ipi_ms == 4.1);
    REQUIRE(back[0].clicks.size() == 1);
    REQUIRE(back[0].clicks[0].snr_db == 18.0);
    REQUIRE_FALSE(back[1].mean_ipi_ms.has_value());
    REQUIRE_FALSE(back[1].constrained_mode);
    REQUIRE(back[1].type_label == kUnknownType);

    // Identical content serializes to identical bytes.
    REQUIRE(annotations_to_json(back) == annotations_to_json({d, e}));

    const auto csv = annotations_to_csv({d});
    REQUIRE(csv.rfind("start_time,click_count,type_label,", 0) == 0);
    REQUIRE(csv.find("1;1.15;1.3;1.45;1.6") != std::string::npos);
}

TEST_CASE("malformed annotations are format errors", "[annotator][io]") {
    REQUIRE_THROWS_AS(annotations_from_json("{"), FormatError);
    REQUIRE_THROWS_AS(annotations_from_json(R"({"schema":"other","detections":[]})"), FormatError);
    const std::string unordered = R"({"schema":"coda-annotations/1","detections":[
        {"start_time":1,"click_times":[1.0,0.9,1.2],"ici":[-0.1,0.3],"type_label":"x"}]})";
    REQUIRE_THROWS_AS(annotations_from_json(unordered), FormatError);
    const std::string short_ici = R"({"schema":"coda-annotations/1","detections":[
        {"start_time":1,"click_times":[1.0,1.1,1.2],"ici":[0.1],"type_label":"x"}]})";
    REQUIRE_THROWS_AS(annotations_from_json(short_ici), FormatError);
    REQUIRE_THROWS_AS(read_annotations(temp_path("missing.json")), IoError);
}

TEST_CASE("file descriptions carry the SHA-256 digest", "[annotator][manifest]") {
    const auto path = temp_path("abc.txt");
    std::ofstream(path, std::ios::binary) << "abc";
    const auto f = describe_file(path);
    REQUIRE(f.bytes == 3);
    REQUIRE(f.sha256 == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

    const auto empty = temp_path("empty.txt");
    std::ofstream(empty, std::ios::binary).flush();
    REQUIRE(describe_file(empty).sha256 == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("manifest JSON round trip", "[annotator][manifest]") {
    RunManifest m;
    m.command = "detect";
    m.tool_version = "0.1.0";
    m.inputs = {{"in.wav", 10, "aa"}};
    m.outputs = {{"out.json", 20, "bb"}};
    m.config = {{"cluster.rho_d", "1"}};
    m.arguments = {{"in", "in.wav"}};
    m.model_version = 1;
    m.wall_seconds = 0.5;
    const auto back = manifest_from_json(manifest_to_json(m));
    REQUIRE(back.command == "detect");
    REQUIRE(back.inputs.size() == 1);
    REQUIRE(back.inputs[0].sha256 == "aa");
    REQUIRE(back.outputs[0].bytes == 20);
    REQUIRE(back.config == m.config);
    REQUIRE(back.arguments == m.arguments);
    REQUIRE(back.model_version == 1);
    REQUIRE_THROWS_AS(manifest_from_json("{}"), FormatError);
}

TEST_CASE("a clean coda in noise is detected and typed", "[annotator][detect]") {
    const auto& model = fixture::trained_model();
    const auto templ = known_five_click_types()[2].variants.front();  // 5R2
    const auto [signal, truth] = synth_scene(single_coda_scene(templ, 1.3, 20.0));
    DetectorConfig cfg;
    const auto found = detect_codas(signal, model, cfg);
    REQUIRE(found.size() == 1);
    const auto& d = found.front();
    REQUIRE(d.click_times.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) REQUIRE(d.click_times[i] == Approx(truth.events[0].click_times[i]).margin(0.002));
    REQUIRE(d.type_label == "5R2");
    REQUIRE(d.utility > cfg.cluster.rho_d);
    REQUIRE(d.mean_pulses > cfg.cluster.p_min);
    REQUIRE(d.constrained_mode);

    cfg.threads = 3;
    REQUIRE(annotations_to_json(detect_codas(signal, model, cfg)) == annotations_to_json(found));
}

TEST_CASE("a coda spanning the buffer overlap is reported once", "[annotator][detect]") {
    const auto& model = fixture::trained_model();
    // Buffers start at 0 and 5 s; the coda sits inside the overlap [5, 7).
    auto script = single_coda_scene(known_five_click_types()[1].variants.front(), 5.5, 20.0);
    script.duration = 9.0;
    const auto [signal, truth] = synth_scene(script);
    const auto found = detect_codas(signal, model, DetectorConfig{});
    REQUIRE(found.size() == 1);
    REQUIRE(found[0].click_times.size() == 5);
}

TEST_CASE("silence yields no detections", "[annotator][detect]") {
    SampledSignal s;
    s.sample_rate = 96000.0;
    s.samples.assign(96000, 0.0);
    REQUIRE(detect_codas(s, fixture::trained_model(), DetectorConfig{}).empty());
}
