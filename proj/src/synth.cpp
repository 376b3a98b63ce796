#include "coda/synth.hpp"

#include "coda/annotator.hpp"
#include "coda/dsp.hpp"
#include "coda/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace coda {
namespace {

using json = nlohmann::json;

constexpr double kSnrWindow = 0.010;
constexpr double kCrossSourceGap = 0.040;

double db_to_amp(double db) { return std::pow(10.0, db / 20.0); }

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h) {
    if (h.empty()) return x;
    std::vector<double> y(x.size() + h.size() - 1, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) continue;
        for (std::size_t k = 0; k < h.size(); ++k) y[i + k] += x[i] * h[k];
    }
    return y;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

SceneEvent coda_event(const SourceVoice& voice, int source, double start, std::vector<double> ici, std::string label) {
    SceneEvent e;
    e.kind = EventKind::coda;
    e.source_id = source;
    e.start_time = start;
    e.ici = std::move(ici);
    e.ipi_ms = voice.ipi_ms;
    e.n_pulses = voice.n_pulses;
    e.pulse_decay = 0.7;
    e.resonance_hz = voice.resonance_hz;
    e.type_label = std::move(label);
    return e;
}

// Regular echolocation train from `source` over the scene, skipping clicks that
// would land within kCrossSourceGap of any protected time.
SceneEvent echolocation_train(std::mt19937_64& rng, int source, double duration, const std::vector<double>& protect) {
    SceneEvent e;
    e.kind = EventKind::echolocation;
    e.source_id = source;
    e.n_pulses = 2;
    e.pulse_decay = 0.3;
    e.ipi_ms = uniform(rng, 3.0, 6.0);
    e.resonance_hz = uniform(rng, 13000.0, 20000.0);
    const double period = uniform(rng, 0.5, 1.0);
    std::vector<double> times;
    for (double t = uniform(rng, 0.05, period); t < duration - 0.05; t += period * uniform(rng, 0.97, 1.03)) {
        const bool clash = std::any_of(protect.begin(), protect.end(),
                                       [&](double p) { return std::abs(p - t) < kCrossSourceGap; });
        if (!clash) times.push_back(t);
    }
    if (times.empty()) times.push_back(0.05);
    e.start_time = times.front();
    for (std::size_t i = 1; i < times.size(); ++i) e.ici.push_back(times[i] - times[i - 1]);
    return e;
}

std::vector<CodaTemplate> pick_types(const RandomSceneOptions& options) {
    if (options.types.empty()) throw ArgumentError("random scene: no coda types");
    return options.types;
}

}  // namespace

std::string to_string(EventKind kind) {
    switch (kind) {
        case EventKind::coda: return "coda";
        case EventKind::echolocation: return "echolocation";
        case EventKind::transient_noise: return "transient_noise";
    }
    return "coda";
}

EventKind event_kind_from_string(const std::string& text) {
    if (text == "coda") return EventKind::coda;
    if (text == "echolocation") return EventKind::echolocation;
    if (text == "transient_noise") return EventKind::transient_noise;
    throw FormatError("unknown event kind '" + text + "'");
}

std::vector<double> SceneEvent::click_times() const {
    std::vector<double> t{start_time};
    for (double d : ici) t.push_back(t.back() + d);
    return t;
}

std::vector<const TruthEvent*> GroundTruth::codas() const {
    std::vector<const TruthEvent*> out;
    for (const auto& e : events) {
        if (e.kind == EventKind::coda) out.push_back(&e);
    }
    return out;
}

std::size_t click_onset_index(double sample_rate, double pulse_width_ms) {
    return static_cast<std::size_t>(std::ceil(pulse_width_ms * 1e-3 * sample_rate));
}

std::vector<double> synth_click(double ipi_ms, int n_pulses, double decay, double resonance_hz, double sample_rate,
                                double pulse_width_ms) {
    if (n_pulses < 1) throw ArgumentError("synth_click: n_pulses must be >= 1");
    if (!(decay > 0.0) || decay > 1.0) throw ArgumentError("synth_click: decay must lie in (0, 1]");
    if (!(sample_rate > 0.0)) throw ArgumentError("synth_click: sample rate must be positive");
    if (!(resonance_hz > 0.0) || resonance_hz >= sample_rate / 2.0) {
        throw ArgumentError("synth_click: resonance must lie below Nyquist");
    }
    if (n_pulses > 1 && !(ipi_ms > 0.0)) throw ArgumentError("synth_click: IPI must be positive");
    if (!(pulse_width_ms > 0.0)) throw ArgumentError("synth_click: pulse width must be positive");

    const double sd = pulse_width_ms * 1e-3 * sample_rate / 4.0;  // samples
    const double first = static_cast<double>(click_onset_index(sample_rate, pulse_width_ms));
    const double spacing = ipi_ms * 1e-3 * sample_rate;
    const auto length = static_cast<std::size_t>(std::ceil(2.0 * first + (n_pulses - 1) * std::max(spacing, 0.0))) + 1;
    const double omega = 2.0 * std::numbers::pi * resonance_hz / sample_rate;

    std::vector<double> y(length, 0.0);
    for (int p = 0; p < n_pulses; ++p) {
        const double centre = first + p * spacing;
        const double amp = std::pow(decay, p);
        const auto lo = static_cast<std::size_t>(std::max(0.0, std::floor(centre - 2.0 * first)));
        const auto hi = std::min(length - 1, static_cast<std::size_t>(std::ceil(centre + 2.0 * first)));
        for (std::size_t n = lo; n <= hi; ++n) {
            const double t = static_cast<double>(n) - centre;
            y[n] += amp * std::exp(-0.5 * t * t / (sd * sd)) * std::cos(omega * t);
        }
    }
    double peak = 0.0;
    for (double v : y) peak = std::max(peak, std::abs(v));
    for (double& v : y) v /= peak;
    return y;
}

double click_snr_db(const SceneEvent& event, double noise_rms_db, double sample_rate) {
    const auto w = synth_click(event.ipi_ms, event.n_pulses, event.pulse_decay, event.resonance_hz, sample_rate,
                               event.pulse_width_ms);
    const double amp = db_to_amp(event.level_db);
    const double e = amp * amp * std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
    const double sigma = db_to_amp(noise_rms_db);
    return 10.0 * std::log10(e / (sigma * sigma * kSnrWindow * sample_rate));
}

double level_for_snr(double snr_db, double noise_rms_db, const SceneEvent& shape, double sample_rate) {
    SceneEvent unit = shape;
    unit.level_db = 0.0;
    return snr_db - click_snr_db(unit, noise_rms_db, sample_rate);
}

void validate_script(const SceneScript& s) {
    if (!(s.sample_rate > 0.0)) throw ArgumentError("scene: sample rate must be positive");
    if (!(s.duration > 0.0)) throw ArgumentError("scene: duration must be positive");
    std::map<int, std::vector<double>> by_source;
    for (const auto& e : s.events) {
        if (!std::isfinite(e.level_db)) throw ArgumentError("scene: event level must be finite");
        for (double d : e.ici) {
            if (!(d > 0.0)) throw ArgumentError("scene: ICIs must be positive");
        }
        const auto times = e.click_times();
        for (double t : times) {
            if (t < 0.0 || t >= s.duration) throw ArgumentError("scene: event click outside the scene duration");
        }
        auto& v = by_source[e.source_id];
        v.insert(v.end(), times.begin(), times.end());
    }
    for (auto& [source, times] : by_source) {
        std::sort(times.begin(), times.end());
        for (std::size_t i = 1; i < times.size(); ++i) {
            if (times[i] - times[i - 1] < kMinSameSourceGap) {
                throw ArgumentError("scene: source " + std::to_string(source) + " has clicks closer than 8 ms at t=" +
                                    std::to_string(times[i]));
            }
        }
    }
    for (const auto& [source, taps] : s.channels) {
        if (taps.empty()) throw ArgumentError("scene: empty channel for source " + std::to_string(source));
    }
    if (s.noise.white_db && !std::isfinite(*s.noise.white_db)) throw ArgumentError("scene: noise level must be finite");
    if (s.noise.colored) {
        const auto& c = *s.noise.colored;
        if (!std::isfinite(c.level_db) || !(c.f_lo > 0.0) || !(c.f_lo < c.f_hi) || !(c.f_hi < s.sample_rate / 2.0)) {
            throw ArgumentError("scene: invalid colored-noise band or level");
        }
    }
}

std::pair<SampledSignal, GroundTruth> synth_scene(const SceneScript& script) {
    validate_script(script);
    const double fs = script.sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(script.duration * fs));
    SampledSignal out;
    out.sample_rate = fs;
    out.samples.assign(n, 0.0);
    GroundTruth truth;
    truth.duration = script.duration;

    for (const auto& e : script.events) {
        const double width = e.kind == EventKind::transient_noise ? std::min(e.pulse_width_ms, 0.1) : e.pulse_width_ms;
        const int pulses = e.kind == EventKind::transient_noise ? 1 : e.n_pulses;
        auto wave = synth_click(e.ipi_ms, pulses, e.pulse_decay, e.resonance_hz, fs, width);
        const double amp = db_to_amp(e.level_db);
        for (double& v : wave) v *= amp;
        if (const auto it = script.channels.find(e.source_id); it != script.channels.end()) {
            wave = convolve(wave, it->second);
        }
        const auto onset = static_cast<long long>(click_onset_index(fs, width));
        TruthEvent t;
        t.kind = e.kind;
        t.source_id = e.source_id;
        t.type_label = e.type_label;
        for (double time : e.click_times()) {
            const long long centre = std::llround(time * fs);
            t.click_times.push_back(static_cast<double>(centre) / fs);
            for (std::size_t i = 0; i < wave.size(); ++i) {
                const long long idx = centre - onset + static_cast<long long>(i);
                if (idx >= 0 && idx < static_cast<long long>(n)) out.samples[static_cast<std::size_t>(idx)] += wave[i];
            }
        }
        truth.events.push_back(std::move(t));
    }

    std::mt19937_64 rng(script.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    if (script.noise.white_db) {
        const double sigma = db_to_amp(*script.noise.white_db);
        for (double& v : out.samples) v += sigma * gauss(rng);
    }
    if (script.noise.colored) {
        const auto& c = *script.noise.colored;
        std::vector<double> w(n);
        for (double& v : w) v = gauss(rng);
        const auto filter = dsp::butterworth_bandpass(4, c.f_lo, c.f_hi, fs);
        auto colored = dsp::filtfilt(filter, w);
        const double rms = std::sqrt(std::inner_product(colored.begin(), colored.end(), colored.begin(), 0.0) /
                                     static_cast<double>(n));
        const double scale = rms > 0.0 ? db_to_amp(c.level_db) / rms : 0.0;
        for (std::size_t i = 0; i < n; ++i) out.samples[i] += scale * colored[i];
    }
    return {std::move(out), std::move(truth)};
}

std::string script_to_json(const SceneScript& s) {
    json doc;
    doc["version"] = SceneScript::kVersion;
    doc["duration"] = s.duration;
    doc["sample_rate"] = s.sample_rate;
    doc["seed"] = s.seed;
    json events = json::array();
    for (const auto& e : s.events) {
        events.push_back({{"kind", to_string(e.kind)},
                          {"source_id", e.source_id},
                          {"start_time", e.start_time},
                          {"ici", e.ici},
                          {"ipi_ms", e.ipi_ms},
                          {"n_pulses", e.n_pulses},
                          {"pulse_decay", e.pulse_decay},
                          {"resonance_hz", e.resonance_hz},
                          {"pulse_width_ms", e.pulse_width_ms},
                          {"level_db", e.level_db},
                          {"type_label", e.type_label}});
    }
    doc["events"] = events;
    json noise = json::object();
    noise["white_db"] = s.noise.white_db ? json(*s.noise.white_db) : json(nullptr);
    if (s.noise.colored) {
        noise["colored"] = {{"level_db", s.noise.colored->level_db},
                            {"f_lo", s.noise.colored->f_lo},
                            {"f_hi", s.noise.colored->f_hi}};
    }
    doc["noise"] = noise;
    json channels = json::object();
    for (const auto& [source, taps] : s.channels) channels[std::to_string(source)] = taps;
    doc["channels"] = channels;
    return doc.dump(2) + "\n";
}

SceneScript script_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        if (doc.value("version", 0) != SceneScript::kVersion) throw FormatError("scene script: unsupported version");
        SceneScript s;
        s.duration = doc.at("duration").get<double>();
        s.sample_rate = doc.at("sample_rate").get<double>();
        s.seed = doc.value("seed", std::uint64_t{0});
        for (const auto& je : doc.value("events", json::array())) {
            SceneEvent e;
            e.kind = event_kind_from_string(je.value("kind", std::string("coda")));
            e.source_id = je.value("source_id", 0);
            e.start_time = je.at("start_time").get<double>();
            e.ici = je.value("ici", std::vector<double>{});
            e.ipi_ms = je.value("ipi_ms", e.ipi_ms);
            e.n_pulses = je.value("n_pulses", e.n_pulses);
            e.pulse_decay = je.value("pulse_decay", e.pulse_decay);
            e.resonance_hz = je.value("resonance_hz", e.resonance_hz);
            e.pulse_width_ms = je.value("pulse_width_ms", e.pulse_width_ms);
            e.level_db = je.at("level_db").get<double>();
            e.type_label = je.value("type_label", std::string{});
            s.events.push_back(std::move(e));
        }
        if (doc.contains("noise")) {
            const auto& jn = doc.at("noise");
            s.noise.white_db.reset();
            if (jn.contains("white_db") && !jn.at("white_db").is_null()) s.noise.white_db = jn.at("white_db").get<double>();
            if (jn.contains("colored") && !jn.at("colored").is_null()) {
                const auto& jc = jn.at("colored");
                s.noise.colored = ColoredNoise{jc.at("level_db").get<double>(), jc.at("f_lo").get<double>(),
                                               jc.at("f_hi").get<double>()};
            }
        }
        const json channels = doc.value("channels", json::object());
        for (const auto& [key, taps] : channels.items()) {
            s.channels[std::stoi(key)] = taps.get<std::vector<double>>();
        }
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("scene script: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("scene script: bad channel key: ") + e.what());
    }
}

SceneScript load_script(const std::filesystem::path& path) { return script_from_json(read_text(path)); }
void save_script(const SceneScript& script, const std::filesystem::path& path) { write_text(path, script_to_json(script)); }

std::string truth_to_json(const GroundTruth& truth) {
    json doc;
    doc["version"] = 1;
    doc["duration"] = truth.duration;
    json events = json::array();
    for (const auto& e : truth.events) {
        events.push_back({{"kind", to_string(e.kind)},
                          {"source_id", e.source_id},
                          {"type_label", e.type_label},
                          {"click_times", e.click_times}});
    }
    doc["events"] = events;
    return doc.dump(2) + "\n";
}

GroundTruth truth_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        GroundTruth t;
        t.duration = doc.at("duration").get<double>();
        for (const auto& je : doc.at("events")) {
            TruthEvent e;
            e.kind = event_kind_from_string(je.at("kind").get<std::string>());
            e.source_id = je.value("source_id", 0);
            e.type_label = je.value("type_label", std::string{});
            e.click_times = je.at("click_times").get<std::vector<double>>();
            t.events.push_back(std::move(e));
        }
        return t;
    } catch (const json::exception& e) {
        throw FormatError(std::string("ground truth: ") + e.what());
    }
}

void save_truth(const GroundTruth& truth, const std::filesystem::path& path) { write_text(path, truth_to_json(truth)); }
GroundTruth load_truth(const std::filesystem::path& path) { return truth_from_json(read_text(path)); }

std::vector<CodaTemplate> known_five_click_types() {
    const std::vector<double> one_one_three{0.30, 0.29, 0.10, 0.10};
    CodaTemplate oot{"1+1+3", {}};
    for (double tempo : {0.8, 1.0, 1.25}) {
        std::vector<double> v;
        for (double d : one_one_three) v.push_back(d * tempo);
        oot.variants.push_back(v);
    }
    return {
        {"2+3", {{0.12, 0.40, 0.12, 0.12}}},
        {"5R1", {{0.15, 0.15, 0.15, 0.15}}},
        {"5R2", {{0.23, 0.23, 0.23, 0.23}}},
        {"5R3", {{0.33, 0.33, 0.33, 0.33}}},
        oot,
    };
}

std::vector<CodaTemplate> known_six_click_types() {
    return {
        {"6i", {{0.22, 0.20, 0.18, 0.16, 0.14}}},
        {"6R", {{0.18, 0.18, 0.18, 0.18, 0.18}}},
    };
}

CodaTemplate novel_six_click_type() { return {"1+5", {{0.40, 0.09, 0.09, 0.09, 0.09}}}; }

std::vector<double> jittered_ici(const CodaTemplate& t, std::mt19937_64& rng, const JitterOptions& jitter) {
    if (t.variants.empty()) throw ArgumentError("coda template without variants");
    const auto& base = t.variants[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(t.variants.size()) - 1))];
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double tempo = 1.0 + jitter.tempo_sd * gauss(rng);
    std::vector<double> out;
    for (double d : base) out.push_back(std::max(0.02, d * tempo + jitter.ici_sd * gauss(rng)));
    return out;
}

CodaDatabase synth_database(const std::vector<CodaTemplate>& types, int per_type, std::uint64_t seed,
                            const JitterOptions& jitter) {
    std::mt19937_64 rng(seed);
    CodaDatabase db;
    for (const auto& t : types) {
        for (int i = 0; i < per_type; ++i) db.add(CodaRecord{jittered_ici(t, rng, jitter), t.label});
    }
    return db;
}

std::vector<double> random_channel(std::mt19937_64& rng, double sample_rate) {
    const auto max_lag = static_cast<int>(std::floor(0.0005 * sample_rate));
    std::vector<double> taps(static_cast<std::size_t>(max_lag) + 1, 0.0);
    taps[0] = 1.0;
    const int extra = uniform_int(rng, 1, 3);
    for (int i = 0; i < extra; ++i) {
        taps[static_cast<std::size_t>(uniform_int(rng, 1, max_lag))] += uniform(rng, -0.25, 0.25);
    }
    return taps;
}

SourceVoice random_coda_voice(std::mt19937_64& rng, double sample_rate) {
    SourceVoice v;
    v.ipi_ms = uniform(rng, 3.0, 6.0);
    v.n_pulses = uniform_int(rng, 4, 6);
    v.resonance_hz = uniform(rng, 8000.0, 11000.0);
    v.channel = random_channel(rng, sample_rate);
    return v;
}

SceneScript random_coda_scene(std::uint64_t seed, const RandomSceneOptions& options) {
    std::mt19937_64 rng(seed);
    const auto types = pick_types(options);
    SceneScript s;
    s.duration = options.duration;
    s.sample_rate = options.sample_rate;
    s.seed = seed;
    s.noise.white_db = options.noise_db;

    const int count = uniform_int(rng, options.min_codas, options.max_codas);
    const double slot = options.duration / count;
    std::vector<double> coda_times;
    double weakest = std::numeric_limits<double>::infinity();
    for (int i = 0; i < count; ++i) {
        const auto& t = types[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(types.size()) - 1))];
        auto ici = jittered_ici(t, rng, options.jitter);
        const double span = std::accumulate(ici.begin(), ici.end(), 0.0);
        const double lo = i * slot + 0.3;
        const double hi = std::max(lo, (i + 1) * slot - span - 0.3);
        const auto voice = random_coda_voice(rng, options.sample_rate);
        auto e = coda_event(voice, i + 1, uniform(rng, lo, hi), std::move(ici), t.label);
        const double snr = uniform(rng, options.snr_lo, options.snr_hi);
        weakest = std::min(weakest, snr);
        e.level_db = level_for_snr(snr, options.noise_db, e, options.sample_rate);
        if (options.channels) s.channels[e.source_id] = voice.channel;
        for (double ct : e.click_times()) coda_times.push_back(ct);
        s.events.push_back(std::move(e));
    }
    if (uniform(rng, 0.0, 1.0) < options.echolocation_probability) {
        auto train = echolocation_train(rng, 100, options.duration, coda_times);
        const double snr = weakest - uniform(rng, options.echolocation_gap_lo, options.echolocation_gap_hi);
        train.level_db = level_for_snr(snr, options.noise_db, train, options.sample_rate);
        if (options.channels) s.channels[train.source_id] = random_channel(rng, options.sample_rate);
        s.events.push_back(std::move(train));
    }
    return s;
}

SceneScript random_overlap_scene(std::uint64_t seed, const RandomSceneOptions& options) {
    std::mt19937_64 rng(seed);
    const auto types = pick_types(options);
    SceneScript s;
    s.duration = options.duration;
    s.sample_rate = options.sample_rate;
    s.seed = seed;
    s.noise.white_db = options.noise_db;

    const auto& ta = types[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(types.size()) - 1))];
    const auto& tb = types[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(types.size()) - 1))];
    auto voice_a = random_coda_voice(rng, options.sample_rate);
    auto voice_b = random_coda_voice(rng, options.sample_rate);
    // Keep the two heads distinguishable: IPIs at least 1.5 ms apart.
    voice_a.ipi_ms = uniform(rng, 3.0, 4.0);
    voice_b.ipi_ms = uniform(rng, 5.5, 6.5);
    if (uniform(rng, 0.0, 1.0) < 0.5) std::swap(voice_a.ipi_ms, voice_b.ipi_ms);

    const double start_a = uniform(rng, 1.0, 3.0);
    auto a = coda_event(voice_a, 1, start_a, jittered_ici(ta, rng, options.jitter), ta.label);
    const auto times_a = a.click_times();
    const double span_a = times_a.back() - times_a.front();

    // Second coda starts inside the first and is shifted until every click is
    // at least 40 ms from the first coda's clicks.
    auto ici_b = jittered_ici(tb, rng, options.jitter);
    double start_b = start_a + uniform(rng, 0.05, std::max(0.1, 0.6 * span_a));
    for (int attempt = 0; attempt < 200; ++attempt) {
        std::vector<double> tb_times{start_b};
        for (double d : ici_b) tb_times.push_back(tb_times.back() + d);
        bool ok = true;
        for (double x : tb_times) {
            for (double y : times_a) ok = ok && std::abs(x - y) >= kCrossSourceGap;
        }
        if (ok) break;
        start_b += 0.011;
    }
    auto b = coda_event(voice_b, 2, start_b, std::move(ici_b), tb.label);

    const double snr_a = uniform(rng, std::max(options.snr_lo, 16.0), options.snr_hi + 5.0);
    const double snr_b = snr_a - uniform(rng, 6.0, 10.0);
    a.level_db = level_for_snr(snr_a, options.noise_db, a, options.sample_rate);
    b.level_db = level_for_snr(std::max(snr_b, options.snr_lo), options.noise_db, b, options.sample_rate);
    if (options.channels) {
        s.channels[1] = voice_a.channel;
        s.channels[2] = voice_b.channel;
    }
    s.events.push_back(std::move(a));
    s.events.push_back(std::move(b));
    return s;
}

SceneScript random_echolocation_scene(std::uint64_t seed, const RandomSceneOptions& options) {
    std::mt19937_64 rng(seed);
    SceneScript s;
    s.duration = options.duration;
    s.sample_rate = options.sample_rate;
    s.seed = seed;
    s.noise.white_db = options.noise_db;
    const int sources = uniform_int(rng, 1, 2);
    std::vector<double> taken;
    for (int i = 0; i < sources; ++i) {
        auto train = echolocation_train(rng, 100 + i, options.duration, taken);
        train.level_db = level_for_snr(uniform(rng, options.snr_lo, options.snr_hi), options.noise_db, train,
                                       options.sample_rate);
        for (double t : train.click_times()) taken.push_back(t);
        if (options.channels) s.channels[train.source_id] = random_channel(rng, options.sample_rate);
        s.events.push_back(std::move(train));
    }
    return s;
}

MatchResult match_detections(const std::vector<CodaDetection>& detections, const GroundTruth& truth, double match_tol) {
    const auto codas = truth.codas();
    MatchResult r;
    r.detection_match.assign(detections.size(), -1);
    r.detection_duplicate.assign(detections.size(), false);
    r.truth_best_clicks.assign(codas.size(), 0);
    std::vector<bool> claimed(codas.size(), false);

    for (std::size_t d = 0; d < detections.size(); ++d) {
        const auto& det = detections[d];
        int best = -1;
        int best_hits = 0;
        for (std::size_t c = 0; c < codas.size(); ++c) {
            std::vector<bool> used(codas[c]->click_times.size(), false);
            int hits = 0;
            for (double t : det.click_times) {
                for (std::size_t k = 0; k < used.size(); ++k) {
                    if (!used[k] && std::abs(codas[c]->click_times[k] - t) <= match_tol) {
                        used[k] = true;
                        ++hits;
                        break;
                    }
                }
            }
            if (hits > best_hits) {
                best_hits = hits;
                best = static_cast<int>(c);
            }
        }
        if (best >= 0 && 2 * best_hits >= static_cast<int>(det.click_times.size())) {
            r.detection_match[d] = best;
            const auto bi = static_cast<std::size_t>(best);
            r.detection_duplicate[d] = claimed[bi];
            claimed[bi] = true;
            r.truth_best_clicks[bi] = std::max(r.truth_best_clicks[bi], best_hits);
        }
    }
    return r;
}

RocPoint evaluate_at(const std::vector<EvalScene>& scenes, double rho_d, double match_tol) {
    RocPoint p;
    p.rho_d = rho_d;
    double minutes = 0.0;
    for (const auto& s : scenes) {
        std::vector<CodaDetection> kept;
        for (const auto& d : s.detections) {
            if (d.utility > rho_d) kept.push_back(d);
        }
        const auto m = match_detections(kept, s.truth, match_tol);
        const auto codas = s.truth.codas();
        p.truth_codas += codas.size();
        for (int hits : m.truth_best_clicks) p.true_positives += hits > 0 ? 1 : 0;
        for (int idx : m.detection_match) p.false_positives += idx < 0 ? 1 : 0;
        minutes += s.truth.duration / 60.0;
    }
    p.pd = p.truth_codas > 0 ? static_cast<double>(p.true_positives) / static_cast<double>(p.truth_codas) : 0.0;
    p.far_per_min = minutes > 0.0 ? static_cast<double>(p.false_positives) / minutes : 0.0;
    return p;
}

std::vector<RocPoint> roc_eval(const std::vector<EvalScene>& scenes, const std::vector<double>& rho_values,
                               double match_tol) {
    std::vector<RocPoint> out;
    for (double rho : rho_values) out.push_back(evaluate_at(scenes, rho, match_tol));
    return out;
}

std::vector<double> click_ratios(const std::vector<EvalScene>& scenes, double match_tol) {
    std::vector<double> ratios;
    for (const auto& s : scenes) {
        const auto m = match_detections(s.detections, s.truth, match_tol);
        const auto codas = s.truth.codas();
        for (std::size_t c = 0; c < codas.size(); ++c) {
            if (m.truth_best_clicks[c] > 0) {
                ratios.push_back(static_cast<double>(m.truth_best_clicks[c]) /
                                 static_cast<double>(codas[c]->click_times.size()));
            }
        }
    }
    return ratios;
}

std::vector<CdfPoint> click_ratio_cdf(const std::vector<double>& ratios) {
    std::vector<double> sorted = ratios;
    std::sort(sorted.begin(), sorted.end());
    std::vector<CdfPoint> out;
    const auto n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
        out.push_back({sorted[i], static_cast<double>(i + 1) / n});
    }
    return out;
}

}  // namespace coda
