#include "coda/config.hpp"

#include "coda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace coda {
namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

const ConfigKey* find_key(const std::string& name) {
    const auto& reg = RunConfig::registry();
    const auto it = std::find_if(reg.begin(), reg.end(), [&](const ConfigKey& k) { return k.name == name; });
    return it == reg.end() ? nullptr : &*it;
}

void validate(const ConfigKey& key, const std::string& value) {
    auto fail = [&](const char* what) {
        throw ArgumentError("config key " + key.name + ": '" + value + "' is not " + what);
    };
    switch (key.kind) {
        case ValueKind::real: {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(value, &used);
            } catch (const std::exception&) {
                fail("a number");
            }
            if (used != value.size() || !std::isfinite(v)) fail("a finite number");
            break;
        }
        case ValueKind::integer: {
            std::size_t used = 0;
            try {
                (void)std::stoll(value, &used);
            } catch (const std::exception&) {
                fail("an integer");
            }
            if (used != value.size()) fail("an integer");
            break;
        }
        case ValueKind::boolean:
            if (value != "true" && value != "false") fail("true or false");
            break;
        case ValueKind::text:
            break;
    }
}

}  // namespace

const std::vector<ConfigKey>& RunConfig::registry() {
    using K = ValueKind;
    static const std::vector<ConfigKey> keys = {
        {"audio.channel", K::integer, "0", "input channel index"},
        {"audio.buffer_sec", K::real, "7", "analysis buffer length (s)"},
        {"audio.overlap_sec", K::real, "2", "overlap between consecutive buffers (s)"},
        {"detector.band_lo", K::real, "2000", "band-pass lower edge (Hz)"},
        {"detector.band_hi", K::real, "24000", "band-pass upper edge (Hz)"},
        {"detector.min_peak_dist_ms", K::real, "8", "minimum spacing of energy peaks (ms)"},
        {"detector.snr_min_db", K::real, "10", "peak-to-noise-floor threshold (dB)"},
        {"detector.max_peaks", K::integer, "20", "maximum peaks kept per buffer"},
        {"detector.noise_window_ms", K::real, "200", "window for the noise-floor median (ms)"},
        {"detector.tail_ms", K::real, "30", "pulse-tail suppression window (ms); 0 disables"},
        {"detector.tail_drop_db", K::real, "2", "level drop that marks a pulse-tail peak (dB)"},
        {"detector.roi_ms", K::real, "40", "click window length (ms)"},
        {"similarity.weights.corr", K::real, "0.4", "weight of waveform similarity"},
        {"similarity.weights.ipi", K::real, "0.3", "weight of inter-pulse-interval similarity"},
        {"similarity.weights.intensity", K::real, "0.3", "weight of intensity similarity"},
        {"similarity.lag_ms", K::real, "1", "alignment search for waveform similarity (ms)"},
        {"features.band_lo", K::real, "2000", "lower edge of the cepstrum and phase-slope band (Hz)"},
        {"features.band_hi", K::real, "24000", "upper edge of the cepstrum and phase-slope band (Hz)"},
        {"ipi.min_ms", K::real, "1", "shortest inter-pulse interval searched (ms)"},
        {"ipi.max_ms", K::real, "8", "longest inter-pulse interval searched (ms)"},
        {"ipi.peak_ratio", K::real, "3", "cepstral peak over cepstral median needed for an IPI"},
        {"ipi.min_echo", K::real, "0.05", "weakest echo, relative to the first pulse, accepted as an IPI"},
        {"psf.frame_ms", K::real, "1", "phase-slope frame length (ms)"},
        {"psf.freqs", K::integer, "16", "frequencies averaged in the phase slope"},
        {"psf.hysteresis", K::real, "0.05", "zero-crossing hysteresis, fraction of the PSF range"},
        {"psf.gate_db", K::real, "5", "frame energy over the median frame energy for counting (dB)"},
        {"psf.min_dwell", K::real, "0.25", "negative run needed before a crossing counts, fraction of the frame"},
        {"spectrum.frame", K::integer, "512", "resonance spectrum frame length (samples)"},
        {"spectrum.zero_pad", K::integer, "8", "resonance spectrum zero-padding factor"},
        {"cluster.rho_d", K::real, "1.0", "detection threshold on the cluster utility"},
        {"cluster.alpha1", K::real, "0.5", "weight of the temporal likelihood"},
        {"cluster.alpha2", K::real, "0.5", "weight of the low-rank penalty"},
        {"cluster.p_min", K::real, "3", "minimum mean pulse count (constrained mode)"},
        {"cluster.fr_max_hz", K::real, "12000", "maximum mean resonant frequency (constrained mode)"},
        {"cluster.constrained", K::boolean, "true", "apply the pulse-count and resonance constraints"},
        {"cluster.multipulse_constraint", K::boolean, "true", "pulse-count constraint in constrained mode"},
        {"cluster.resonance_constraint", K::boolean, "true", "resonance constraint in constrained mode"},
        {"cluster.min_clicks", K::integer, "3", "fewest clicks in a coda"},
        {"cluster.max_clicks", K::integer, "10", "most clicks in a coda"},
        {"cluster.max_span_sec", K::real, "2", "longest coda (s)"},
        {"classify.unknown_floor", K::real, "1e-6", "relative density below which a coda is unknown"},
        {"dedup.tol_ms", K::real, "0.5", "click-time tolerance for cross-buffer duplicates (ms)"},
        {"run.threads", K::integer, "0", "worker threads for buffer processing; 0 uses every core"},
        {"run.seed", K::integer, "0", "seed for every random choice"},
        {"train.k_max", K::integer, "3", "largest mixture size tried per type"},
        {"train.q", K::integer, "0", "PCA dimension; 0 picks it from explained variance"},
        {"train.variance", K::real, "0.95", "explained-variance target for the PCA dimension"},
        {"train.fit_beta", K::boolean, "true", "fit the generalized-Gaussian shape"},
        {"train.fit_m", K::boolean, "false", "fit the generalized-Gaussian scale"},
        {"analyze.pair_window_sec", K::real, "7", "window for signal/response pairing (s)"},
        {"analyze.amp_gap_db", K::real, "6", "intensity gap separating whales (dB)"},
        {"analyze.delta_ici_mode", K::text, "mean_deviation", "mean_deviation or rms"},
        {"analyze.min_cluster_size", K::integer, "10", "smallest discovered coda cluster"},
        {"analyze.radius_factor", K::real, "0.5", "discovery radius over the median pairwise distance"},
        {"eval.match_tol_ms", K::real, "2", "click matching tolerance (ms)"},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& k : registry()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto* k = find_key(key);
    if (!k) throw ArgumentError("unknown config key '" + key + "'");
    const std::string v = trim(value);
    validate(*k, v);
    if (key == "analyze.delta_ici_mode" && v != "mean_deviation" && v != "rms") {
        throw ArgumentError("config key analyze.delta_ici_mode must be mean_deviation or rms");
    }
    values_[key] = v;
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ArgumentError("unknown config key '" + key + "'");
    return it->second;
}

double RunConfig::real(const std::string& key) const { return std::stod(get(key)); }
long long RunConfig::integer(const std::string& key) const { return std::stoll(get(key)); }
bool RunConfig::boolean(const std::string& key) const { return get(key) == "true"; }

void RunConfig::load_text(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ArgumentError(origin + ":" + std::to_string(line_no) + ": expected key=value");
        }
        try {
            set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ArgumentError& e) {
            throw ArgumentError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
    return os.str();
}

DetectorConfig detector_config(const RunConfig& c) {
    DetectorConfig d;
    d.channel = static_cast<int>(c.integer("audio.channel"));
    d.buffer_sec = c.real("audio.buffer_sec");
    d.overlap_sec = c.real("audio.overlap_sec");
    d.band_lo = c.real("detector.band_lo");
    d.band_hi = c.real("detector.band_hi");
    d.peaks.min_dist = c.real("detector.min_peak_dist_ms") * 1e-3;
    d.peaks.snr_min_db = c.real("detector.snr_min_db");
    const auto max_peaks = c.integer("detector.max_peaks");
    if (max_peaks < 0) throw ArgumentError("detector.max_peaks must be non-negative");
    d.peaks.max_peaks = static_cast<std::size_t>(max_peaks);
    d.peaks.noise_window = c.real("detector.noise_window_ms") * 1e-3;
    d.peaks.tail_window = c.real("detector.tail_ms") * 1e-3;
    d.peaks.tail_drop_db = c.real("detector.tail_drop_db");
    d.roi_sec = c.real("detector.roi_ms") * 1e-3;

    auto& f = d.features;
    f.weights = {c.real("similarity.weights.corr"), c.real("similarity.weights.ipi"),
                 c.real("similarity.weights.intensity")};
    if (std::abs(f.weights.corr + f.weights.ipi + f.weights.intensity - 1.0) > 1e-9) {
        throw ArgumentError("similarity weights must sum to 1");
    }
    f.lag_ms = c.real("similarity.lag_ms");
    f.band_lo = c.real("features.band_lo");
    f.band_hi = c.real("features.band_hi");
    f.ipi_min_ms = c.real("ipi.min_ms");
    f.ipi_max_ms = c.real("ipi.max_ms");
    f.ipi_peak_ratio = c.real("ipi.peak_ratio");
    f.ipi_min_echo = c.real("ipi.min_echo");
    f.psf_frame_ms = c.real("psf.frame_ms");
    f.psf_freqs = static_cast<int>(c.integer("psf.freqs"));
    f.psf_hysteresis = c.real("psf.hysteresis");
    f.psf_gate_db = c.real("psf.gate_db");
    f.psf_min_dwell = c.real("psf.min_dwell");
    f.spectrum_frame = static_cast<std::size_t>(std::max(2LL, c.integer("spectrum.frame")));
    f.spectrum_zero_pad = static_cast<std::size_t>(std::max(1LL, c.integer("spectrum.zero_pad")));

    auto& k = d.cluster;
    k.rho_d = c.real("cluster.rho_d");
    k.alpha1 = c.real("cluster.alpha1");
    k.alpha2 = c.real("cluster.alpha2");
    k.p_min = c.real("cluster.p_min");
    k.fr_max = c.real("cluster.fr_max_hz");
    k.constrained = c.boolean("cluster.constrained");
    k.multipulse_constraint = c.boolean("cluster.multipulse_constraint");
    k.resonance_constraint = c.boolean("cluster.resonance_constraint");
    k.min_clicks = static_cast<int>(c.integer("cluster.min_clicks"));
    k.max_clicks = static_cast<int>(c.integer("cluster.max_clicks"));
    k.max_span = c.real("cluster.max_span_sec");
    if (k.alpha1 < 0.0 || k.alpha2 < 0.0) throw ArgumentError("cluster.alpha1 and cluster.alpha2 must be non-negative");
    if (k.p_min < 1.0) throw ArgumentError("cluster.p_min must be >= 1");
    if (k.min_clicks < 2 || k.min_clicks > k.max_clicks) throw ArgumentError("cluster click-count range is invalid");

    d.unknown_floor = c.real("classify.unknown_floor");
    d.dedup_tol = c.real("dedup.tol_ms") * 1e-3;
    const auto threads = c.integer("run.threads");
    if (threads < 0) throw ArgumentError("run.threads must be non-negative");
    d.threads = threads == 0 ? static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))
                             : static_cast<int>(threads);
    return d;
}

TrainOptions train_options(const RunConfig& c) {
    TrainOptions t;
    t.k_max = static_cast<int>(c.integer("train.k_max"));
    if (t.k_max < 1) throw ArgumentError("train.k_max must be >= 1");
    const auto q = c.integer("train.q");
    if (q < 0) throw ArgumentError("train.q must be >= 0");
    if (q > 0) t.q = static_cast<int>(q);
    t.variance_target = c.real("train.variance");
    t.seed = static_cast<std::uint64_t>(c.integer("run.seed"));
    t.mixture.fit_beta = c.boolean("train.fit_beta");
    t.mixture.fit_m = c.boolean("train.fit_m");
    return t;
}

AnalyzeOptions analyze_options(const RunConfig& c) {
    AnalyzeOptions a;
    a.pairs.window = c.real("analyze.pair_window_sec");
    a.pairs.amp_gap_db = c.real("analyze.amp_gap_db");
    a.delta_ici_mode = c.get("analyze.delta_ici_mode") == "rms" ? DeltaIciMode::rms : DeltaIciMode::mean_deviation;
    const auto min_size = c.integer("analyze.min_cluster_size");
    if (min_size < 1) throw ArgumentError("analyze.min_cluster_size must be >= 1");
    a.discovery.min_cluster_size = static_cast<std::size_t>(min_size);
    a.discovery.radius_factor = c.real("analyze.radius_factor");
    return a;
}

}  // namespace coda
