#pragma once

#include "coda/audio.hpp"
#include "coda/temporal_model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace coda {

struct CodaDetection;

enum class EventKind { coda, echolocation, transient_noise };

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& text);

struct SceneEvent {
    EventKind kind = EventKind::coda;
    int source_id = 0;
    double start_time = 0.0;  // first click
    std::vector<double> ici;  // seconds; empty for a single click
    double ipi_ms = 4.0;
    int n_pulses = 5;
    double pulse_decay = 0.7;
    double resonance_hz = 10000.0;
    double pulse_width_ms = 0.5;
    double level_db = -20.0;  // peak amplitude of each click, dB re full scale
    std::string type_label;

    [[nodiscard]] std::vector<double> click_times() const;
};

struct ColoredNoise {
    double level_db = -60.0;  // RMS, dB re full scale
    double f_lo = 2000.0;
    double f_hi = 8000.0;
};

struct NoiseSpec {
    std::optional<double> white_db = -60.0;  // RMS, dB re full scale
    std::optional<ColoredNoise> colored;
};

struct SceneScript {
    static constexpr int kVersion = 1;
    double duration = 10.0;
    double sample_rate = 96000.0;
    std::vector<SceneEvent> events;
    NoiseSpec noise;
    std::map<int, std::vector<double>> channels;  // per-source FIR taps, tap 0 = direct path
    std::uint64_t seed = 0;
};

struct TruthEvent {
    EventKind kind = EventKind::coda;
    int source_id = 0;
    std::string type_label;
    std::vector<double> click_times;
};

struct GroundTruth {
    double duration = 0.0;
    std::vector<TruthEvent> events;

    [[nodiscard]] std::vector<const TruthEvent*> codas() const;
};

inline constexpr double kMinSameSourceGap = 0.008;

// Gabor pulses (Gaussian-windowed cosine, Gaussian sd = width / 4) spaced by
// ipi_ms with amplitudes decay^p; the first pulse centre sits at sample
// ceil(width * fs) and the peak magnitude is normalized to 1.
std::vector<double> synth_click(double ipi_ms, int n_pulses, double decay, double resonance_hz, double sample_rate,
                                double pulse_width_ms = 0.5);
std::size_t click_onset_index(double sample_rate, double pulse_width_ms = 0.5);

// Peak level (dBFS) that gives a click of the given shape the requested SNR:
// click energy over the white-noise energy in a 10 ms window.
double level_for_snr(double snr_db, double noise_rms_db, const SceneEvent& shape, double sample_rate);
double click_snr_db(const SceneEvent& event, double noise_rms_db, double sample_rate);

void validate_script(const SceneScript& script);
std::pair<SampledSignal, GroundTruth> synth_scene(const SceneScript& script);

std::string script_to_json(const SceneScript& script);
SceneScript script_from_json(const std::string& text);
SceneScript load_script(const std::filesystem::path& path);
void save_script(const SceneScript& script, const std::filesystem::path& path);
std::string truth_to_json(const GroundTruth& truth);
GroundTruth truth_from_json(const std::string& text);
void save_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_truth(const std::filesystem::path& path);

// Coda rhythm templates (ICI vectors, seconds). A type can have several tempo
// variants, which is what gives it a multi-component mixture.
struct CodaTemplate {
    std::string label;
    std::vector<std::vector<double>> variants;
};

std::vector<CodaTemplate> known_five_click_types();
std::vector<CodaTemplate> known_six_click_types();
CodaTemplate novel_six_click_type();

struct JitterOptions {
    double tempo_sd = 0.03;  // relative
    double ici_sd = 0.004;   // seconds
};

std::vector<double> jittered_ici(const CodaTemplate& t, std::mt19937_64& rng, const JitterOptions& jitter = {});
CodaDatabase synth_database(const std::vector<CodaTemplate>& types, int per_type, std::uint64_t seed,
                            const JitterOptions& jitter = {});

struct SourceVoice {
    double ipi_ms = 4.0;
    int n_pulses = 5;
    double resonance_hz = 10000.0;
    std::vector<double> channel;
};

SourceVoice random_coda_voice(std::mt19937_64& rng, double sample_rate);
std::vector<double> random_channel(std::mt19937_64& rng, double sample_rate);

struct RandomSceneOptions {
    double duration = 10.0;
    double sample_rate = 96000.0;
    double noise_db = -50.0;
    int min_codas = 1;
    int max_codas = 3;
    double snr_lo = 10.0;
    double snr_hi = 25.0;
    double echolocation_probability = 0.5;
    double echolocation_gap_lo = 3.0;  // dB below the weakest coda
    double echolocation_gap_hi = 8.0;
    bool channels = true;
    std::vector<CodaTemplate> types = known_five_click_types();
    JitterOptions jitter;
};

// 1-3 codas in separate time slots, each from its own source, with optional
// echolocation interference kept at least 40 ms from any coda click.
SceneScript random_coda_scene(std::uint64_t seed, const RandomSceneOptions& options = {});
// Two codas from different sources whose clicks interleave in time.
SceneScript random_overlap_scene(std::uint64_t seed, const RandomSceneOptions& options = {});
// Only echolocation trains (1-2 sources) and noise.
SceneScript random_echolocation_scene(std::uint64_t seed, const RandomSceneOptions& options = {});

struct MatchResult {
    std::vector<int> detection_match;       // truth coda index or -1 (false positive)
    std::vector<bool> detection_duplicate;  // matched a coda already claimed
    std::vector<int> truth_best_clicks;     // clicks recovered per truth coda
};

MatchResult match_detections(const std::vector<CodaDetection>& detections, const GroundTruth& truth,
                             double match_tol = 0.002);

struct RocPoint {
    double rho_d = 0.0;
    double pd = 0.0;
    double far_per_min = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t truth_codas = 0;
};

struct EvalScene {
    std::vector<CodaDetection> detections;
    GroundTruth truth;
};

// Detections with utility <= rho_d are dropped for each sweep value.
std::vector<RocPoint> roc_eval(const std::vector<EvalScene>& scenes, const std::vector<double>& rho_values,
                               double match_tol = 0.002);
RocPoint evaluate_at(const std::vector<EvalScene>& scenes, double rho_d, double match_tol = 0.002);

struct CdfPoint {
    double ratio = 0.0;
    double cdf = 0.0;
};

std::vector<double> click_ratios(const std::vector<EvalScene>& scenes, double match_tol = 0.002);
std::vector<CdfPoint> click_ratio_cdf(const std::vector<double>& ratios);

}  // namespace coda
