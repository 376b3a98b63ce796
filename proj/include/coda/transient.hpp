#pragma once

#include "coda/audio.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace coda {

// Teager-Kaiser energy z_n = x_n^2 - x_{n-1} x_{n+1}. values[k] belongs to
// input sample k + 1, so the envelope is two samples shorter than its input.
// Values are not clamped: the operator can go negative on broadband noise.
struct EnergyEnvelope {
    std::vector<double> values;
    double sample_rate = 0.0;
};

struct ClickFeatures {
    std::optional<double> ipi_ms;  // nullopt: no multipulse structure found
    double intensity_rms = 0.0;
    int multipulse_count = 0;
    double resonant_freq_hz = 0.0;
};

struct ClickEvent {
    double peak_time = 0.0;  // absolute seconds
    double sample_rate = 0.0;
    std::vector<double> waveform;  // ROI centred on the peak
    double snr_db = 0.0;
    std::optional<ClickFeatures> features;
};

struct PeakPickingOptions {
    double min_dist = 0.008;     // seconds
    double snr_min_db = 10.0;
    std::size_t max_peaks = 20;
    double noise_window = 0.200;  // seconds, centred on the candidate
    // Pulse-train tail suppression: a peak is dropped when an earlier accepted
    // peak within tail_window is at least tail_drop_db stronger. 0 disables.
    double tail_window = 0.0;
    double tail_drop_db = 2.0;
};

struct Peak {
    std::size_t index = 0;  // sample index into the signal the envelope came from
    double snr_db = 0.0;
};

// Zero-phase band-pass (4th-order Butterworth prototype, forward-backward).
SampledSignal bandpass(const AnalysisBuffer& buffer, double f_lo, double f_hi);
SampledSignal bandpass(const SampledSignal& signal, double f_lo, double f_hi);

EnergyEnvelope tkeo(std::span<const double> x, double sample_rate);
EnergyEnvelope tkeo(const SampledSignal& x);

// Local maxima of z at least min_dist apart (strongest wins), whose ratio to the
// local noise floor reaches snr_min_db; at most max_peaks, strongest kept.
// Returned in increasing index order. The noise floor is the median |z| over
// noise_window around the candidate with +-min_dist excluded.
std::vector<Peak> detect_peaks(const EnergyEnvelope& z, const PeakPickingOptions& options);
std::vector<std::size_t> detect_peaks(const EnergyEnvelope& z, double min_dist, double snr_min_db,
                                      std::size_t max_peaks);

// One ClickEvent per peak, window of roi_len seconds centred on the peak sample,
// zero-padded where it runs past the buffer edges.
std::vector<ClickEvent> extract_rois(const AnalysisBuffer& buffer, std::span<const Peak> peaks,
                                     double roi_len);
std::vector<ClickEvent> extract_rois(const AnalysisBuffer& buffer, std::span<const std::size_t> peaks,
                                     double roi_len);

}  // namespace coda
