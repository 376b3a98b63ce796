#include "coda/transient.hpp"

#include "coda/dsp.hpp"
#include "coda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace coda {
namespace {

constexpr int kBandpassOrder = 4;

double ratio_db(double peak, double floor) {
    if (floor <= 0.0) return peak > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return 10.0 * std::log10(std::max(peak, 0.0) / floor);
}

}  // namespace

SampledSignal bandpass(const SampledSignal& signal, double f_lo, double f_hi) {
    if (signal.samples.empty()) throw ArgumentError("bandpass: empty signal");
    const auto filter = dsp::butterworth_bandpass(kBandpassOrder, f_lo, f_hi, signal.sample_rate);
    SampledSignal out = signal;
    out.samples = dsp::filtfilt(filter, signal.samples);
    return out;
}

SampledSignal bandpass(const AnalysisBuffer& buffer, double f_lo, double f_hi) {
    return bandpass(buffer.signal, f_lo, f_hi);
}

EnergyEnvelope tkeo(std::span<const double> x, double sample_rate) {
    if (x.size() < 3) throw ArgumentError("tkeo: need at least 3 samples");
    EnergyEnvelope z;
    z.sample_rate = sample_rate;
    z.values.resize(x.size() - 2);
    for (std::size_t n = 1; n + 1 < x.size(); ++n) {
        z.values[n - 1] = x[n] * x[n] - x[n - 1] * x[n + 1];
    }
    return z;
}

EnergyEnvelope tkeo(const SampledSignal& x) { return tkeo(x.samples, x.sample_rate); }

std::vector<Peak> detect_peaks(const EnergyEnvelope& z, const PeakPickingOptions& options) {
    if (!(options.min_dist > 0.0)) throw ArgumentError("detect_peaks: min_dist must be positive");
    const auto& v = z.values;
    const std::size_t n = v.size();
    if (n < 3 || options.max_peaks == 0) return {};

    const double fs = z.sample_rate;
    const auto dist = static_cast<std::size_t>(std::max<long long>(1, std::llround(options.min_dist * fs)));
    const auto half_noise = static_cast<std::size_t>(std::llround(options.noise_window * fs / 2.0));

    // Local maxima; plateaus count once at their left edge.
    std::vector<std::size_t> maxima;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (v[k] > v[k - 1] && v[k] >= v[k + 1] && v[k] > 0.0) maxima.push_back(k);
    }
    std::stable_sort(maxima.begin(), maxima.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });

    // Distance suppression, strongest first.
    std::vector<std::size_t> kept;
    std::vector<char> blocked(n, 0);
    for (std::size_t k : maxima) {
        if (blocked[k]) continue;
        kept.push_back(k);
        const std::size_t lo = k >= dist - 1 ? k - (dist - 1) : 0;
        const std::size_t hi = std::min(n - 1, k + dist - 1);
        std::fill(blocked.begin() + static_cast<std::ptrdiff_t>(lo),
                  blocked.begin() + static_cast<std::ptrdiff_t>(hi) + 1, 1);
    }

    // Noise-floor test and tail suppression in strength order.
    std::vector<Peak> accepted;
    std::vector<double> scratch;
    const double tail_ratio = std::pow(10.0, options.tail_drop_db / 10.0);
    const auto tail = static_cast<std::size_t>(std::llround(std::max(0.0, options.tail_window) * fs));
    for (std::size_t k : kept) {
        if (accepted.size() >= options.max_peaks) break;

        scratch.clear();
        const std::size_t lo = k >= half_noise ? k - half_noise : 0;
        const std::size_t hi = std::min(n - 1, k + half_noise);
        for (std::size_t j = lo; j <= hi; ++j) {
            const std::size_t d = j > k ? j - k : k - j;
            if (d < dist) continue;
            scratch.push_back(std::abs(v[j]));
        }
        const double snr = ratio_db(v[k], dsp::median(scratch));
        if (snr < options.snr_min_db) continue;

        if (tail > 0) {
            const bool is_tail = std::any_of(accepted.begin(), accepted.end(), [&](const Peak& p) {
                const std::size_t zi = p.index - 1;
                return zi < k && k - zi <= tail && v[zi] >= tail_ratio * v[k];
            });
            if (is_tail) continue;
        }
        accepted.push_back(Peak{k + 1, snr});
    }

    std::sort(accepted.begin(), accepted.end(), [](const Peak& a, const Peak& b) { return a.index < b.index; });
    return accepted;
}

std::vector<std::size_t> detect_peaks(const EnergyEnvelope& z, double min_dist, double snr_min_db,
                                      std::size_t max_peaks) {
    PeakPickingOptions options;
    options.min_dist = min_dist;
    options.snr_min_db = snr_min_db;
    options.max_peaks = max_peaks;
    std::vector<std::size_t> out;
    for (const auto& p : detect_peaks(z, options)) out.push_back(p.index);
    return out;
}

std::vector<ClickEvent> extract_rois(const AnalysisBuffer& buffer, std::span<const Peak> peaks,
                                     double roi_len) {
    if (!(roi_len > 0.0)) throw ArgumentError("extract_rois: roi_len must be positive");
    const double fs = buffer.signal.sample_rate;
    const auto& x = buffer.signal.samples;
    const auto len = static_cast<std::size_t>(std::max<long long>(1, std::llround(roi_len * fs)));
    const auto half = static_cast<long long>(len / 2);

    std::vector<ClickEvent> out;
    out.reserve(peaks.size());
    for (const auto& p : peaks) {
        ClickEvent c;
        c.sample_rate = fs;
        c.peak_time = buffer.start_time + static_cast<double>(p.index) / fs;
        c.snr_db = p.snr_db;
        c.waveform.assign(len, 0.0);
        const long long first = static_cast<long long>(p.index) - half;
        for (std::size_t i = 0; i < len; ++i) {
            const long long src = first + static_cast<long long>(i);
            if (src >= 0 && src < static_cast<long long>(x.size())) c.waveform[i] = x[static_cast<std::size_t>(src)];
        }
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<ClickEvent> extract_rois(const AnalysisBuffer& buffer, std::span<const std::size_t> peaks,
                                     double roi_len) {
    std::vector<Peak> p;
    p.reserve(peaks.size());
    for (std::size_t i : peaks) p.push_back(Peak{i, std::numeric_limits<double>::infinity()});
    return extract_rois(buffer, p, roi_len);
}

}  // namespace coda
