#include "coda/features.hpp"

#include "coda/dsp.hpp"
#include "coda/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace coda {
namespace {

using dsp::cplx;

// Plain complex product; the library operator goes through a slow
// out-of-line routine that handles infinities.
inline cplx mul(cplx a, cplx b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

double energy(std::span<const double> y) {
    return std::inner_product(y.begin(), y.end(), y.begin(), 0.0);
}

void require_rate(const ClickEvent& click) {
    if (!(click.sample_rate > 0.0)) throw ArgumentError("click has no sample rate");
}

double relative_gap_similarity(double a, double b, const char* what) {
    if (!(a > 0.0) || !(b > 0.0)) throw ArgumentError(std::string(what) + ": arguments must be positive");
    return 1.0 - std::abs(a - b) / std::max(a, b);
}

struct PsfTrace {
    std::vector<double> values;
    std::vector<double> frame_energy;
};

// Sliding-DFT evaluation of the phase slope. For frame s covering z[s..s+L-1],
// X = sum z[s+n] e^{-jwn} and Y = sum (n - c) z[s+n] e^{-jwn} with c the frame
// centre, so an isolated impulse at offset n0 gives a PSF of -(n0 - c).
PsfTrace psf_trace(const ClickEvent& click, const FeatureConfig& config) {
    require_rate(click);
    const double fs = click.sample_rate;
    const auto frame = static_cast<std::size_t>(std::llround(config.psf_frame_ms * 1e-3 * fs));
    if (frame < 2) throw ArgumentError("psf: frame shorter than 2 samples");
    if (config.psf_freqs < 1) throw ArgumentError("psf: need at least one frequency");
    if (click.waveform.size() < 3) return {};
    const auto z = tkeo(click.waveform, fs).values;
    if (z.size() < frame) return {};

    const int J = config.psf_freqs;
    const double hi = std::min(config.band_hi, 0.5 * fs);
    std::vector<double> omega(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
        const double f = J == 1 ? 0.5 * (config.band_lo + hi)
                                : config.band_lo + (hi - config.band_lo) * j / (J - 1.0);
        omega[static_cast<std::size_t>(j)] = 2.0 * std::numbers::pi * f / fs;
    }

    const double L = static_cast<double>(frame);
    const double centre = (L - 1.0) / 2.0;
    const std::size_t frames = z.size() - frame + 1;
    std::vector<cplx> X(omega.size()), Yu(omega.size()), rot(omega.size()), tail(omega.size());
    for (std::size_t j = 0; j < omega.size(); ++j) {
        rot[j] = std::polar(1.0, omega[j]);
        tail[j] = std::polar(1.0, -omega[j] * L);
    }

    std::vector<cplx> phase(omega.size() * frame);
    for (std::size_t j = 0; j < omega.size(); ++j)
        for (std::size_t n = 0; n < frame; ++n) phase[j * frame + n] = std::polar(1.0, -omega[j] * static_cast<double>(n));

    auto direct = [&](std::size_t s) {
        for (std::size_t j = 0; j < omega.size(); ++j) {
            cplx x(0.0, 0.0), y(0.0, 0.0);
            for (std::size_t n = 0; n < frame; ++n) {
                const cplx e = z[s + n] * phase[j * frame + n];
                x += e;
                y += static_cast<double>(n) * e;
            }
            X[j] = x;
            Yu[j] = y;
        }
    };

    constexpr std::size_t kResync = 256;
    std::vector<double> slopes;
    slopes.reserve(omega.size());
    PsfTrace out;
    out.values.resize(frames);
    out.frame_energy.resize(frames);
    double running = std::accumulate(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(frame), 0.0);
    for (std::size_t s = 0; s < frames; ++s) {
        if (s % kResync == 0) {
            direct(s);
            running = std::accumulate(z.begin() + static_cast<std::ptrdiff_t>(s),
                                      z.begin() + static_cast<std::ptrdiff_t>(s + frame), 0.0);
        }
        out.frame_energy[s] = running;

        // Median over frequencies: bins where the envelope spectrum is mostly
        // noise give wild per-frequency slopes that would swamp a plain mean.
        slopes.clear();
        double scale = 0.0;
        for (const auto& x : X) scale = std::max(scale, std::norm(x));
        for (std::size_t j = 0; j < omega.size(); ++j) {
            const double den = std::norm(X[j]);
            if (!(den > 1e-24 * scale) || den == 0.0) continue;
            const cplx y = Yu[j] - centre * X[j];
            slopes.push_back((X[j].real() * y.real() + X[j].imag() * y.imag()) / den);
        }
        out.values[s] = slopes.empty() ? 0.0 : -dsp::median(slopes);

        if (s + 1 < frames) {
            const double leaving = z[s];
            const double entering = z[s + frame];
            for (std::size_t j = 0; j < omega.size(); ++j) {
                const cplx in = entering * tail[j];
                const cplx x_old = X[j];
                X[j] = mul(rot[j], x_old - leaving + in);
                Yu[j] = mul(rot[j], Yu[j] - x_old + leaving + (L - 1.0) * in);
            }
            running += entering - leaving;
        }
    }
    return out;
}

// Log magnitude over the part of [f_lo, f_hi] that lies within 40 dB of the
// spectral peak, with its quadratic trend removed and Hann-tapered edges, so
// only the echo ripple survives into the cepstrum. A single Gabor pulse has an
// exactly quadratic log spectrum and leaves nothing behind.
struct LogSpectrum {
    std::vector<double> values;  // full length nfft, conjugate symmetric
    double taper_sum = 0.0;      // an echo of relative amplitude g gives a cepstral peak of about g * taper_sum / nfft
};

LogSpectrum band_log_spectrum(std::span<const double> y, double fs, double f_lo, double f_hi, std::size_t nfft) {
    const auto spec = dsp::rfft(y, nfft);
    LogSpectrum out;
    auto& logmag = out.values;
    logmag.assign(nfft, 0.0);
    double peak = 0.0;
    std::size_t k_lo = nfft, k_hi = 0;
    for (std::size_t k = 1; k < nfft / 2; ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(nfft);
        if (f >= f_lo && f <= f_hi) peak = std::max(peak, std::norm(spec[k]));
    }
    if (peak <= 0.0) return out;
    for (std::size_t k = 1; k < nfft / 2; ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(nfft);
        if (f >= f_lo && f <= f_hi && std::norm(spec[k]) >= 1e-4 * peak) {
            k_lo = std::min(k_lo, k);
            k_hi = std::max(k_hi, k);
        }
    }
    if (k_hi < k_lo + 8) return out;

    const auto n = static_cast<Eigen::Index>(k_hi - k_lo + 1);
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd v(n);
    const double floor = 1e-6 * peak;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
        a(i, 0) = 1.0;
        a(i, 1) = t;
        a(i, 2) = t * t;
        v(i) = 0.5 * std::log(std::norm(spec[k_lo + static_cast<std::size_t>(i)]) + floor);
    }
    const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(v);
    const Eigen::VectorXd resid = v - a * coef;
    const auto taper = dsp::hann(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t k = k_lo + static_cast<std::size_t>(i);
        logmag[k] = resid(i) * taper[static_cast<std::size_t>(i)];
        logmag[nfft - k] = logmag[k];
        out.taper_sum += taper[static_cast<std::size_t>(i)];
    }
    return out;
}

}  // namespace

double shape_similarity(std::span<const double> y_i, std::span<const double> y_j, std::size_t max_lag) {
    const double ei = energy(y_i);
    const double ej = energy(y_j);
    if (!(ei > 0.0) || !(ej > 0.0)) throw ArgumentError("shape_similarity: zero-energy waveform");
    const double norm = std::sqrt(ei * ej);
    const auto ni = static_cast<long long>(y_i.size());
    const auto nj = static_cast<long long>(y_j.size());
    const auto lag_cap = static_cast<long long>(max_lag);

    double best = -std::numeric_limits<double>::infinity();
    for (long long lag = -lag_cap; lag <= lag_cap; ++lag) {
        // sum_n y_i[n] * y_j[n + lag]
        const long long lo = std::max(0LL, -lag);
        const long long hi = std::min(ni, nj - lag);
        double acc = 0.0;
        for (long long n = lo; n < hi; ++n) acc += y_i[static_cast<std::size_t>(n)] * y_j[static_cast<std::size_t>(n + lag)];
        best = std::max(best, acc / norm);
    }
    return std::clamp(best, -1.0, 1.0);
}

double shape_similarity(const ClickEvent& a, const ClickEvent& b, const FeatureConfig& config) {
    require_rate(a);
    const auto lag = static_cast<std::size_t>(std::llround(config.lag_ms * 1e-3 * a.sample_rate));
    return shape_similarity(a.waveform, b.waveform, lag);
}

std::optional<double> estimate_ipi(const ClickEvent& click, const FeatureConfig& config) {
    require_rate(click);
    const double fs = click.sample_rate;
    const auto q_lo = static_cast<std::size_t>(std::ceil(config.ipi_min_ms * 1e-3 * fs));
    const auto q_hi = static_cast<std::size_t>(std::floor(config.ipi_max_ms * 1e-3 * fs));
    if (click.waveform.size() < 2 * q_hi) {
        throw ArgumentError("estimate_ipi: waveform shorter than twice the maximum IPI");
    }
    if (energy(click.waveform) <= 0.0) return std::nullopt;

    const std::size_t nfft = dsp::next_pow2(click.waveform.size());
    const double hi = std::min(config.band_hi, 0.5 * fs);
    const auto logspec = band_log_spectrum(click.waveform, fs, config.band_lo, hi, nfft);
    if (!(logspec.taper_sum > 0.0)) return std::nullopt;
    std::vector<cplx> buf(logspec.values.begin(), logspec.values.end());
    dsp::fft(buf, true);

    std::vector<double> cep;
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t q = q_lo; q <= q_hi && q < nfft / 2; ++q) {
        const double v = buf[q].real();
        cep.push_back(std::abs(v));
        if (v > best_val) {
            best_val = v;
            best = q;
        }
    }
    if (cep.empty()) return std::nullopt;
    const double floor = dsp::median(cep);
    if (!(best_val > config.ipi_peak_ratio * floor) || best_val <= 0.0) return std::nullopt;
    const double echo = best_val * static_cast<double>(nfft) / logspec.taper_sum;
    if (echo < config.ipi_min_echo) return std::nullopt;

    // Parabolic refinement of the quefrency peak.
    double q = static_cast<double>(best);
    if (best > q_lo && best < q_hi) {
        const double a = buf[best - 1].real(), b = buf[best].real(), c = buf[best + 1].real();
        const double den = a - 2.0 * b + c;
        if (den < 0.0) q += 0.5 * (a - c) / den;
    }
    return q / fs * 1e3;
}

double ipi_similarity(double ipi_i, double ipi_j) { return relative_gap_similarity(ipi_i, ipi_j, "ipi_similarity"); }

double intensity_similarity(double i_i, double i_j) {
    return relative_gap_similarity(i_i, i_j, "intensity_similarity");
}

double combined_similarity(double s_shape, double s_ipi, double s_int, const SimilarityWeights& w) {
    if (std::abs(w.corr + w.ipi + w.intensity - 1.0) > 1e-9) {
        throw ArgumentError("similarity weights must sum to 1");
    }
    return w.corr * s_shape + w.ipi * s_ipi + w.intensity * s_int;
}

std::vector<double> psf(const ClickEvent& click, const FeatureConfig& config) {
    return psf_trace(click, config).values;
}

int count_multipulses(const ClickEvent& click, const FeatureConfig& config) {
    const auto trace = psf_trace(click, config);
    if (trace.values.empty()) return 0;

    const double peak_energy = *std::max_element(trace.frame_energy.begin(), trace.frame_energy.end());
    if (!(peak_energy > 0.0)) return 0;
    std::vector<double> mags;
    mags.reserve(trace.frame_energy.size());
    for (double e : trace.frame_energy) mags.push_back(std::abs(e));
    const double gate = std::max(std::pow(10.0, config.psf_gate_db / 10.0) * dsp::median(mags), 1e-3 * peak_energy);

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t s = 0; s < trace.values.size(); ++s) {
        if (trace.frame_energy[s] <= gate) continue;
        lo = std::min(lo, trace.values[s]);
        hi = std::max(hi, trace.values[s]);
    }
    if (!(hi > lo)) return 0;
    const double h = config.psf_hysteresis * (hi - lo);

    // A pulse sweeping through the frame holds the PSF negative for about half
    // a frame before the crossing; one-frame excursions at frame edges do not.
    const auto frame = static_cast<std::size_t>(std::llround(config.psf_frame_ms * 1e-3 * click.sample_rate));
    const auto dwell = static_cast<std::size_t>(std::ceil(config.psf_min_dwell * static_cast<double>(frame)));

    enum class State { unknown, negative, positive };
    State state = State::unknown;
    std::size_t negative_run = 0;
    int count = 0;
    for (std::size_t s = 0; s < trace.values.size(); ++s) {
        if (trace.frame_energy[s] <= gate) {
            state = State::unknown;
            continue;
        }
        const double v = trace.values[s];
        if (v < -h) {
            if (state != State::negative) negative_run = 0;
            state = State::negative;
        } else if (v > h) {
            if (state == State::negative && negative_run >= dwell) ++count;
            state = State::positive;
        }
        if (state == State::negative) ++negative_run;
    }
    return count;
}

double resonant_frequency(const ClickEvent& click, const FeatureConfig& config) {
    require_rate(click);
    const auto& y = click.waveform;
    if (!(energy(y) > 0.0)) throw ArgumentError("resonant_frequency: zero-energy waveform");

    const std::size_t frame = std::min(config.spectrum_frame, y.size());
    const std::size_t hop = std::max<std::size_t>(1, frame / 2);
    const std::size_t nfft = dsp::next_pow2(frame * std::max<std::size_t>(1, config.spectrum_zero_pad));
    const auto window = dsp::hann(frame);

    std::vector<double> power(nfft / 2 + 1, 0.0);
    std::vector<double> seg(frame);
    for (std::size_t start = 0; start + frame <= y.size(); start += hop) {
        for (std::size_t i = 0; i < frame; ++i) seg[i] = y[start + i] * window[i];
        const auto spec = dsp::rfft(seg, nfft);
        for (std::size_t k = 0; k < power.size(); ++k) power[k] += std::norm(spec[k]);
        if (start + frame == y.size()) break;
    }

    std::size_t best = 1;
    for (std::size_t k = 1; k + 1 < power.size(); ++k) {
        if (power[k] > power[best]) best = k;
    }
    double k = static_cast<double>(best);
    if (best > 0 && best + 1 < power.size()) {
        const double a = power[best - 1], b = power[best], c = power[best + 1];
        const double den = a - 2.0 * b + c;
        if (den < 0.0) k += 0.5 * (a - c) / den;
    }
    return k * click.sample_rate / static_cast<double>(nfft);
}

double intensity_rms(const ClickEvent& click) {
    if (click.waveform.empty()) return 0.0;
    return std::sqrt(energy(click.waveform) / static_cast<double>(click.waveform.size()));
}

ClickFeatures compute_features(const ClickEvent& click, const FeatureConfig& config) {
    ClickFeatures f;
    f.ipi_ms = estimate_ipi(click, config);
    f.intensity_rms = intensity_rms(click);
    f.multipulse_count = count_multipulses(click, config);
    f.resonant_freq_hz = f.intensity_rms > 0.0 ? resonant_frequency(click, config) : 0.0;
    return f;
}

namespace {

// Zero-padded spectra of every click, so each pair costs one inverse FFT
// instead of a direct sum over all lags.
struct CorrelationSpectra {
    std::vector<std::vector<dsp::cplx>> spectra;
    std::vector<double> energies;
    std::size_t max_lag = 0;
};

CorrelationSpectra correlation_spectra(std::span<const ClickEvent> clicks, const FeatureConfig& config) {
    require_rate(clicks.front());
    CorrelationSpectra out;
    out.max_lag = static_cast<std::size_t>(std::llround(config.lag_ms * 1e-3 * clicks.front().sample_rate));
    std::size_t longest = 0;
    for (const auto& c : clicks) longest = std::max(longest, c.waveform.size());
    // Long enough that no lag within max_lag wraps around.
    const std::size_t nfft = dsp::next_pow2(longest + out.max_lag + 1);
    for (const auto& c : clicks) {
        const double e = energy(c.waveform);
        if (!(e > 0.0)) throw ArgumentError("shape_similarity: zero-energy waveform");
        out.energies.push_back(e);
        out.spectra.push_back(dsp::rfft(c.waveform, nfft));
    }
    return out;
}

double spectral_shape_similarity(const CorrelationSpectra& s, std::size_t i, std::size_t j) {
    const auto& a = s.spectra[i];
    const auto& b = s.spectra[j];
    const std::size_t n = a.size();
    // ifft(conj(A) * B)[lag] = sum_n y_i[n] * y_j[n + lag], negative lags at the end.
    std::vector<dsp::cplx> prod(n);
    for (std::size_t k = 0; k < n; ++k) prod[k] = mul(std::conj(a[k]), b[k]);
    dsp::fft(prod, true);
    double best = prod[0].real();
    for (std::size_t lag = 1; lag <= s.max_lag; ++lag) best = std::max({best, prod[lag].real(), prod[n - lag].real()});
    return std::clamp(best / std::sqrt(s.energies[i] * s.energies[j]), -1.0, 1.0);
}

}  // namespace

AffinityMatrix affinity_matrix(std::span<ClickEvent> clicks, const FeatureConfig& config) {
    if (clicks.size() < 2) throw ArgumentError("affinity_matrix: need at least 2 clicks");
    for (auto& c : clicks) {
        if (!c.features) c.features = compute_features(c, config);
    }
    const auto m = static_cast<Eigen::Index>(clicks.size());
    const auto spectra = config.weights.corr != 0.0 ? correlation_spectra(clicks, config) : CorrelationSpectra{};
    AffinityMatrix out;
    out.weights = config.weights;
    out.entries = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& a = clicks[static_cast<std::size_t>(i)];
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const auto& b = clicks[static_cast<std::size_t>(j)];
            const double s_shape = config.weights.corr != 0.0
                                       ? spectral_shape_similarity(spectra, static_cast<std::size_t>(i), static_cast<std::size_t>(j))
                                       : 0.0;
            const double s_ipi = (a.features->ipi_ms && b.features->ipi_ms)
                                     ? ipi_similarity(*a.features->ipi_ms, *b.features->ipi_ms)
                                     : 0.5;
            const double s_int = intensity_similarity(a.features->intensity_rms, b.features->intensity_rms);
            const double s = combined_similarity(s_shape, s_ipi, s_int, config.weights);
            out.entries(i, j) = s;
            out.entries(j, i) = s;
        }
    }
    return out;
}

}  // namespace coda
