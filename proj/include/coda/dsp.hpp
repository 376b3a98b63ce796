#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace coda::dsp {

using cplx = std::complex<double>;

[[nodiscard]] std::size_t next_pow2(std::size_t n);

// In-place FFT backed by Eigen's FFT module; size must be a power of two.
// The inverse is scaled by 1/N.
void fft(std::vector<cplx>& x, bool inverse = false);

// Zero-pads `x` to `n` (a power of two >= x.size()) and transforms.
[[nodiscard]] std::vector<cplx> rfft(std::span<const double> x, std::size_t n);

// One second-order section: b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;
};

struct SosFilter {
    std::vector<Biquad> sections;

    [[nodiscard]] std::vector<double> apply(std::span<const double> x) const;
    [[nodiscard]] std::complex<double> response(double f_hz, double sample_rate) const;
};

// Digital Butterworth band-pass from a low-pass prototype of the given order
// (2*order poles), bilinear transform with pre-warped edges, unity gain at the
// geometric band centre.
[[nodiscard]] SosFilter butterworth_bandpass(int prototype_order, double f_lo, double f_hi,
                                             double sample_rate);

// Zero-phase filtering: forward pass, time reversal, second pass. The input is
// extended at both ends by odd reflection to suppress start-up transients.
[[nodiscard]] std::vector<double> filtfilt(const SosFilter& filter, std::span<const double> x);

// Periodic-free (symmetric) Hann window of length n.
[[nodiscard]] std::vector<double> hann(std::size_t n);

// Median of a copy; empty input yields 0.
[[nodiscard]] double median(std::vector<double> values);

}  // namespace coda::dsp
