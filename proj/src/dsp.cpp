#include "coda/dsp.hpp"

#include "coda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace coda::dsp {

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

namespace {

std::mutex plan_mutex;

// Plans are created once per size and direction. FFTW_ESTIMATE keeps the
// chosen algorithm, and so the rounding, the same from run to run.
fftw_plan plan_for(std::size_t n, bool inverse) {
    thread_local std::map<std::pair<std::size_t, bool>, fftw_plan> cache;
    const auto key = std::make_pair(n, inverse);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    std::lock_guard lock(plan_mutex);
    std::vector<cplx> scratch(n);
    auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
    const fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), p, p, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                            FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan == nullptr) throw ArgumentError("fft: could not create a plan");
    cache.emplace(key, plan);
    return plan;
}

}  // namespace

void fft(std::vector<cplx>& x, bool inverse) {
    const std::size_t n = x.size();
    if (n == 0 || (n & (n - 1)) != 0) throw ArgumentError("fft: size must be a power of two");
    if (n == 1) return;
    auto* p = reinterpret_cast<fftw_complex*>(x.data());
    fftw_execute_dft(plan_for(n, inverse), p, p);
    if (inverse) {
        const double scale = 1.0 / static_cast<double>(n);
        for (auto& v : x) v *= scale;
    }
}

std::vector<cplx> rfft(std::span<const double> x, std::size_t n) {
    if (n < x.size()) throw ArgumentError("rfft: transform shorter than input");
    std::vector<cplx> buf(n, cplx(0.0, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) buf[i] = cplx(x[i], 0.0);
    fft(buf, false);
    return buf;
}

std::vector<double> SosFilter::apply(std::span<const double> x) const {
    std::vector<double> y(x.begin(), x.end());
    for (const auto& s : sections) {
        double z1 = 0.0, z2 = 0.0;  // transposed direct form II
        for (double& v : y) {
            const double in = v;
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
    return y;
}

std::complex<double> SosFilter::response(double f_hz, double sample_rate) const {
    const double w = 2.0 * std::numbers::pi * f_hz / sample_rate;
    const cplx z1 = std::polar(1.0, -w);
    const cplx z2 = z1 * z1;
    cplx h(1.0, 0.0);
    for (const auto& s : sections) {
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    }
    return h;
}

SosFilter butterworth_bandpass(int prototype_order, double f_lo, double f_hi, double sample_rate) {
    const double nyquist = sample_rate / 2.0;
    if (prototype_order < 1) throw ArgumentError("butterworth_bandpass: order must be >= 1");
    if (!(f_lo > 0.0) || !(f_lo < f_hi)) throw ArgumentError("butterworth_bandpass: need 0 < f_lo < f_hi");
    if (!(f_hi < nyquist)) throw ArgumentError("butterworth_bandpass: f_hi must be below Nyquist");

    // Pre-warped analog edges for the bilinear map s = (z - 1) / (z + 1).
    const double w_lo = std::tan(std::numbers::pi * f_lo / sample_rate);
    const double w_hi = std::tan(std::numbers::pi * f_hi / sample_rate);
    const double bw = w_hi - w_lo;
    const double w0sq = w_lo * w_hi;

    SosFilter filter;
    const int n = prototype_order;
    for (int k = 0; k < n; ++k) {
        const double theta = std::numbers::pi * (2.0 * k + n + 1) / (2.0 * n);
        const cplx p_lp = std::polar(1.0, theta);
        // Low-pass -> band-pass: s^2 - p*bw*s + w0^2 = 0.
        const cplx pb = p_lp * bw;
        const cplx disc = std::sqrt(pb * pb - 4.0 * w0sq);
        const cplx s1 = (pb + disc) / 2.0;
        const cplx s2 = (pb - disc) / 2.0;
        Biquad bq;
        bq.b0 = 1.0;
        bq.b1 = 0.0;
        bq.b2 = -1.0;  // zeros at z = +1 (s = 0) and z = -1 (s = inf)
        constexpr double kRealTol = 1e-14;
        if (std::abs(s1.imag()) < kRealTol && std::abs(s2.imag()) < kRealTol) {
            // Real prototype pole on a wide band: two real poles share one section.
            const double z1 = ((1.0 + s1) / (1.0 - s1)).real();
            const double z2 = ((1.0 + s2) / (1.0 - s2)).real();
            bq.a1 = -(z1 + z2);
            bq.a2 = z1 * z2;
            filter.sections.push_back(bq);
            continue;
        }
        for (const cplx s : {s1, s2}) {
            if (s.imag() < 0.0) continue;  // the conjugate twin comes from p_lp*
            const cplx z = (1.0 + s) / (1.0 - s);
            bq.a1 = -2.0 * z.real();
            bq.a2 = std::norm(z);
            filter.sections.push_back(bq);
        }
    }

    const double f_center = std::atan(std::sqrt(w0sq)) * sample_rate / std::numbers::pi;
    const double g = std::abs(filter.response(f_center, sample_rate));
    const double per_section = std::pow(1.0 / g, 1.0 / static_cast<double>(filter.sections.size()));
    for (auto& s : filter.sections) {
        s.b0 *= per_section;
        s.b2 *= per_section;
    }
    return filter;
}

std::vector<double> filtfilt(const SosFilter& filter, std::span<const double> x) {
    const std::size_t n = x.size();
    if (n == 0) return {};
    const std::size_t pad = std::min<std::size_t>(n - 1, 6 * filter.sections.size() * 2 + 256);

    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    auto y = filter.apply(ext);
    std::reverse(y.begin(), y.end());
    y = filter.apply(y);
    std::reverse(y.begin(), y.end());
    return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::vector<double> hann(std::size_t n) {
    std::vector<double> w(n, 1.0);
    if (n < 2) return w;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return w;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double hi = values[mid];
    if (values.size() % 2 == 1) return hi;
    const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

}  // namespace coda::dsp
