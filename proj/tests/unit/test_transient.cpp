#include "coda/errors.hpp"
#include "coda/transient.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <boost/math/constants/constants.hpp>

#include <cmath>
#include <random>

using namespace coda;
using Catch::Approx;

namespace {

// Envelope with a flat noise floor and a few narrow bumps.
EnergyEnvelope envelope_with_peaks(std::size_t n, double fs, const std::vector<std::pair<std::size_t, double>>& peaks,
                                   double floor = 1e-4) {
    EnergyEnvelope z;
    z.sample_rate = fs;
    z.values.assign(n, floor);
    for (const auto& [i, a] : peaks) {
        z.values[i] = a;
        z.values[i - 1] = 0.5 * a;
        z.values[i + 1] = 0.5 * a;
    }
    return z;
}

std::vector<std::size_t> indices(const std::vector<Peak>& peaks) {
    std::vector<std::size_t> out;
    for (const auto& p : peaks) out.push_back(p.index);
    return out;
}

}  // namespace

TEST_CASE("tkeo examples", "[transient][tkeo]") {
    const std::vector<double> x{2.0, 3.0, 4.0};
    const auto z = tkeo(x, 1.0);
    REQUIRE(z.values == std::vector<double>{1.0});

    const std::vector<double> flat(50, 0.7);
    for (double v : tkeo(flat, 1.0).values) REQUIRE(v == 0.0);

    const double omega = 0.3;
    std::vector<double> c(200);
    for (std::size_t n = 0; n < c.size(); ++n) c[n] = std::cos(omega * static_cast<double>(n));
    for (double v : tkeo(c, 1.0).values) REQUIRE(v == Approx(std::sin(omega) * std::sin(omega)).margin(1e-12));

    const std::vector<double> shorty{1.0, 2.0};
    REQUIRE_THROWS_AS(tkeo(shorty, 1.0), ArgumentError);
}

TEST_CASE("tkeo matches the direct formula bit for bit", "[transient][tkeo]") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    std::vector<double> x(1000);
    for (auto& v : x) v = n01(rng);
    REQUIRE(tkeo(x, 1.0).values == oracle::tkeo(x));
}

TEST_CASE("detect_peaks spacing and dominance", "[transient][peaks]") {
    const double fs = 96000.0;
    // 10 ms apart with 8 ms minimum spacing: both kept.
    auto z = envelope_with_peaks(96000, fs, {{40000, 1.0}, {40960, 1.0}});
    REQUIRE(detect_peaks(z, 0.008, 10.0, 20) == std::vector<std::size_t>{40001, 40961});

    // 5 ms apart: only the stronger survives.
    z = envelope_with_peaks(96000, fs, {{40000, 1.0}, {40480, 0.5}});
    REQUIRE(detect_peaks(z, 0.008, 10.0, 20) == std::vector<std::size_t>{40001});
}

TEST_CASE("detect_peaks keeps the strongest max_peaks", "[transient][peaks]") {
    const double fs = 96000.0;
    std::vector<std::pair<std::size_t, double>> bumps;
    for (int k = 0; k < 25; ++k) bumps.emplace_back(2000 + static_cast<std::size_t>(k) * 3000, 0.1 + 0.01 * k);
    const auto z = envelope_with_peaks(80000, fs, bumps);
    const auto got = detect_peaks(z, 0.008, 10.0, 20);
    REQUIRE(got.size() == 20);
    // The five weakest are the first five bumps.
    for (std::size_t k = 0; k < 20; ++k) REQUIRE(got[k] == bumps[k + 5].first + 1);
}

TEST_CASE("detect_peaks is invariant to envelope scaling", "[transient][peaks]") {
    std::mt19937_64 rng(9);
    std::exponential_distribution<double> noise(1.0);
    EnergyEnvelope z;
    z.sample_rate = 96000.0;
    z.values.resize(96000);
    for (auto& v : z.values) v = noise(rng);
    for (std::size_t i : {10000u, 30000u, 50000u, 52000u}) z.values[i] = 300.0;
    auto scaled = z;
    for (auto& v : scaled.values) v *= 1e-7;
    PeakPickingOptions opt;
    REQUIRE(indices(detect_peaks(z, opt)) == indices(detect_peaks(scaled, opt)));
}

TEST_CASE("impulse trains in white noise are recovered without spurious peaks", "[transient][peaks]") {
    const double fs = 96000.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n01(0.0, 0.01);
        SampledSignal s;
        s.sample_rate = fs;
        s.samples.resize(static_cast<std::size_t>(fs));
        for (auto& v : s.samples) v = n01(rng);
        std::vector<std::size_t> truth;
        for (int k = 0; k < 6; ++k) {
            const auto i = static_cast<std::size_t>(10000 + 14000 * k + (seed * 37) % 500);
            s.samples[i] += 0.5;  // far above 10 dB against the noise energy
            truth.push_back(i);
        }
        const auto peaks = detect_peaks(tkeo(s), 0.008, 10.0, 20);
        for (std::size_t t : truth) {
            const auto hit = std::count_if(peaks.begin(), peaks.end(), [&](std::size_t p) {
                return p + 1 >= t && p <= t + 1;
            });
            REQUIRE(hit == 1);
        }
        for (std::size_t p : peaks) {
            for (std::size_t t : truth) {
                const auto d = p > t ? p - t : t - p;
                if (d > 1) REQUIRE(d >= static_cast<std::size_t>(0.008 * fs));
            }
        }
    }
}

TEST_CASE("extract_rois centres and zero-pads", "[transient][roi]") {
    AnalysisBuffer b;
    b.signal.sample_rate = 1000.0;
    b.signal.samples.resize(100);
    for (std::size_t i = 0; i < 100; ++i) b.signal.samples[i] = static_cast<double>(i + 1);
    b.start_time = 2.0;
    b.duration = 0.1;

    const std::vector<std::size_t> centre{50};
    auto rois = extract_rois(b, centre, 0.010);
    REQUIRE(rois.size() == 1);
    REQUIRE(rois[0].waveform.size() == 10);
    REQUIRE(rois[0].peak_time == Approx(2.05));
    REQUIRE(rois[0].waveform[5] == 51.0);
    REQUIRE(rois[0].waveform[0] == 46.0);

    const std::vector<std::size_t> edge{2};
    rois = extract_rois(b, edge, 0.010);
    // Window [-3, 7): three zeros on the left.
    REQUIRE(rois[0].waveform[0] == 0.0);
    REQUIRE(rois[0].waveform[2] == 0.0);
    REQUIRE(rois[0].waveform[3] == 1.0);

    const std::vector<std::size_t> none;
    REQUIRE(extract_rois(b, none, 0.010).empty());
}
