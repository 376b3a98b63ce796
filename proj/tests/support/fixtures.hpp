#pragma once

#include "coda/synth.hpp"
#include "coda/temporal_model.hpp"
#include "coda/transient.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace coda::fixture {

// Type model trained on the built-in five- and six-click templates. Training
// takes a few seconds, so every test in a binary shares one instance.
inline const CodaTypeModel& trained_model() {
    static const CodaTypeModel model = [] {
        auto types = known_five_click_types();
        const auto six = known_six_click_types();
        types.insert(types.end(), six.begin(), six.end());
        TrainOptions options;
        options.seed = 11;
        return train_model(synth_database(types, 200, 7), options);
    }();
    return model;
}

// A click placed in the middle of a window, with optional white noise at the
// scene SNR definition.
inline ClickEvent make_click(double ipi_ms, int pulses, double decay, double resonance_hz, double fs = 96000.0,
                             double roi_sec = 0.040, double snr_db = INFINITY, std::uint64_t seed = 0) {
    const auto wave = synth_click(ipi_ms, pulses, decay, resonance_hz, fs);
    const auto n = static_cast<std::size_t>(std::lround(roi_sec * fs));
    ClickEvent c;
    c.sample_rate = fs;
    c.waveform.assign(n, 0.0);
    const std::size_t onset = click_onset_index(fs);
    const std::size_t start = n / 2 - std::min(n / 2, onset);
    for (std::size_t i = 0; i < wave.size() && start + i < n; ++i) c.waveform[start + i] = wave[i];
    if (std::isfinite(snr_db)) {
        double energy = 0.0;
        for (double v : wave) energy += v * v;
        const double sigma = std::sqrt(energy / (std::pow(10.0, snr_db / 10.0) * 0.010 * fs));
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, sigma);
        for (double& v : c.waveform) v += noise(rng);
    }
    return c;
}

}  // namespace coda::fixture
