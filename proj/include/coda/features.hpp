#pragma once

#include "coda/transient.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace coda {

struct SimilarityWeights {
    double corr = 0.4;
    double ipi = 0.3;
    double intensity = 0.3;
};

struct FeatureConfig {
    double band_lo = 2000.0;  // Hz; band used by the cepstrum and the PSF
    double band_hi = 24000.0;
    double ipi_min_ms = 1.0;
    double ipi_max_ms = 8.0;
    double ipi_peak_ratio = 3.0;  // cepstral peak over cepstral median
    double ipi_min_echo = 0.05;   // weakest echo, relative to the first pulse, reported as an IPI
    double psf_frame_ms = 1.0;
    int psf_freqs = 16;
    double psf_hysteresis = 0.05;  // fraction of the PSF range
    double psf_gate_db = 5.0;      // frame energy over the median frame energy
    double psf_min_dwell = 0.25;   // frames of negative PSF before a crossing counts, fraction of the frame
    std::size_t spectrum_frame = 512;
    std::size_t spectrum_zero_pad = 8;
    double lag_ms = 1.0;  // shape-similarity alignment window; 0 disables
    SimilarityWeights weights;
};

struct AffinityMatrix {
    Eigen::MatrixXd entries;
    SimilarityWeights weights;
};

// Normalized cross-correlation, maximized over integer lags within +-max_lag samples.
double shape_similarity(std::span<const double> y_i, std::span<const double> y_j, std::size_t max_lag);
double shape_similarity(const ClickEvent& a, const ClickEvent& b, const FeatureConfig& config = {});

std::optional<double> estimate_ipi(const ClickEvent& click, const FeatureConfig& config = {});

// 1 - |a - b| / max(a, b); both arguments must be positive.
double ipi_similarity(double ipi_i, double ipi_j);
double intensity_similarity(double i_i, double i_j);
double combined_similarity(double s_shape, double s_ipi, double s_int, const SimilarityWeights& weights);

// Phase slope function over the TKEO envelope of the click, one value per
// sliding frame position (frames fully inside the envelope). Frames with no
// energy yield 0.
std::vector<double> psf(const ClickEvent& click, const FeatureConfig& config = {});
int count_multipulses(const ClickEvent& click, const FeatureConfig& config = {});

double resonant_frequency(const ClickEvent& click, const FeatureConfig& config = {});
double intensity_rms(const ClickEvent& click);

ClickFeatures compute_features(const ClickEvent& click, const FeatureConfig& config = {});

// Fills features of every click that lacks them, then builds S.
AffinityMatrix affinity_matrix(std::span<ClickEvent> clicks, const FeatureConfig& config = {});

}  // namespace coda
