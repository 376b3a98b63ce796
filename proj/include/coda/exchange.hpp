#pragma once

#include "coda/annotator.hpp"
#include "coda/temporal_model.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace coda {

struct CodaPair {
    std::size_t signal = 0;    // index into the detection sequence
    std::size_t response = 0;
    double delta_cb = 0.0;     // seconds; negative when the codas overlap
};

struct PairOptions {
    double window = 7.0;       // seconds
    double amp_gap_db = 6.0;
};

// Amplitude class per detection: detections sorted by mean intensity (dB) are
// split wherever consecutive levels differ by at least amp_gap_db. Class 0 is
// the loudest (focal) class.
std::vector<int> amplitude_classes(const std::vector<CodaDetection>& detections, double amp_gap_db);

// A focal coda followed directly by a non-focal coda starting within the
// window; windows holding three or more amplitude classes are discarded.
std::vector<CodaPair> find_coda_pairs(const std::vector<CodaDetection>& detections, const PairOptions& options = {});

struct IntervalResult {
    std::vector<double> values;
    std::vector<std::string> warnings;
};

// Consecutive codas of one source, in time order.
IntervalResult inter_coda_interval(const std::vector<CodaDetection>& source_codas);
double inter_coda_break(const CodaDetection& signal, const CodaDetection& response);
double inter_coda_break(const CodaPair& pair, const std::vector<CodaDetection>& detections);

enum class DeltaIciMode { mean_deviation, rms };

double delta_ici(const std::vector<double>& measured, const std::vector<double>& typical,
                 DeltaIciMode mode = DeltaIciMode::mean_deviation);

struct SrMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXd probability;  // rows: signal type, columns: response type
};

// Joint empirical probabilities of (signal type, response type). Labels come
// from `registry` when given, otherwise from the pairs themselves (sorted).
SrMatrix sr_matrix(const std::vector<std::pair<std::string, std::string>>& typed_pairs,
                   const std::vector<std::string>& registry = {});

struct DiscoveredType {
    std::vector<std::size_t> members;  // indices into the input sequence
    std::vector<double> medoid_ici;
};

struct DiscoveryOptions {
    std::size_t min_cluster_size = 10;
    double radius_factor = 0.5;  // of the median pairwise distance in PC space
    int components = 3;
};

std::vector<DiscoveredType> discover_types(const std::vector<std::vector<double>>& unknown_icis,
                                           const DiscoveryOptions& options = {});

struct Histogram {
    std::vector<double> centers;
    std::vector<double> widths;
    std::vector<double> density;
};

Histogram density_histogram(const std::vector<double>& samples, std::size_t bins = 0);
void export_distribution(const std::vector<double>& samples, const std::filesystem::path& path, std::size_t bins = 0);

struct ExchangeStats {
    std::vector<int> classes;
    std::vector<CodaPair> pairs;
    std::vector<std::vector<double>> delta_ci;  // per amplitude class
    std::vector<double> delta_cb;
    struct IciDeviation {
        std::size_t detection = 0;
        std::string type_label;
        double printed = 0.0;
        double rms = 0.0;
    };
    std::vector<IciDeviation> delta_ici;
    SrMatrix sr;
    std::vector<std::pair<int, DiscoveredType>> discovered;  // (click count, cluster)
    std::vector<std::string> warnings;
};

struct AnalyzeOptions {
    PairOptions pairs;
    DeltaIciMode delta_ici_mode = DeltaIciMode::mean_deviation;
    DiscoveryOptions discovery;
};

// Typical ICI vectors come from the model templates when a model is given,
// otherwise from the per-type mean of the annotated codas.
ExchangeStats analyze_exchange(const std::vector<CodaDetection>& detections, const CodaTypeModel* model,
                               const AnalyzeOptions& options = {});
void export_stats(const ExchangeStats& stats, const std::vector<CodaDetection>& detections,
                  const std::filesystem::path& out_dir, const AnalyzeOptions& options = {});

}  // namespace coda
