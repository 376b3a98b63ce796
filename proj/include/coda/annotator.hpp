#pragma once

#include "coda/audio.hpp"
#include "coda/clustering.hpp"
#include "coda/features.hpp"
#include "coda/temporal_model.hpp"
#include "coda/transient.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace coda {

inline constexpr const char* kAnnotationSchema = "coda-annotations/1";
inline constexpr const char* kUnknownType = "unknown";

struct DetectorConfig {
    int channel = 0;
    double buffer_sec = 7.0;
    double overlap_sec = 2.0;
    double band_lo = 2000.0;
    double band_hi = 24000.0;
    PeakPickingOptions peaks{0.008, 10.0, 20, 0.200, 0.030, 2.0};
    double roi_sec = 0.040;
    FeatureConfig features;
    ClusteringConfig cluster;
    double unknown_floor = 1e-6;
    double dedup_tol = 0.0005;
    int threads = 1;
};

struct ClickAnnotation {
    double time = 0.0;
    double snr_db = 0.0;
    std::optional<double> ipi_ms;
    double intensity = 0.0;
    int pulses = 0;
    double resonance_hz = 0.0;
};

struct CodaDetection {
    double start_time = 0.0;
    std::vector<double> click_times;
    std::vector<double> ici;
    std::string type_label = kUnknownType;
    std::map<std::string, double> posterior;
    double structural_score = 0.0;
    double temporal_score = 0.0;
    double utility = 0.0;
    int source_index = 0;
    int buffer_index = 0;
    std::optional<double> mean_ipi_ms;
    double mean_intensity = 0.0;
    double mean_pulses = 0.0;
    double mean_resonance_hz = 0.0;
    bool constrained_mode = true;
    std::vector<ClickAnnotation> clicks;
};

struct TypeDecision {
    std::string label = kUnknownType;
    std::map<std::string, double> posterior;  // normalized over types; empty without a model
};

TypeDecision classify_coda_type(const std::vector<double>& ici, const CodaTypeModel& model, double unknown_floor = 1e-6);

// Clicks of one buffer through the whole chain, before cross-buffer merging.
std::vector<CodaDetection> detect_buffer(const AnalysisBuffer& buffer, const CodaTypeModel& model,
                                         const DetectorConfig& config, int buffer_index = 0);

// Merges detections seen by several overlapping buffers: identical click sets
// (within tol) keep the first, and a detection whose clicks all belong to
// another, larger detection is dropped. Result sorted by start time.
std::vector<CodaDetection> merge_duplicates(std::vector<CodaDetection> detections, double tol);

std::vector<CodaDetection> detect_codas(const SampledSignal& signal, const CodaTypeModel& model,
                                        const DetectorConfig& config);

enum class AnnotationFormat { json, csv };

std::string annotations_to_json(const std::vector<CodaDetection>& detections);
std::vector<CodaDetection> annotations_from_json(const std::string& text);
std::string annotations_to_csv(const std::vector<CodaDetection>& detections);
void write_annotations(const std::vector<CodaDetection>& detections, const std::filesystem::path& path,
                       AnnotationFormat format);
std::vector<CodaDetection> read_annotations(const std::filesystem::path& path);

struct ManifestFile {
    std::string path;
    std::uintmax_t bytes = 0;
    std::string sha256;  // content hash, hex
};

struct RunManifest {
    static constexpr const char* kSchema = "coda-manifest/1";
    std::string command;
    std::string tool_version;
    std::vector<ManifestFile> inputs;
    std::vector<ManifestFile> outputs;
    std::map<std::string, std::string> config;
    std::map<std::string, std::string> arguments;  // subcommand options other than config keys
    std::optional<int> model_version;
    std::string started_at;
    std::string finished_at;
    double wall_seconds = 0.0;
};

ManifestFile describe_file(const std::filesystem::path& path);
std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

}  // namespace coda
