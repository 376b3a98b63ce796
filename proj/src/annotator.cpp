#include "coda/annotator.hpp"

#include "coda/errors.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <thread>

namespace coda {
namespace {

using json = nlohmann::json;

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

[[noreturn]] void rethrow_with_context(std::exception_ptr ep, const std::string& context) {
    try {
        std::rethrow_exception(ep);
    } catch (const ArgumentError& e) {
        throw ArgumentError(context + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(context + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(context + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(context + ": " + e.what());
    }
}

bool times_match(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// Every click of `inner` has a counterpart in `outer`.
bool contained(const CodaDetection& inner, const CodaDetection& outer, double tol) {
    for (double t : inner.click_times) {
        const bool found = std::any_of(outer.click_times.begin(), outer.click_times.end(),
                                       [&](double u) { return times_match(t, u, tol); });
        if (!found) return false;
    }
    return true;
}

}  // namespace

TypeDecision classify_coda_type(const std::vector<double>& ici, const CodaTypeModel& model, double unknown_floor) {
    TypeDecision out;
    const auto it = model.groups.find(static_cast<int>(ici.size()));
    if (it == model.groups.end() || it->second.types.empty()) return out;
    const auto& group = it->second;
    const Eigen::VectorXd o = project(ici, group.pca);

    double total = 0.0;
    const std::string* best = nullptr;
    double best_p = -1.0;
    for (const auto& [label, type] : group.types) {
        const double p = mixture_pdf(o, type.mixture);
        out.posterior[label] = p;
        total += p;
        if (p > best_p) {
            best_p = p;
            best = &label;
        }
    }
    for (auto& [label, p] : out.posterior) p = total > 0.0 ? p / total : 0.0;

    const auto& mix = group.types.at(*best).mixture;
    double reference = 0.0;
    for (const auto& c : mix.components) reference = std::max(reference, mixture_pdf(c.mu, mix));
    if (best_p > 0.0 && best_p >= unknown_floor * reference) out.label = *best;
    return out;
}

std::vector<CodaDetection> detect_buffer(const AnalysisBuffer& buffer, const CodaTypeModel& model,
                                         const DetectorConfig& config, int buffer_index) {
    if (buffer.signal.samples.size() < 3) return {};
    AnalysisBuffer filtered = buffer;
    filtered.signal = bandpass(buffer.signal, config.band_lo, config.band_hi);
    const auto z = tkeo(filtered.signal);
    const auto peaks = detect_peaks(z, config.peaks);
    if (static_cast<int>(peaks.size()) < config.cluster.min_clicks) return {};

    auto clicks = extract_rois(filtered, peaks, config.roi_sec);
    const auto affinity = affinity_matrix(clicks, config.features);
    const auto solution = solve_greedy(clicks, affinity.entries, model, config.cluster);

    std::vector<CodaDetection> out;
    for (std::size_t k = 0; k < solution.clusters.size(); ++k) {
        const auto& c = solution.clusters[k];
        const auto& score = solution.scores[k];
        CodaDetection d;
        for (int m : c.members) {
            const auto& click = clicks[static_cast<std::size_t>(m)];
            ClickAnnotation a;
            a.time = click.peak_time;
            a.snr_db = click.snr_db;
            a.ipi_ms = click.features->ipi_ms;
            a.intensity = click.features->intensity_rms;
            a.pulses = click.features->multipulse_count;
            a.resonance_hz = click.features->resonant_freq_hz;
            d.click_times.push_back(a.time);
            d.clicks.push_back(a);
        }
        d.start_time = d.click_times.front();
        d.ici = cluster_ici(c, clicks);
        const auto decision = classify_coda_type(d.ici, model, config.unknown_floor);
        d.type_label = decision.label;
        d.posterior = decision.posterior;
        d.structural_score = score.structural;
        d.temporal_score = score.temporal;
        d.utility = score.utility;
        d.source_index = static_cast<int>(k);
        d.buffer_index = buffer_index;
        double ipi_sum = 0.0;
        int ipi_n = 0;
        for (const auto& a : d.clicks) {
            d.mean_intensity += a.intensity;
            if (a.ipi_ms) {
                ipi_sum += *a.ipi_ms;
                ++ipi_n;
            }
        }
        d.mean_intensity /= static_cast<double>(d.clicks.size());
        if (ipi_n > 0) d.mean_ipi_ms = ipi_sum / ipi_n;
        d.mean_pulses = score.stats.mean_pulses;
        d.mean_resonance_hz = score.stats.mean_resonance_hz;
        d.constrained_mode = config.cluster.constrained;
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<CodaDetection> merge_duplicates(std::vector<CodaDetection> detections, double tol) {
    std::stable_sort(detections.begin(), detections.end(), [](const CodaDetection& a, const CodaDetection& b) {
        return a.buffer_index < b.buffer_index;
    });
    std::vector<CodaDetection> unique;
    for (auto& d : detections) {
        const bool seen = std::any_of(unique.begin(), unique.end(), [&](const CodaDetection& u) {
            return u.click_times.size() == d.click_times.size() && contained(d, u, tol);
        });
        if (!seen) unique.push_back(std::move(d));
    }
    std::vector<CodaDetection> out;
    for (std::size_t i = 0; i < unique.size(); ++i) {
        bool subset = false;
        for (std::size_t j = 0; j < unique.size() && !subset; ++j) {
            subset = i != j && unique[j].click_times.size() > unique[i].click_times.size() &&
                     contained(unique[i], unique[j], tol);
        }
        if (!subset) out.push_back(unique[i]);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const CodaDetection& a, const CodaDetection& b) { return a.start_time < b.start_time; });
    return out;
}

std::vector<CodaDetection> detect_codas(const SampledSignal& signal, const CodaTypeModel& model,
                                        const DetectorConfig& config) {
    const auto buffers = frame_buffers(signal, config.buffer_sec, config.overlap_sec);
    std::vector<std::vector<CodaDetection>> per_buffer(buffers.size());
    std::vector<std::exception_ptr> errors(buffers.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < buffers.size(); i = next++) {
            try {
                per_buffer[i] = detect_buffer(buffers[i], model, config, static_cast<int>(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads = static_cast<std::size_t>(std::max(1, config.threads));
    if (threads == 1 || buffers.size() == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, buffers.size()); ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        if (errors[i]) {
            rethrow_with_context(errors[i], "buffer " + std::to_string(i) + " at " + fmt_double(buffers[i].start_time) + " s");
        }
    }

    std::vector<CodaDetection> all;
    for (auto& b : per_buffer) {
        for (auto& d : b) all.push_back(std::move(d));
    }
    return merge_duplicates(std::move(all), config.dedup_tol);
}

std::string annotations_to_json(const std::vector<CodaDetection>& detections) {
    json doc;
    doc["schema"] = kAnnotationSchema;
    json arr = json::array();
    for (const auto& d : detections) {
        json jd;
        jd["start_time"] = d.start_time;
        jd["click_times"] = d.click_times;
        jd["ici"] = d.ici;
        jd["type_label"] = d.type_label;
        jd["posterior"] = d.posterior;
        jd["structural_score"] = number_or_null(d.structural_score);
        jd["temporal_score"] = number_or_null(d.temporal_score);
        jd["utility"] = number_or_null(d.utility);
        jd["source_index"] = d.source_index;
        jd["buffer_index"] = d.buffer_index;
        jd["mean_ipi_ms"] = optional_json(d.mean_ipi_ms);
        jd["mean_intensity"] = d.mean_intensity;
        jd["mean_pulses"] = d.mean_pulses;
        jd["mean_resonance_hz"] = d.mean_resonance_hz;
        jd["constrained_mode"] = d.constrained_mode;
        json clicks = json::array();
        for (const auto& c : d.clicks) {
            clicks.push_back({{"time", c.time},
                              {"snr_db", number_or_null(c.snr_db)},
                              {"ipi_ms", optional_json(c.ipi_ms)},
                              {"intensity", c.intensity},
                              {"pulses", c.pulses},
                              {"resonance_hz", c.resonance_hz}});
        }
        jd["clicks"] = clicks;
        arr.push_back(std::move(jd));
    }
    doc["detections"] = arr;
    return doc.dump(2) + "\n";
}

std::vector<CodaDetection> annotations_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("annotations: invalid JSON: ") + e.what());
    }
    try {
        if (doc.value("schema", std::string{}) != kAnnotationSchema) {
            throw FormatError("annotations: expected schema " + std::string(kAnnotationSchema));
        }
        const double inf = std::numeric_limits<double>::infinity();
        std::vector<CodaDetection> out;
        for (const auto& jd : doc.at("detections")) {
            CodaDetection d;
            d.start_time = jd.at("start_time").get<double>();
            d.click_times = jd.at("click_times").get<std::vector<double>>();
            d.ici = jd.at("ici").get<std::vector<double>>();
            d.type_label = jd.at("type_label").get<std::string>();
            d.posterior = jd.value("posterior", std::map<std::string, double>{});
            d.structural_score = optional_from(jd, "structural_score").value_or(-inf);
            d.temporal_score = optional_from(jd, "temporal_score").value_or(0.0);
            d.utility = optional_from(jd, "utility").value_or(-inf);
            d.source_index = jd.value("source_index", 0);
            d.buffer_index = jd.value("buffer_index", 0);
            d.mean_ipi_ms = optional_from(jd, "mean_ipi_ms");
            d.mean_intensity = jd.value("mean_intensity", 0.0);
            d.mean_pulses = jd.value("mean_pulses", 0.0);
            d.mean_resonance_hz = jd.value("mean_resonance_hz", 0.0);
            d.constrained_mode = jd.value("constrained_mode", true);
            if (jd.contains("clicks")) {
                for (const auto& jc : jd.at("clicks")) {
                    ClickAnnotation c;
                    c.time = jc.at("time").get<double>();
                    c.snr_db = optional_from(jc, "snr_db").value_or(inf);
                    c.ipi_ms = optional_from(jc, "ipi_ms");
                    c.intensity = jc.value("intensity", 0.0);
                    c.pulses = jc.value("pulses", 0);
                    c.resonance_hz = jc.value("resonance_hz", 0.0);
                    d.clicks.push_back(c);
                }
            }
            if (d.click_times.empty()) throw FormatError("annotations: detection without clicks");
            for (std::size_t i = 1; i < d.click_times.size(); ++i) {
                if (!(d.click_times[i] > d.click_times[i - 1])) {
                    throw FormatError("annotations: click times not strictly increasing");
                }
            }
            if (d.ici.size() + 1 != d.click_times.size()) throw FormatError("annotations: ici length mismatch");
            out.push_back(std::move(d));
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("annotations: schema error: ") + e.what());
    }
}

std::string annotations_to_csv(const std::vector<CodaDetection>& detections) {
    std::ostringstream os;
    os << "start_time,click_count,type_label,utility,structural_score,temporal_score,source_index,"
          "mean_ipi_ms,mean_intensity,constrained_mode,click_times\n";
    for (const auto& d : detections) {
        os << fmt_double(d.start_time) << ',' << d.click_times.size() << ',' << d.type_label << ','
           << fmt_double(d.utility) << ',' << fmt_double(d.structural_score) << ',' << fmt_double(d.temporal_score)
           << ',' << d.source_index << ',' << (d.mean_ipi_ms ? fmt_double(*d.mean_ipi_ms) : std::string{}) << ','
           << fmt_double(d.mean_intensity) << ',' << (d.constrained_mode ? "true" : "false") << ',';
        for (std::size_t i = 0; i < d.click_times.size(); ++i) {
            if (i) os << ';';
            os << fmt_double(d.click_times[i]);
        }
        os << '\n';
    }
    return os.str();
}

void write_annotations(const std::vector<CodaDetection>& detections, const std::filesystem::path& path,
                       AnnotationFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << (format == AnnotationFormat::json ? annotations_to_json(detections) : annotations_to_csv(detections));
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<CodaDetection> read_annotations(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return annotations_from_json(ss.str());
}

ManifestFile describe_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 unavailable");
    std::uintmax_t bytes = 0;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
        bytes += static_cast<std::uintmax_t>(in.gcount());
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        char pair[3];
        std::snprintf(pair, sizeof pair, "%02x", digest[i]);
        hex += pair;
    }
    return ManifestFile{path.string(), bytes, hex};
}

std::string manifest_to_json(const RunManifest& m) {
    auto files = [](const std::vector<ManifestFile>& v) {
        json arr = json::array();
        for (const auto& f : v) arr.push_back({{"path", f.path}, {"bytes", f.bytes}, {"sha256", f.sha256}});
        return arr;
    };
    json doc;
    doc["schema"] = RunManifest::kSchema;
    doc["command"] = m.command;
    doc["tool_version"] = m.tool_version;
    doc["inputs"] = files(m.inputs);
    doc["outputs"] = files(m.outputs);
    doc["config"] = m.config;
    doc["arguments"] = m.arguments;
    doc["model_version"] = m.model_version ? json(*m.model_version) : json(nullptr);
    doc["started_at"] = m.started_at;
    doc["finished_at"] = m.finished_at;
    doc["wall_seconds"] = m.wall_seconds;
    return doc.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        if (doc.value("schema", std::string{}) != RunManifest::kSchema) {
            throw FormatError("manifest: expected schema " + std::string(RunManifest::kSchema));
        }
        auto files = [](const json& arr) {
            std::vector<ManifestFile> v;
            for (const auto& f : arr) {
                v.push_back({f.at("path").get<std::string>(), f.value("bytes", std::uintmax_t{0}),
                             f.value("sha256", std::string{})});
            }
            return v;
        };
        RunManifest m;
        m.command = doc.at("command").get<std::string>();
        m.tool_version = doc.value("tool_version", std::string{});
        m.inputs = files(doc.at("inputs"));
        m.outputs = files(doc.at("outputs"));
        m.config = doc.at("config").get<std::map<std::string, std::string>>();
        m.arguments = doc.value("arguments", std::map<std::string, std::string>{});
        if (doc.contains("model_version") && !doc.at("model_version").is_null()) {
            m.model_version = doc.at("model_version").get<int>();
        }
        m.started_at = doc.value("started_at", std::string{});
        m.finished_at = doc.value("finished_at", std::string{});
        m.wall_seconds = doc.value("wall_seconds", 0.0);
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
}

}  // namespace coda
