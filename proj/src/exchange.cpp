#include "coda/exchange.hpp"

#include "coda/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace coda {
namespace {

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

double level_db(const CodaDetection& d) {
    return d.mean_intensity > 0.0 ? 20.0 * std::log10(d.mean_intensity) : -std::numeric_limits<double>::infinity();
}

}  // namespace

std::vector<int> amplitude_classes(const std::vector<CodaDetection>& detections, double amp_gap_db) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return level_db(detections[a]) > level_db(detections[b]); });
    std::vector<int> classes(detections.size(), 0);
    int current = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (k > 0 && level_db(detections[order[k - 1]]) - level_db(detections[order[k]]) >= amp_gap_db) ++current;
        classes[order[k]] = current;
    }
    return classes;
}

std::vector<CodaPair> find_coda_pairs(const std::vector<CodaDetection>& detections, const PairOptions& options) {
    for (std::size_t i = 1; i < detections.size(); ++i) {
        if (detections[i].start_time < detections[i - 1].start_time) {
            throw ArgumentError("find_coda_pairs: detections must be sorted by start time");
        }
    }
    const auto classes = amplitude_classes(detections, options.amp_gap_db);
    std::vector<CodaPair> pairs;
    for (std::size_t i = 0; i + 1 < detections.size(); ++i) {
        const std::size_t j = i + 1;
        if (classes[i] != 0 || classes[j] == 0) continue;
        const double t0 = detections[i].start_time;
        if (detections[j].start_time - t0 > options.window) continue;
        std::set<int> present;
        for (std::size_t k = 0; k < detections.size(); ++k) {
            const double t = detections[k].start_time;
            if (t >= t0 && t <= t0 + options.window) present.insert(classes[k]);
        }
        if (present.size() >= 3) continue;
        pairs.push_back({i, j, inter_coda_break(detections[i], detections[j])});
    }
    return pairs;
}

IntervalResult inter_coda_interval(const std::vector<CodaDetection>& source_codas) {
    IntervalResult r;
    for (std::size_t i = 1; i < source_codas.size(); ++i) {
        const double v = source_codas[i].click_times.front() - source_codas[i - 1].click_times.back();
        if (v < 0.0) {
            r.warnings.push_back("overlapping codas from one source at t=" + fmt(source_codas[i].start_time));
        }
        r.values.push_back(v);
    }
    return r;
}

double inter_coda_break(const CodaDetection& signal, const CodaDetection& response) {
    return response.click_times.front() - signal.click_times.back();
}

double inter_coda_break(const CodaPair& pair, const std::vector<CodaDetection>& detections) {
    return inter_coda_break(detections.at(pair.signal), detections.at(pair.response));
}

double delta_ici(const std::vector<double>& measured, const std::vector<double>& typical, DeltaIciMode mode) {
    if (measured.size() != typical.size()) throw ArgumentError("delta_ici: length mismatch");
    if (measured.empty()) return 0.0;
    const auto n = static_cast<double>(measured.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        const double d = measured[i] - typical[i];
        acc += mode == DeltaIciMode::rms ? d * d : d;
    }
    return mode == DeltaIciMode::rms ? std::sqrt(acc / n) : std::abs(acc / n);
}

SrMatrix sr_matrix(const std::vector<std::pair<std::string, std::string>>& typed_pairs,
                   const std::vector<std::string>& registry) {
    std::set<std::string> labels(registry.begin(), registry.end());
    for (const auto& [s, r] : typed_pairs) {
        labels.insert(s);
        labels.insert(r);
    }
    SrMatrix m;
    m.labels.assign(labels.begin(), labels.end());
    const auto n = static_cast<Eigen::Index>(m.labels.size());
    m.probability = Eigen::MatrixXd::Zero(n, n);
    if (typed_pairs.empty()) return m;
    auto index = [&](const std::string& l) {
        return static_cast<Eigen::Index>(std::lower_bound(m.labels.begin(), m.labels.end(), l) - m.labels.begin());
    };
    for (const auto& [s, r] : typed_pairs) m.probability(index(s), index(r)) += 1.0;
    m.probability /= static_cast<double>(typed_pairs.size());
    return m;
}

std::vector<DiscoveredType> discover_types(const std::vector<std::vector<double>>& unknown_icis,
                                           const DiscoveryOptions& options) {
    const std::size_t n = unknown_icis.size();
    if (n < std::max<std::size_t>(options.min_cluster_size, 2)) return {};
    const auto w = static_cast<int>(unknown_icis.front().size());
    if (w < 1) return {};
    Eigen::MatrixXd h(static_cast<Eigen::Index>(n), w);
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<int>(unknown_icis[i].size()) != w) throw ArgumentError("discover_types: mixed click counts");
        for (int j = 0; j < w; ++j) h(static_cast<Eigen::Index>(i), j) = unknown_icis[i][static_cast<std::size_t>(j)];
    }
    const int q = std::min({options.components, w, static_cast<int>(n) - 1});
    const auto pca = fit_pca(h, q);
    const Eigen::MatrixXd centred = h.rowwise() - pca.mean.transpose();
    const Eigen::MatrixXd pc = centred * pca.basis;

    Eigen::MatrixXd dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    std::vector<double> all;
    for (Eigen::Index i = 0; i < dist.rows(); ++i) {
        dist(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < dist.rows(); ++j) {
            const double d = (pc.row(i) - pc.row(j)).norm();
            dist(i, j) = dist(j, i) = d;
            all.push_back(d);
        }
    }
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(all.size() / 2), all.end());
    const double eps = options.radius_factor * all[all.size() / 2];

    // DBSCAN; a point's neighbourhood includes itself.
    auto neighbours = [&](std::size_t i) {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < n; ++j) {
            if (dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= eps) out.push_back(j);
        }
        return out;
    };
    constexpr int kUnvisited = -2, kNoise = -1;
    std::vector<int> label(n, kUnvisited);
    int cluster = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != kUnvisited) continue;
        auto seeds = neighbours(i);
        if (seeds.size() < options.min_cluster_size) {
            label[i] = kNoise;
            continue;
        }
        label[i] = cluster;
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            const std::size_t p = seeds[k];
            if (label[p] == kNoise) label[p] = cluster;
            if (label[p] != kUnvisited) continue;
            label[p] = cluster;
            const auto more = neighbours(p);
            if (more.size() >= options.min_cluster_size) seeds.insert(seeds.end(), more.begin(), more.end());
        }
        ++cluster;
    }

    std::vector<DiscoveredType> out;
    for (int c = 0; c < cluster; ++c) {
        DiscoveredType t;
        for (std::size_t i = 0; i < n; ++i) {
            if (label[i] == c) t.members.push_back(i);
        }
        if (t.members.size() < options.min_cluster_size) continue;
        std::size_t medoid = t.members.front();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a : t.members) {
            double s = 0.0;
            for (std::size_t b : t.members) s += dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            if (s < best) {
                best = s;
                medoid = a;
            }
        }
        t.medoid_ici = unknown_icis[medoid];
        out.push_back(std::move(t));
    }
    return out;
}

Histogram density_histogram(const std::vector<double>& samples, std::size_t bins) {
    Histogram h;
    if (samples.empty()) return h;
    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it, hi = *hi_it;
    const auto n = static_cast<double>(samples.size());
    if (!(hi > lo)) {
        constexpr double kWidth = 1e-3;
        h.centers.push_back(lo);
        h.widths.push_back(kWidth);
        h.density.push_back(1.0 / kWidth);
        return h;
    }
    if (bins == 0) bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(n))));
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<double> counts(bins, 0.0);
    for (double v : samples) {
        auto k = static_cast<std::size_t>((v - lo) / width);
        counts[std::min(k, bins - 1)] += 1.0;
    }
    for (std::size_t k = 0; k < bins; ++k) {
        h.centers.push_back(lo + (static_cast<double>(k) + 0.5) * width);
        h.widths.push_back(width);
        h.density.push_back(counts[k] / (n * width));
    }
    return h;
}

void export_distribution(const std::vector<double>& samples, const std::filesystem::path& path, std::size_t bins) {
    const auto h = density_histogram(samples, bins);
    auto out = open_out(path);
    out << "bin_center,density,bin_width\n";
    for (std::size_t k = 0; k < h.centers.size(); ++k) {
        out << fmt(h.centers[k]) << ',' << fmt(h.density[k]) << ',' << fmt(h.widths[k]) << '\n';
    }
    if (!out) throw IoError("short write to " + path.string());
}

ExchangeStats analyze_exchange(const std::vector<CodaDetection>& detections, const CodaTypeModel* model,
                               const AnalyzeOptions& options) {
    ExchangeStats s;
    s.classes = amplitude_classes(detections, options.pairs.amp_gap_db);
    s.pairs = find_coda_pairs(detections, options.pairs);
    for (const auto& p : s.pairs) s.delta_cb.push_back(p.delta_cb);

    const int class_count = s.classes.empty() ? 0 : *std::max_element(s.classes.begin(), s.classes.end()) + 1;
    s.delta_ci.resize(static_cast<std::size_t>(class_count));
    for (int c = 0; c < class_count; ++c) {
        std::vector<CodaDetection> members;
        for (std::size_t i = 0; i < detections.size(); ++i) {
            if (s.classes[i] == c) members.push_back(detections[i]);
        }
        auto r = inter_coda_interval(members);
        s.delta_ci[static_cast<std::size_t>(c)] = std::move(r.values);
        s.warnings.insert(s.warnings.end(), r.warnings.begin(), r.warnings.end());
    }

    // Typical ICI per (click count, type).
    std::map<std::pair<std::size_t, std::string>, std::vector<double>> typical;
    if (model) {
        for (const auto& [w, g] : model->groups) {
            for (const auto& [label, t] : g.types) {
                if (!t.template_ici.empty()) typical[{static_cast<std::size_t>(w), label}] = t.template_ici;
            }
        }
    } else {
        std::map<std::pair<std::size_t, std::string>, std::pair<std::vector<double>, int>> sums;
        for (const auto& d : detections) {
            if (d.type_label == kUnknownType) continue;
            auto& [sum, count] = sums[{d.ici.size(), d.type_label}];
            if (sum.empty()) sum.assign(d.ici.size(), 0.0);
            for (std::size_t i = 0; i < d.ici.size(); ++i) sum[i] += d.ici[i];
            ++count;
        }
        for (auto& [key, v] : sums) {
            for (double& x : v.first) x /= v.second;
            typical[key] = v.first;
        }
    }
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const auto& d = detections[i];
        if (d.type_label == kUnknownType) continue;
        const auto it = typical.find({d.ici.size(), d.type_label});
        if (it == typical.end()) continue;
        s.delta_ici.push_back({i, d.type_label, delta_ici(d.ici, it->second, DeltaIciMode::mean_deviation),
                               delta_ici(d.ici, it->second, DeltaIciMode::rms)});
    }

    std::vector<std::pair<std::string, std::string>> typed;
    for (const auto& p : s.pairs) typed.emplace_back(detections[p.signal].type_label, detections[p.response].type_label);
    std::vector<std::string> registry;
    if (model) {
        for (const auto& [w, g] : model->groups) {
            for (const auto& [label, t] : g.types) registry.push_back(label);
        }
    }
    s.sr = sr_matrix(typed, registry);

    std::map<std::size_t, std::vector<std::size_t>> unknown_by_count;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (detections[i].type_label == kUnknownType) unknown_by_count[detections[i].click_times.size()].push_back(i);
    }
    for (const auto& [count, idx] : unknown_by_count) {
        std::vector<std::vector<double>> icis;
        for (std::size_t i : idx) icis.push_back(detections[i].ici);
        for (auto& t : discover_types(icis, options.discovery)) {
            for (auto& m : t.members) m = idx[m];
            s.discovered.emplace_back(static_cast<int>(count), std::move(t));
        }
    }
    return s;
}

void export_stats(const ExchangeStats& s, const std::vector<CodaDetection>& detections,
                  const std::filesystem::path& out_dir, const AnalyzeOptions& options) {
    std::filesystem::create_directories(out_dir);
    {
        auto out = open_out(out_dir / "pairs.csv");
        out << "signal_index,response_index,signal_start,response_start,signal_type,response_type,delta_cb\n";
        for (const auto& p : s.pairs) {
            const auto& a = detections[p.signal];
            const auto& b = detections[p.response];
            out << p.signal << ',' << p.response << ',' << fmt(a.start_time) << ',' << fmt(b.start_time) << ','
                << a.type_label << ',' << b.type_label << ',' << fmt(p.delta_cb) << '\n';
        }
    }
    std::vector<double> all_ci;
    {
        auto out = open_out(out_dir / "delta_ci.csv");
        out << "amplitude_class,delta_ci\n";
        for (std::size_t c = 0; c < s.delta_ci.size(); ++c) {
            for (double v : s.delta_ci[c]) {
                out << c << ',' << fmt(v) << '\n';
                all_ci.push_back(v);
            }
        }
    }
    {
        auto out = open_out(out_dir / "delta_cb.csv");
        out << "delta_cb\n";
        for (double v : s.delta_cb) out << fmt(v) << '\n';
    }
    std::vector<double> ici_values;
    {
        auto out = open_out(out_dir / "delta_ici_by_type.csv");
        out << "detection_index,type_label,delta_ici_mean_deviation,delta_ici_rms\n";
        for (const auto& d : s.delta_ici) {
            out << d.detection << ',' << d.type_label << ',' << fmt(d.printed) << ',' << fmt(d.rms) << '\n';
            ici_values.push_back(options.delta_ici_mode == DeltaIciMode::rms ? d.rms : d.printed);
        }
    }
    {
        auto out = open_out(out_dir / "sr_matrix.csv");
        out << "signal\\response";
        for (const auto& l : s.sr.labels) out << ',' << l;
        out << '\n';
        for (std::size_t i = 0; i < s.sr.labels.size(); ++i) {
            out << s.sr.labels[i];
            for (std::size_t j = 0; j < s.sr.labels.size(); ++j) {
                out << ',' << fmt(s.sr.probability(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            }
            out << '\n';
        }
    }
    {
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& [count, t] : s.discovered) {
            doc.push_back({{"click_count", count}, {"members", t.members}, {"medoid_ici", t.medoid_ici}});
        }
        auto out = open_out(out_dir / "discovered_types.json");
        out << doc.dump(2) << '\n';
    }
    export_distribution(s.delta_cb, out_dir / "delta_cb_pdf.csv");
    export_distribution(all_ci, out_dir / "delta_ci_pdf.csv");
    export_distribution(ici_values, out_dir / "delta_ici_pdf.csv");
}

}  // namespace coda
