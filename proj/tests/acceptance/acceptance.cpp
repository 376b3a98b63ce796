// Acceptance checks for the detector. Each criterion prints one line:
//   criterion N: PASS|FAIL (details; runtime X s, budget Y s)
// With no arguments every criterion runs; otherwise only the listed numbers.

#include "coda/annotator.hpp"
#include "coda/clustering.hpp"
#include "coda/exchange.hpp"
#include "coda/features.hpp"
#include "coda/synth.hpp"
#include "coda/temporal_model.hpp"
#include "coda/transient.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <boost/math/quadrature/sinh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace coda;
namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double rel_err(double got, double want) {
    if (got == want) return 0.0;
    return std::abs(got - want) / std::max(std::abs(want), std::numeric_limits<double>::min());
}

// ---------------------------------------------------------------------------
// Shared fixtures

const CodaTypeModel& model() { return fixture::trained_model(); }

// Direct normalized cross-correlation, maximized over lags.
double oracle_shape(const std::vector<double>& a, const std::vector<double>& b, int max_lag) {
    double ea = 0.0, eb = 0.0;
    for (double v : a) ea += v * v;
    for (double v : b) eb += v * v;
    double best = -INFINITY;
    for (int lag = -max_lag; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (int n = 0; n < static_cast<int>(a.size()); ++n) {
            const int k = n + lag;
            if (k >= 0 && k < static_cast<int>(b.size())) acc += a[static_cast<std::size_t>(n)] * b[static_cast<std::size_t>(k)];
        }
        best = std::max(best, acc / std::sqrt(ea * eb));
    }
    return std::clamp(best, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// 1. Formula fidelity

Outcome criterion1() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> pos(0.01, 10.0);
    constexpr int kTrials = 1000;
    constexpr double kTol = 1e-12;
    std::map<std::string, double> worst;
    auto note = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };

    bool tkeo_exact = true;
    for (int t = 0; t < kTrials; ++t) {
        std::vector<double> x(3 + static_cast<std::size_t>(t % 200));
        for (double& v : x) v = u(rng);
        const auto got = tkeo(x, 96000.0).values;
        const auto want = oracle::tkeo(x);
        tkeo_exact = tkeo_exact && got == want;
    }

    for (int t = 0; t < kTrials; ++t) {
        const int r = 1 + t % 64;
        note("penalty", rel_err(penalty(r), oracle::penalty(r)));
    }

    std::bernoulli_distribution pick(0.5);
    for (int t = 0; t < kTrials; ++t) {
        const int m = 2 + t % 20;
        MatrixXd s = MatrixXd::Zero(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) s(i, j) = s(j, i) = u(rng);
        std::vector<int> membership(static_cast<std::size_t>(m), 0);
        AssignmentVector c;
        while (c.members.size() < 2) {
            c = {};
            for (int i = 0; i < m; ++i) {
                membership[static_cast<std::size_t>(i)] = pick(rng) ? 1 : 0;
                if (membership[static_cast<std::size_t>(i)]) {
                    c.members.push_back(i);
                    c.mask |= std::uint64_t{1} << i;
                }
            }
        }
        note("structural", rel_err(structural_likelihood(c, s), oracle::structural(membership, s)));
    }

    const SimilarityWeights w;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 0; t < kTrials; ++t) {
        const double a = pos(rng), b = pos(rng);
        note("ipi similarity", rel_err(ipi_similarity(a, b), oracle::normalized_difference(a, b)));
        note("intensity similarity", rel_err(intensity_similarity(a, b), oracle::normalized_difference(a, b)));
        const double sc = u(rng), si = unit(rng), sn = unit(rng);
        note("combined similarity",
             rel_err(combined_similarity(sc, si, sn, w), oracle::weighted(w.corr, w.ipi, w.intensity, sc, si, sn)));
    }

    for (int t = 0; t < kTrials; ++t) {
        std::vector<double> a(16 + static_cast<std::size_t>(t % 48)), b(16 + static_cast<std::size_t>((t * 7) % 48));
        for (double& v : a) v = u(rng);
        for (double& v : b) v = u(rng);
        const int lag = t % 12;
        note("shape similarity", rel_err(shape_similarity(a, b, static_cast<std::size_t>(lag)), oracle_shape(a, b, lag)));
    }

    // The affinity matrix correlates in the frequency domain; entries are
    // bounded by 1, so the error is checked on that scale.
    double affinity_err = 0.0;
    for (int t = 0; t < 20; ++t) {
        std::vector<ClickEvent> clicks(4);
        for (auto& c : clicks) {
            c.sample_rate = 96000.0;
            c.waveform.resize(384);
            for (double& v : c.waveform) v = u(rng);
            c.features = ClickFeatures{pos(rng), pos(rng), 4, 9000.0};
        }
        const FeatureConfig cfg;
        const auto s = affinity_matrix(clicks, cfg);
        const int lag = static_cast<int>(std::llround(cfg.lag_ms * 1e-3 * 96000.0));
        for (std::size_t i = 0; i < clicks.size(); ++i) {
            for (std::size_t j = i + 1; j < clicks.size(); ++j) {
                const auto& fi = *clicks[i].features;
                const auto& fj = *clicks[j].features;
                const double want = oracle::weighted(
                    cfg.weights.corr, cfg.weights.ipi, cfg.weights.intensity,
                    oracle_shape(clicks[i].waveform, clicks[j].waveform, lag),
                    oracle::normalized_difference(*fi.ipi_ms, *fj.ipi_ms),
                    oracle::normalized_difference(fi.intensity_rms, fj.intensity_rms));
                affinity_err = std::max(affinity_err, std::abs(s.entries(static_cast<Eigen::Index>(i),
                                                                          static_cast<Eigen::Index>(j)) - want));
            }
        }
    }

    for (int t = 0; t < kTrials; ++t) {
        std::vector<double> x(1 + static_cast<std::size_t>(t % 9)), ty(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.05 + 0.5 * unit(rng), ty[i] = 0.05 + 0.5 * unit(rng);
        note("delta_ici mean", rel_err(delta_ici(x, ty), oracle::delta_ici_printed(x, ty)));
        note("delta_ici rms", rel_err(delta_ici(x, ty, DeltaIciMode::rms), oracle::delta_ici_rms(x, ty)));
    }

    bool ok = tkeo_exact && affinity_err <= kTol;
    std::string detail = std::string("tkeo ") + (tkeo_exact ? "exact" : "MISMATCH");
    for (const auto& [name, e] : worst) {
        ok = ok && e <= kTol;
        detail += fmt("; %s %.1e", name.c_str(), e);
    }
    detail += fmt("; affinity abs %.1e", affinity_err);
    return {ok, detail};
}

// ---------------------------------------------------------------------------
// 2. GGD correctness

Outcome criterion2() {
    std::mt19937_64 rng(202);
    std::normal_distribution<double> n01;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const int q = 1 + t % 4;
        GgdComponent c;
        c.mu = VectorXd(q);
        for (int i = 0; i < q; ++i) c.mu(i) = n01(rng);
        c.sigma = oracle::random_spd(q, rng);
        c.beta = 1.0;
        c.m = 1.0;
        VectorXd h = c.mu;
        for (int i = 0; i < q; ++i) h(i) += 1.5 * n01(rng);
        worst = std::max(worst, rel_err(ggd_pdf(h, c), oracle::gaussian_pdf(h, c.mu, c.sigma)));
    }

    boost::math::quadrature::sinh_sinh<double> integrator;
    double worst_integral = 0.0;
    int integrals = 0;
    for (double beta : {0.5, 1.0, 2.0}) {
        for (double m : {0.5, 1.0, 2.0}) {
            GgdComponent c1;
            c1.mu = VectorXd::Constant(1, 0.3);
            c1.sigma = MatrixXd::Constant(1, 1, 0.7);
            c1.beta = beta;
            c1.m = m;
            const double i1 = integrator.integrate([&](double x) { return ggd_pdf(VectorXd::Constant(1, x), c1); });
            worst_integral = std::max(worst_integral, std::abs(i1 - 1.0));

            GgdComponent c2;
            c2.mu = VectorXd::Zero(2);
            c2.sigma = oracle::random_spd(2, rng, 0.5, 1.5);
            c2.beta = beta;
            c2.m = m;
            const double i2 = integrator.integrate([&](double x) {
                return integrator.integrate([&](double y) {
                    VectorXd h(2);
                    h << x, y;
                    return ggd_pdf(h, c2);
                });
            });
            worst_integral = std::max(worst_integral, std::abs(i2 - 1.0));
            integrals += 2;
        }
    }
    const bool ok = worst <= 1e-12 && worst_integral <= 1e-3;
    return {ok, fmt("gaussian limit max rel err %.1e over 100 cases; %d integrals, max |I - 1| %.1e", worst, integrals,
                    worst_integral)};
}

// ---------------------------------------------------------------------------
// 3. EM and BIC recovery

// Covariance of the elliptical GGD with scatter S is c * S with
// c = m 2^(1/beta) Gamma((Q+2)/(2 beta)) / (Q Gamma(Q/(2 beta))).
double ggd_covariance_scale(int q, double beta, double m) {
    const double qd = q;
    return m * std::pow(2.0, 1.0 / beta) * std::tgamma((qd + 2.0) / (2.0 * beta)) / (qd * std::tgamma(qd / (2.0 * beta)));
}

Outcome criterion3() {
    constexpr int kTrials = 50;
    constexpr int kPerComponent = 2000;
    constexpr double kSeparation = 10.0;
    std::uniform_real_distribution<double> ub(0.8, 2.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);

    std::map<int, int> correct;
    bool monotone = true;
    double worst_mean = 0.0;
    for (int k = 1; k <= 3; ++k) {
        for (int trial = 0; trial < kTrials; ++trial) {
            std::mt19937_64 rng(3000 + 100 * static_cast<std::uint64_t>(k) + static_cast<std::uint64_t>(trial));
            std::vector<GgdComponent> truth;
            double sigma_max = 0.0;
            for (int j = 0; j < k; ++j) {
                GgdComponent c;
                c.sigma = oracle::random_spd(2, rng, 0.5, 1.5);
                c.beta = ub(rng);
                c.m = 1.0;
                const double cov_scale = ggd_covariance_scale(2, c.beta, c.m);
                const Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov_scale * c.sigma);
                sigma_max = std::max(sigma_max, std::sqrt(es.eigenvalues().maxCoeff()));
                truth.push_back(c);
            }
            // Means on a circle (or line) so every pair is at least
            // kSeparation largest standard deviations apart.
            const double phase = angle(rng);
            const double radius = k == 1 ? 0.0 : kSeparation * sigma_max / (2.0 * std::sin(std::numbers::pi / k)) * 1.05;
            for (int j = 0; j < k; ++j) {
                const double a = phase + 2.0 * std::numbers::pi * j / k;
                truth[static_cast<std::size_t>(j)].mu = VectorXd(2);
                truth[static_cast<std::size_t>(j)].mu << radius * std::cos(a), radius * std::sin(a);
            }

            MatrixXd data(k * kPerComponent, 2);
            for (int j = 0; j < k; ++j) {
                const auto& c = truth[static_cast<std::size_t>(j)];
                for (int n = 0; n < kPerComponent; ++n)
                    data.row(j * kPerComponent + n) = oracle::sample_ggd(c.mu, c.sigma, c.beta, c.m, rng).transpose();
            }

            const auto sel = select_k_bic(data, k + 1, 17 + static_cast<std::uint64_t>(trial));
            if (sel.k == k) ++correct[k];

            // The selected mixture already is the K-component fit when BIC is right.
            const auto fit = sel.k == k ? sel.mixture : fit_mixture(data, k, 17 + static_cast<std::uint64_t>(trial));
            for (std::size_t i = 1; i < fit.ll_trace.size(); ++i) {
                if (fit.ll_trace[i] < fit.ll_trace[i - 1] - 1e-10 * std::max(1.0, std::abs(fit.ll_trace[i - 1])))
                    monotone = false;
            }
            // Each true mean is matched to the nearest fitted mean, measured in
            // units of the true component's covariance.
            for (const auto& c : truth) {
                const MatrixXd cov_inv = (ggd_covariance_scale(2, c.beta, c.m) * c.sigma).inverse();
                double best = INFINITY;
                for (const auto& f : fit.components) {
                    const VectorXd d = f.mu - c.mu;
                    best = std::min(best, std::sqrt(d.dot(cov_inv * d)));
                }
                worst_mean = std::max(worst_mean, best);
            }
        }
    }
    bool ok = monotone && worst_mean <= 0.1;
    std::string detail;
    for (int k = 1; k <= 3; ++k) {
        ok = ok && correct[k] >= static_cast<int>(std::ceil(0.9 * kTrials));
        detail += fmt("K=%d %d/%d; ", k, correct[k], kTrials);
    }
    detail += fmt("worst mean error %.3f sigma; log-likelihood %s", worst_mean, monotone ? "monotone" : "NOT monotone");
    return {ok, detail};
}

// ---------------------------------------------------------------------------
// 4. Clustering optimality

struct OracleCandidate {
    std::uint64_t mask = 0;
    double utility = 0.0;
    bool valid = false;
};

// Every subset with 3-10 members and span within the limit, scored from the
// textbook definitions.
std::vector<OracleCandidate> oracle_candidates(const std::vector<ClickEvent>& clicks, const MatrixXd& s,
                                               const CodaTypeModel& m, const ClusteringConfig& cfg) {
    const auto n = static_cast<int>(clicks.size());
    std::vector<OracleCandidate> out;
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
        const int r = std::popcount(mask);
        if (r < cfg.min_clicks || r > cfg.max_clicks) continue;
        std::vector<int> membership(static_cast<std::size_t>(n), 0);
        std::vector<double> times;
        double pulses = 0.0, resonance = 0.0;
        for (int i = 0; i < n; ++i) {
            if (!(mask >> i & 1)) continue;
            membership[static_cast<std::size_t>(i)] = 1;
            times.push_back(clicks[static_cast<std::size_t>(i)].peak_time);
            pulses += clicks[static_cast<std::size_t>(i)].features->multipulse_count;
            resonance += clicks[static_cast<std::size_t>(i)].features->resonant_freq_hz;
        }
        if (times.back() - times.front() > cfg.max_span) continue;
        std::vector<double> ici;
        for (std::size_t i = 1; i < times.size(); ++i) ici.push_back(times[i] - times[i - 1]);
        double temporal = 0.0;
        if (const auto g = m.groups.find(r - 1); g != m.groups.end()) {
            temporal = temporal_likelihood(ici, m).value / g->second.peak_likelihood;
        }
        OracleCandidate c;
        c.mask = mask;
        c.utility = oracle::structural(membership, s) + cfg.alpha1 * temporal - cfg.alpha2 * oracle::penalty(r);
        c.valid = c.utility > cfg.rho_d;
        if (cfg.constrained) c.valid = c.valid && pulses / r > cfg.p_min && resonance / r < cfg.fr_max;
        out.push_back(c);
    }
    return out;
}

// Clicks laid out as one or two template codas plus stray clicks, with an
// affinity matrix that favours the true groupings.
std::pair<std::vector<ClickEvent>, MatrixXd> clustering_instance(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto types = known_five_click_types();
    std::uniform_int_distribution<std::size_t> pick_type(0, types.size() - 1);
    std::uniform_int_distribution<int> stray_count(0, 3);

    std::vector<std::pair<double, int>> placed;  // (time, group), group -1 for strays
    const int codas = u(rng) < 0.5 ? 1 : 2;
    for (int g = 0; g < codas; ++g) {
        const auto ici = jittered_ici(types[pick_type(rng)], rng);
        double t = 0.2 + 0.3 * u(rng) + 0.05 * g;
        placed.emplace_back(t, g);
        for (double d : ici) placed.emplace_back(t += d, g);
    }
    const int strays = std::min(stray_count(rng), 10 - static_cast<int>(placed.size()));
    for (int i = 0; i < strays; ++i) placed.emplace_back(2.0 * u(rng), -1);
    while (placed.size() > 10) placed.pop_back();
    std::sort(placed.begin(), placed.end());

    std::vector<ClickEvent> clicks;
    std::uniform_int_distribution<int> pulses(2, 6);
    for (const auto& [t, g] : placed) {
        ClickEvent c;
        c.peak_time = t;
        c.sample_rate = 96000.0;
        c.features = ClickFeatures{4.0, 0.1, g >= 0 ? pulses(rng) + 1 : pulses(rng) - 1,
                                   g >= 0 ? 8000.0 + 3000.0 * u(rng) : 6000.0 + 12000.0 * u(rng)};
        clicks.push_back(std::move(c));
    }
    const auto m = static_cast<Eigen::Index>(placed.size());
    MatrixXd s = MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const int gi = placed[static_cast<std::size_t>(i)].second;
            const int gj = placed[static_cast<std::size_t>(j)].second;
            s(i, j) = s(j, i) = (gi >= 0 && gi == gj) ? 0.75 + 0.25 * u(rng) : 0.6 * u(rng);
        }
    }
    return {std::move(clicks), std::move(s)};
}

Outcome criterion4() {
    const auto& m = model();
    const ClusteringConfig cfg;
    std::mt19937_64 rng(404);
    int greedy_ok = 0, exact_ok = 0, structure_ok = 0, nonempty = 0;
    constexpr int kInstances = 100;
    for (int t = 0; t < kInstances; ++t) {
        const auto [clicks, s] = clustering_instance(rng);
        const auto oracle = oracle_candidates(clicks, s, m, cfg);
        const auto greedy = solve_greedy(clicks, s, m, cfg);
        const auto exact = solve_exact(clicks, s, m, cfg);
        if (!greedy.clusters.empty()) ++nonempty;

        auto lookup = [&](std::uint64_t mask) -> const OracleCandidate* {
            for (const auto& c : oracle)
                if (c.mask == mask) return &c;
            return nullptr;
        };

        // Every greedy round takes the best surviving valid candidate, and the
        // greedy stops only when nothing valid survives.
        bool round_ok = true;
        std::uint64_t used = 0;
        for (const auto& c : greedy.clusters) {
            const auto* picked = lookup(c.mask);
            double best = -INFINITY;
            for (const auto& o : oracle)
                if (o.valid && !(o.mask & used)) best = std::max(best, o.utility);
            round_ok = round_ok && picked != nullptr && picked->valid &&
                       std::abs(picked->utility - best) <= 1e-12 * std::max(1.0, std::abs(best));
            used |= c.mask;
        }
        for (const auto& o : oracle) round_ok = round_ok && !(o.valid && !(o.mask & used));
        greedy_ok += round_ok;

        exact_ok += solution_objective(exact) >= solution_objective(greedy) - 1e-12;

        bool structure = true;
        for (const auto* sol : {&greedy, &exact}) {
            std::uint64_t seen = 0;
            for (const auto& c : sol->clusters) {
                const auto* o = lookup(c.mask);
                structure = structure && !(c.mask & seen) && o != nullptr && o->valid;
                seen |= c.mask;
            }
        }
        structure_ok += structure;
    }
    const bool ok = greedy_ok == kInstances && exact_ok == kInstances && structure_ok == kInstances;
    return {ok, fmt("greedy rounds optimal %d/%d, exact >= greedy %d/%d, orthogonal and valid %d/%d "
                    "(%d instances with detections)",
                    greedy_ok, kInstances, exact_ok, kInstances, structure_ok, kInstances, nonempty)};
}

// ---------------------------------------------------------------------------
// 5. End-to-end detection

Outcome criterion5() {
    const auto& m = model();
    const DetectorConfig cfg;
    std::vector<EvalScene> scenes;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto [signal, truth] = synth_scene(random_coda_scene(5000 + seed));
        scenes.push_back({detect_codas(signal, m, cfg), std::move(truth)});
    }
    const auto point = evaluate_at(scenes, cfg.cluster.rho_d);
    const auto ratios = click_ratios(scenes);
    const double full = ratios.empty() ? 0.0
                                       : static_cast<double>(std::count(ratios.begin(), ratios.end(), 1.0)) /
                                             static_cast<double>(ratios.size());

    // Two interleaved codas count as separated when there are exactly two
    // detections, one per source, and neither takes a click of the other.
    constexpr double kTol = 0.002;
    int separated = 0;
    constexpr int kOverlap = 50;
    for (std::uint64_t seed = 0; seed < kOverlap; ++seed) {
        auto [signal, truth] = synth_scene(random_overlap_scene(7000 + seed));
        const auto found = detect_codas(signal, m, cfg);
        const auto codas = truth.codas();
        if (found.size() != 2 || codas.size() != 2) continue;
        std::set<int> sources;
        bool clean = true;
        for (const auto& d : found) {
            int owner = -1;
            for (double t : d.click_times) {
                int who = -1;
                for (std::size_t k = 0; k < codas.size(); ++k) {
                    for (double x : codas[k]->click_times)
                        if (std::abs(x - t) <= kTol) who = static_cast<int>(k);
                }
                if (who < 0 || (owner >= 0 && who != owner)) clean = false;
                owner = who;
            }
            sources.insert(owner);
        }
        separated += clean && sources.size() == 2;
    }

    const bool ok = point.pd >= 0.95 && point.false_positives == 0 && full >= 0.95 && separated >= 0.9 * kOverlap;
    return {ok, fmt("Pd %.3f (%zu/%zu), false positives %zu; full-click fraction %.3f; overlap separated %d/%d",
                    point.pd, point.true_positives, point.truth_codas, point.false_positives, full, separated,
                    kOverlap)};
}

// ---------------------------------------------------------------------------
// 6. Constraint direction

Outcome criterion6() {
    const auto& m = model();
    struct Mode {
        const char* name;
        bool constrained, pulses, resonance;
    };
    const std::vector<Mode> modes{
        {"none", false, false, false}, {"P", true, true, false}, {"fr", true, false, true}, {"P&fr", true, true, true}};

    // Codas with loud echolocation trains.
    RandomSceneOptions noisy;
    noisy.echolocation_probability = 1.0;
    noisy.echolocation_gap_lo = -6.0;
    noisy.echolocation_gap_hi = 0.0;
    constexpr int kMixed = 40;
    std::vector<SampledSignal> signals;
    std::vector<GroundTruth> truths;
    for (std::uint64_t seed = 0; seed < kMixed; ++seed) {
        auto [signal, truth] = synth_scene(random_coda_scene(9000 + seed, noisy));
        signals.push_back(std::move(signal));
        truths.push_back(std::move(truth));
    }
    std::map<std::string, double> far;
    for (const auto& mode : modes) {
        DetectorConfig cfg;
        cfg.cluster.constrained = mode.constrained;
        cfg.cluster.multipulse_constraint = mode.pulses;
        cfg.cluster.resonance_constraint = mode.resonance;
        std::vector<EvalScene> scenes;
        for (std::size_t i = 0; i < signals.size(); ++i) scenes.push_back({detect_codas(signals[i], m, cfg), truths[i]});
        far[mode.name] = evaluate_at(scenes, cfg.cluster.rho_d).far_per_min;
    }

    // Pure echolocation: any constrained detection is a false alarm.
    constexpr int kPure = 100;
    int clean = 0;
    const DetectorConfig cfg;
    for (std::uint64_t seed = 0; seed < kPure; ++seed) {
        const auto signal = synth_scene(random_echolocation_scene(11000 + seed)).first;
        clean += detect_codas(signal, m, cfg).empty();
    }

    const bool order = far["P&fr"] <= far["P"] && far["P"] <= far["none"] && far["P&fr"] <= far["fr"] &&
                       far["fr"] <= far["none"];
    const bool ok = order && clean >= 0.95 * kPure;
    return {ok, fmt("FAR/min none %.2f, P %.2f, fr %.2f, P&fr %.2f (%s); pure echolocation clean %d/%d", far["none"],
                    far["P"], far["fr"], far["P&fr"], order ? "ordered" : "NOT ordered", clean, kPure)};
}

// ---------------------------------------------------------------------------
// 7. PSF multipulse discrimination

Outcome criterion7() {
    constexpr int kTrials = 500;
    constexpr double kSnr = 10.0;
    const DetectorConfig det;
    std::mt19937_64 rng(707);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int correct = 0, coda_right = 0, echo_right = 0, missed = 0;
    for (int t = 0; t < kTrials; ++t) {
        const bool coda_click = t % 2 == 0;
        SceneScript s;
        s.duration = 0.5;
        s.seed = 70000 + static_cast<std::uint64_t>(t);
        s.noise.white_db = -50.0;
        SceneEvent e;
        e.kind = coda_click ? EventKind::coda : EventKind::echolocation;
        e.start_time = 0.2 + 0.1 * u(rng);
        e.n_pulses = coda_click ? 4 + t / 2 % 3 : 2;
        e.pulse_decay = coda_click ? 0.7 : 0.3;
        e.ipi_ms = 2.5 + 4.0 * u(rng);
        e.resonance_hz = coda_click ? 8000.0 + 3000.0 * u(rng) : 13000.0 + 7000.0 * u(rng);
        e.level_db = level_for_snr(kSnr, -50.0, e, s.sample_rate);
        s.events.push_back(e);
        const auto [signal, truth] = synth_scene(s);

        AnalysisBuffer buffer;
        buffer.signal = bandpass(signal, det.band_lo, det.band_hi);
        const auto peaks = detect_peaks(tkeo(buffer.signal), det.peaks);
        const auto rois = extract_rois(buffer, peaks, det.roi_sec);
        const double when = truth.events.front().click_times.front();
        const ClickEvent* nearest = nullptr;
        for (const auto& r : rois)
            if (nearest == nullptr || std::abs(r.peak_time - when) < std::abs(nearest->peak_time - when)) nearest = &r;
        if (nearest == nullptr || std::abs(nearest->peak_time - when) > 0.002) {
            ++missed;
            continue;
        }
        const bool says_coda = count_multipulses(*nearest, det.features) > det.cluster.p_min;
        if (says_coda == coda_click) {
            ++correct;
            ++(coda_click ? coda_right : echo_right);
        }
    }
    const double accuracy = static_cast<double>(correct) / kTrials;
    return {accuracy >= 0.95, fmt("accuracy %.3f (coda %d/%d, echolocation %d/%d, click not found %d)", accuracy,
                                  coda_right, kTrials / 2, echo_right, kTrials / 2, missed)};
}

// ---------------------------------------------------------------------------
// 8. Exchange analytics

Outcome criterion8() {
    const auto& m = model();
    const auto five = known_five_click_types();
    const std::vector<double> a_ici = five[1].variants.front();
    const std::vector<double> b_ici = five[3].variants.front();
    auto span = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };

    SceneScript s;
    s.duration = 16.0;
    s.seed = 808;
    s.noise.white_db = -50.0;
    const std::vector<double> a_starts{1.0, 5.5, 10.0};
    constexpr double kBreak = 0.5;
    for (double start : a_starts) {
        SceneEvent a;
        a.source_id = 1;
        a.start_time = start;
        a.ici = a_ici;
        a.ipi_ms = 3.5;
        a.resonance_hz = 9000.0;
        a.type_label = five[1].label;
        a.level_db = level_for_snr(28.0, -50.0, a, s.sample_rate);
        SceneEvent b = a;
        b.source_id = 2;
        b.start_time = start + span(a_ici) + kBreak;
        b.ici = b_ici;
        b.ipi_ms = 5.5;
        b.resonance_hz = 10000.0;
        b.type_label = five[3].label;
        b.level_db = level_for_snr(14.0, -50.0, b, s.sample_rate);
        s.events.push_back(a);
        s.events.push_back(b);
    }
    const auto [signal, truth] = synth_scene(s);
    const auto found = detect_codas(signal, m, DetectorConfig{});
    const auto stats = analyze_exchange(found, &m);

    double cb_err = stats.delta_cb.empty() ? INFINITY : 0.0;
    for (double v : stats.delta_cb) cb_err = std::max(cb_err, std::abs(v - kBreak));
    double ci_err = INFINITY;
    if (!stats.delta_ci.empty() && stats.delta_ci[0].size() == a_starts.size() - 1) {
        ci_err = 0.0;
        for (std::size_t i = 0; i + 1 < a_starts.size(); ++i) {
            const double scripted = a_starts[i + 1] - (a_starts[i] + span(a_ici));
            ci_err = std::max(ci_err, std::abs(stats.delta_ci[0][i] - scripted));
        }
    }
    const double sr_sum = stats.sr.probability.sum();

    // Discovery: a novel six-click rhythm among known six-click codas and
    // random rhythms; only codas the model cannot type go to discovery.
    std::mt19937_64 rng(818);
    std::uniform_real_distribution<double> u(0.05, 0.45);
    const auto novel = novel_six_click_type();
    const auto six = known_six_click_types();
    std::vector<std::vector<double>> all;
    std::vector<int> is_novel;
    for (int i = 0; i < 40; ++i) all.push_back(jittered_ici(novel, rng)), is_novel.push_back(1);
    for (const auto& t : six)
        for (int i = 0; i < 40; ++i) all.push_back(jittered_ici(t, rng)), is_novel.push_back(0);
    for (int i = 0; i < 30; ++i) {
        std::vector<double> v(5);
        for (double& x : v) x = u(rng);
        all.push_back(v);
        is_novel.push_back(0);
    }
    std::vector<std::vector<double>> unknown;
    std::vector<int> unknown_novel;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (classify_coda_type(all[i], m).label == kUnknownType) {
            unknown.push_back(all[i]);
            unknown_novel.push_back(is_novel[i]);
        }
    }
    const auto discovered = discover_types(unknown);
    double purity = 0.0;
    std::size_t novel_members = 0;
    for (const auto& t : discovered) {
        std::size_t n = 0;
        for (std::size_t idx : t.members) n += static_cast<std::size_t>(unknown_novel[idx]);
        if (n > novel_members) {
            novel_members = n;
            purity = static_cast<double>(n) / static_cast<double>(t.members.size());
        }
    }

    const bool ok = found.size() == 6 && stats.pairs.size() == 3 && cb_err <= 0.001 && ci_err <= 0.001 &&
                    std::abs(sr_sum - 1.0) <= 1e-12 && purity >= 0.9;
    return {ok, fmt("%zu codas, %zu pairs, max Delta_CB err %.2e s, max Delta_CI err %.2e s, sr sum %.15g; "
                    "novel cluster purity %.3f (%zu of 40 novel codas, %zu clusters)",
                    found.size(), stats.pairs.size(), cb_err, ci_err, sr_sum, purity, novel_members,
                    discovered.size())};
}

// ---------------------------------------------------------------------------
// 9. Reproducibility

Outcome criterion9() {
    const fs::path work = fs::temp_directory_path() / "coda_acceptance_replay";
    fs::remove_all(work);
    fs::create_directories(work);
    auto run = [&](const std::string& args) {
        const std::string cmd = "cd '" + work.string() + "' && '" CODA_BINARY "' " + args + " >> log.txt 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    };

    const std::vector<std::string> steps{
        "--seed 21 synth-db --out db.csv --per-type 60",
        "--seed 21 train --db db.csv --out model.json",
        "--seed 22 make-scene --out scene.json --kind coda --duration 12",
        "simulate --script scene.json --out scene.wav --truth truth.json",
        "detect --in scene.wav --model model.json --out det.json --csv det.csv",
        "analyze --annotations det.json --out-dir stats --model model.json",
        "eval --detections det.json --truth truth.json --out roc.csv --cdf cdf.csv",
    };
    for (const auto& step : steps) {
        if (run(step) != 0) return {false, "command failed: " + step};
    }

    // Every manifest in the tree is replayed into a fresh directory and each
    // listed output compared byte for byte.
    std::size_t manifests = 0, files = 0, mismatches = 0;
    std::vector<fs::path> found;
    for (const auto& entry : fs::recursive_directory_iterator(work)) {
        const auto name = entry.path().filename().string();
        if (name == "manifest.json" || name.ends_with(".manifest.json")) found.push_back(entry.path());
    }
    std::sort(found.begin(), found.end());
    for (const auto& path : found) {
        const auto manifest = manifest_from_json(slurp(path));
        const std::string out_dir = "replay_" + std::to_string(manifests++);
        if (run("replay --manifest '" + fs::relative(path, work).string() + "' --out-dir " + out_dir) != 0) {
            return {false, "replay failed for " + path.filename().string()};
        }
        for (const auto& o : manifest.outputs) {
            const fs::path original = path.parent_path() / fs::path(o.path).filename();
            const fs::path replayed = work / out_dir / fs::path(o.path).filename();
            ++files;
            if (slurp(original) != slurp(replayed) || describe_file(replayed).sha256 != o.sha256) ++mismatches;
        }
    }
    const bool ok = manifests == steps.size() && mismatches == 0 && files > 0;
    return {ok, fmt("%zu manifests replayed, %zu output files compared, %zu mismatches", manifests, files, mismatches)};
}

struct Criterion {
    int number;
    std::function<Outcome()> run;
    std::optional<double> budget_sec;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::vector<int> selected;
    app.add_option("criteria", selected, "criterion numbers to run (default: all)")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, criterion1, 10.0}, {2, criterion2, 30.0},  {3, criterion3, 120.0},
        {4, criterion4, 120.0}, {5, criterion5, 300.0}, {6, criterion6, 180.0},
        {7, criterion7, 60.0}, {8, criterion8, 30.0},  {9, criterion9, std::nullopt},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), c.number) == selected.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = c.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::string timing = fmt("runtime %.1f s", seconds);
        if (c.budget_sec) {
            timing += fmt(", budget %.0f s", *c.budget_sec);
            if (seconds >= *c.budget_sec) {
                outcome.pass = false;
                timing += " EXCEEDED";
            }
        }
        std::cout << "criterion " << c.number << ": " << (outcome.pass ? "PASS" : "FAIL") << " (" << outcome.detail
                  << "; " << timing << ")" << std::endl;
        failures += outcome.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
