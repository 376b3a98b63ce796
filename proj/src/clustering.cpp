#include "coda/clustering.hpp"

#include "coda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace coda {
namespace {

void check_sorted(std::span<const ClickEvent> clicks) {
    for (std::size_t i = 1; i < clicks.size(); ++i) {
        if (clicks[i].peak_time < clicks[i - 1].peak_time) throw ArgumentError("clicks must be sorted by peak time");
    }
    if (clicks.size() > kMaxClusterClicks) throw ArgumentError("too many clicks for one clustering problem");
}

AssignmentVector make_assignment(const std::vector<int>& members) {
    AssignmentVector c;
    c.members = members;
    for (int m : members) c.mask |= std::uint64_t{1} << m;
    return c;
}

ClusterSolution finish(std::vector<const ScoredCandidate*> chosen, std::size_t click_count) {
    ClusterSolution out;
    std::uint64_t used = 0;
    for (const auto* c : chosen) {
        out.clusters.push_back(c->c);
        out.scores.push_back(c->score);
        used |= c->c.mask;
    }
    for (std::size_t i = 0; i < click_count; ++i) {
        if (!(used & (std::uint64_t{1} << i))) out.unassigned.push_back(static_cast<int>(i));
    }
    return out;
}

}  // namespace

double penalty(int rank) {
    if (rank < 1) throw ArgumentError("penalty: rank must be >= 1");
    return std::exp(1.0 / static_cast<double>(rank));
}

double penalty(const AssignmentVector& c) { return penalty(c.rank()); }

double structural_likelihood(const AssignmentVector& c, const Eigen::MatrixXd& s) {
    const int r = c.rank();
    if (r < 2) throw ArgumentError("structural_likelihood: rank must be >= 2");
    double quad = 0.0;  // c S c^T
    for (int i : c.members) {
        for (int j : c.members) quad += s(i, j);
    }
    return quad / (0.5 * (r - 1.0) * r);
}

std::vector<double> cluster_ici(const AssignmentVector& c, std::span<const ClickEvent> clicks) {
    std::vector<double> times;
    for (int m : c.members) times.push_back(clicks[static_cast<std::size_t>(m)].peak_time);
    std::sort(times.begin(), times.end());
    std::vector<double> ici;
    for (std::size_t i = 1; i < times.size(); ++i) ici.push_back(times[i] - times[i - 1]);
    return ici;
}

ConstraintStats cluster_constraint_stats(const AssignmentVector& c, std::span<const ClickEvent> clicks) {
    if (c.members.empty()) throw ArgumentError("cluster_constraint_stats: empty cluster");
    ConstraintStats s;
    for (int m : c.members) {
        const auto& f = clicks[static_cast<std::size_t>(m)].features;
        if (!f) throw ArgumentError("cluster_constraint_stats: click features missing");
        s.mean_pulses += f->multipulse_count;
        s.mean_resonance_hz += f->resonant_freq_hz;
    }
    s.mean_pulses /= c.rank();
    s.mean_resonance_hz /= c.rank();
    return s;
}

CandidateScore score_candidate(const AssignmentVector& c, std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s,
                               const CodaTypeModel& model, const ClusteringConfig& config) {
    CandidateScore out;
    out.structural = structural_likelihood(c, s);
    const auto t = temporal_likelihood(cluster_ici(c, clicks), model);
    out.temporal = t.value;
    out.temporal_has_model = t.has_model;
    if (t.has_model) {
        const double peak = model.groups.at(c.rank() - 1).peak_likelihood;
        out.temporal_normalized = peak > 0.0 ? t.value / peak : 0.0;
    }
    out.penalty = penalty(c);
    out.utility = out.structural + config.alpha1 * out.temporal_normalized - config.alpha2 * out.penalty;
    out.stats = cluster_constraint_stats(c, clicks);
    return out;
}

double utility(const AssignmentVector& c, std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s,
               const CodaTypeModel& model, const ClusteringConfig& config) {
    if (c.rank() < config.min_clicks || c.rank() > config.max_clicks) {
        throw ArgumentError("utility: rank outside the coda click-count range");
    }
    return score_candidate(c, clicks, s, model, config).utility;
}

bool satisfies_constraints(const CandidateScore& score, const ClusteringConfig& config) {
    if (!(score.utility > config.rho_d)) return false;
    if (!config.constrained) return true;
    if (config.multipulse_constraint && !(score.stats.mean_pulses > config.p_min)) return false;
    if (config.resonance_constraint && !(score.stats.mean_resonance_hz < config.fr_max)) return false;
    return true;
}

std::vector<AssignmentVector> candidate_codas(std::span<const ClickEvent> clicks, const ClusteringConfig& config) {
    check_sorted(clicks);
    if (config.min_clicks < 1 || config.min_clicks > config.max_clicks) {
        throw ArgumentError("candidate_codas: invalid click-count range");
    }
    std::vector<AssignmentVector> out;
    std::vector<int> current;
    const int m = static_cast<int>(clicks.size());
    auto extend = [&](auto&& self, int next) -> void {
        const int r = static_cast<int>(current.size());
        if (r >= config.min_clicks) out.push_back(make_assignment(current));
        if (r == config.max_clicks) return;
        const double t0 = clicks[static_cast<std::size_t>(current.front())].peak_time;
        for (int j = next; j < m; ++j) {
            if (clicks[static_cast<std::size_t>(j)].peak_time - t0 > config.max_span) break;
            current.push_back(j);
            self(self, j + 1);
            current.pop_back();
        }
    };
    for (int first = 0; first < m; ++first) {
        current.assign(1, first);
        extend(extend, first + 1);
    }
    return out;
}

std::vector<ScoredCandidate> score_candidates(std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s,
                                              const CodaTypeModel& model, const ClusteringConfig& config) {
    const auto cands = candidate_codas(clicks, config);
    std::vector<ScoredCandidate> out;
    out.reserve(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        ScoredCandidate sc;
        sc.c = cands[i];
        sc.score = score_candidate(sc.c, clicks, s, model, config);
        sc.order = i;
        sc.valid = satisfies_constraints(sc.score, config);
        out.push_back(std::move(sc));
    }
    return out;
}

ClusterSolution solve_greedy(std::span<const ScoredCandidate> candidates, std::size_t click_count) {
    std::vector<const ScoredCandidate*> ranked;
    for (const auto& c : candidates) {
        if (c.valid) ranked.push_back(&c);
    }
    std::sort(ranked.begin(), ranked.end(), [](const ScoredCandidate* a, const ScoredCandidate* b) {
        if (a->score.utility != b->score.utility) return a->score.utility > b->score.utility;
        if (a->c.rank() != b->c.rank()) return a->c.rank() > b->c.rank();
        if (a->c.members.front() != b->c.members.front()) return a->c.members.front() < b->c.members.front();
        return a->order < b->order;
    });
    // Taking the best survivor, then discarding everything it overlaps, is the
    // same as walking the ranking and skipping overlaps.
    std::vector<const ScoredCandidate*> chosen;
    std::uint64_t used = 0;
    for (const auto* c : ranked) {
        if (c->c.mask & used) continue;
        chosen.push_back(c);
        used |= c->c.mask;
    }
    return finish(std::move(chosen), click_count);
}

ClusterSolution solve_greedy(std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s, const CodaTypeModel& model,
                             const ClusteringConfig& config) {
    const auto scored = score_candidates(clicks, s, model, config);
    return solve_greedy(scored, clicks.size());
}

ClusterSolution solve_exact(std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s, const CodaTypeModel& model,
                            const ClusteringConfig& config) {
    if (clicks.size() > kExactSolverLimit) {
        throw ArgumentError("solve_exact: at most " + std::to_string(kExactSolverLimit) + " clicks");
    }
    const auto scored = score_candidates(clicks, s, model, config);
    const std::size_t m = clicks.size();

    // Candidates grouped by their earliest member; a collection of disjoint
    // clusters is enumerated once by deciding clicks in index order.
    std::vector<std::vector<const ScoredCandidate*>> by_first(m);
    for (const auto& c : scored) {
        if (c.valid) by_first[static_cast<std::size_t>(c.c.members.front())].push_back(&c);
    }

    std::vector<const ScoredCandidate*> current, best;
    double best_obj = 0.0;  // empty solution
    double current_sum = 0.0;
    auto search = [&](auto&& self, std::size_t pos, std::uint64_t used) -> void {
        while (pos < m && (used & (std::uint64_t{1} << pos))) ++pos;
        if (pos >= m) {
            if (!current.empty()) {
                const double obj = 1.0 / static_cast<double>(current.size()) + current_sum;
                if (obj > best_obj) {
                    best_obj = obj;
                    best = current;
                }
            }
            return;
        }
        self(self, pos + 1, used);  // click `pos` left unassigned
        for (const auto* c : by_first[pos]) {
            if (c->c.mask & used) continue;
            current.push_back(c);
            current_sum += c->score.utility;
            self(self, pos + 1, used | c->c.mask);
            current_sum -= c->score.utility;
            current.pop_back();
        }
    };
    search(search, 0, 0);
    return finish(std::move(best), m);
}

double solution_objective(const ClusterSolution& solution) {
    if (solution.clusters.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : solution.scores) sum += s.utility;
    return 1.0 / static_cast<double>(solution.clusters.size()) + sum;
}

}  // namespace coda
