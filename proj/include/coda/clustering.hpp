#pragma once

#include "coda/features.hpp"
#include "coda/temporal_model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace coda {

inline constexpr std::size_t kMaxClusterClicks = 64;  // bitmask width

struct ClusteringConfig {
    double rho_d = 1.0;
    double alpha1 = 0.5;
    double alpha2 = 0.5;
    double p_min = 3.0;
    double fr_max = 12000.0;
    bool constrained = true;
    // Individual switches for the two constraints; only consulted when
    // constrained is set.
    bool multipulse_constraint = true;
    bool resonance_constraint = true;
    int min_clicks = 3;
    int max_clicks = 10;
    double max_span = 2.0;  // seconds
};

// Members are indices into the click sequence, sorted by peak time.
struct AssignmentVector {
    std::vector<int> members;
    std::uint64_t mask = 0;

    [[nodiscard]] int rank() const { return static_cast<int>(members.size()); }
    [[nodiscard]] bool orthogonal(const AssignmentVector& other) const { return (mask & other.mask) == 0; }
};

struct ConstraintStats {
    double mean_pulses = 0.0;
    double mean_resonance_hz = 0.0;
};

struct CandidateScore {
    double structural = 0.0;
    double temporal = 0.0;             // raw summed type density
    double temporal_normalized = 0.0;  // divided by the group's peak density
    bool temporal_has_model = false;
    double penalty = 0.0;
    double utility = 0.0;
    ConstraintStats stats;
};

struct ScoredCandidate {
    AssignmentVector c;
    CandidateScore score;
    std::size_t order = 0;  // enumeration index
    bool valid = false;     // passes the threshold and any active constraints
};

struct ClusterSolution {
    std::vector<AssignmentVector> clusters;  // selection order
    std::vector<CandidateScore> scores;
    std::vector<int> unassigned;
};

double penalty(int rank);
double penalty(const AssignmentVector& c);
double structural_likelihood(const AssignmentVector& c, const Eigen::MatrixXd& s);

// ICI vector from the members' peak times in time order.
std::vector<double> cluster_ici(const AssignmentVector& c, std::span<const ClickEvent> clicks);
ConstraintStats cluster_constraint_stats(const AssignmentVector& c, std::span<const ClickEvent> clicks);

CandidateScore score_candidate(const AssignmentVector& c, std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s,
                               const CodaTypeModel& model, const ClusteringConfig& config);
double utility(const AssignmentVector& c, std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s,
               const CodaTypeModel& model, const ClusteringConfig& config);
bool satisfies_constraints(const CandidateScore& score, const ClusteringConfig& config);

// Clicks must be sorted by peak time.
std::vector<AssignmentVector> candidate_codas(std::span<const ClickEvent> clicks, const ClusteringConfig& config);

std::vector<ScoredCandidate> score_candidates(std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s,
                                              const CodaTypeModel& model, const ClusteringConfig& config);

ClusterSolution solve_greedy(std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s, const CodaTypeModel& model,
                             const ClusteringConfig& config);
ClusterSolution solve_greedy(std::span<const ScoredCandidate> candidates, std::size_t click_count);

inline constexpr std::size_t kExactSolverLimit = 12;
ClusterSolution solve_exact(std::span<const ClickEvent> clicks, const Eigen::MatrixXd& s, const CodaTypeModel& model,
                            const ClusteringConfig& config);

// 1/K + sum of utilities; 0 for an empty solution.
double solution_objective(const ClusterSolution& solution);

}  // namespace coda
