#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace coda {

struct CodaRecord {
    std::vector<double> ici;  // seconds, one fewer than the click count
    std::string type_label;
};

// Legacy codas grouped by ICI count W (click count W + 1).
struct CodaDatabase {
    std::map<int, std::vector<CodaRecord>> groups;
    std::vector<std::string> warnings;

    void add(CodaRecord record);
};

// Rows `click_count,type_label,ici_1,...,ici_W`; a header line starting with
// "click_count" and blank lines are skipped.
CodaDatabase read_coda_database(const std::filesystem::path& path);
void write_coda_database(const CodaDatabase& db, const std::filesystem::path& path);

struct PcaBasis {
    Eigen::VectorXd mean;   // W
    Eigen::MatrixXd basis;  // W x Q, orthonormal columns
    int q = 0;
    Eigen::VectorXd eigenvalues;  // all W, descending
};

struct GgdComponent {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    double beta = 1.0;
    double m = 1.0;
    double phi = 1.0;
};

struct MixtureOptions {
    int max_iter = 300;
    double tol = 1e-5;  // relative log-likelihood change for convergence
    bool fit_beta = true;
    bool fit_m = false;
    double beta_min = 0.2;
    double beta_max = 5.0;
    int max_restarts = 5;
    int n_init = 3;  // independent initializations; best final likelihood wins
};

struct Mixture {
    std::vector<GgdComponent> components;
    std::vector<double> ll_trace;  // log-likelihood after each E-step
    double log_likelihood = 0.0;
    int restarts = 0;
    bool fit_beta = true;
    bool fit_m = false;
};

struct BicSelection {
    int k = 0;
    Mixture mixture;
    std::vector<double> bic;  // index K-1
};

struct TypeModel {
    Mixture mixture;
    std::vector<double> template_ici;  // typical ICI vector (seconds)
    std::size_t sample_count = 0;
};

struct GroupModel {
    PcaBasis pca;
    std::map<std::string, TypeModel> types;
    // Largest value of the summed type densities attained at any component
    // mean; derived on load, used to normalize the temporal likelihood.
    double peak_likelihood = 0.0;
};

struct CodaTypeModel {
    static constexpr int kVersion = 1;
    std::map<int, GroupModel> groups;  // keyed by ICI count W

    void refresh_derived();
};

struct TrainOptions {
    int k_max = 3;
    std::optional<int> q;  // default: variance rule
    double variance_target = 0.95;
    int q_cap = 5;
    std::uint64_t seed = 0;
    MixtureOptions mixture;
};

// Smallest Q whose leading eigenvalues explain variance_target of the total,
// capped at min(W, q_cap) and kept below the sample count.
int choose_q(const Eigen::MatrixXd& h, double variance_target = 0.95, int q_cap = 5);

PcaBasis fit_pca(const Eigen::MatrixXd& h, int q);  // rows are ICI vectors
PcaBasis fit_pca(const CodaDatabase& db, int w, int q);
Eigen::VectorXd project(const std::vector<double>& ici, const PcaBasis& basis);
Eigen::VectorXd project(const Eigen::VectorXd& ici, const PcaBasis& basis);

double ggd_log_pdf(const Eigen::VectorXd& h, const GgdComponent& c);
double ggd_pdf(const Eigen::VectorXd& h, const GgdComponent& c);
double mixture_pdf(const Eigen::VectorXd& h, const Mixture& mixture);
double mixture_log_likelihood(const Eigen::MatrixXd& features, const Mixture& mixture);

// Number of free parameters of one component.
int component_parameter_count(int q, bool fit_beta, bool fit_m);
double bic(const Mixture& mixture, std::size_t n);

Mixture fit_mixture(const Eigen::MatrixXd& features, int k, std::uint64_t seed, const MixtureOptions& options = {});
BicSelection select_k_bic(const Eigen::MatrixXd& features, int k_max, std::uint64_t seed,
                          const MixtureOptions& options = {});

CodaTypeModel train_model(const CodaDatabase& db, const TrainOptions& options = {});

struct TemporalScore {
    double value = 0.0;
    bool has_model = false;
};

TemporalScore temporal_likelihood(const std::vector<double>& ici, const CodaTypeModel& model);

void save_model(const CodaTypeModel& model, const std::filesystem::path& path);
CodaTypeModel load_model(const std::filesystem::path& path);
std::string model_to_json(const CodaTypeModel& model);
CodaTypeModel model_from_json(const std::string& text);

}  // namespace coda
