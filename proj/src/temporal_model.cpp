#include "coda/temporal_model.hpp"

#include "coda/errors.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace coda {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

constexpr double kUFloor = 1e-10;
constexpr double kMaxCodaSpan = 2.0;

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double parse_double(const std::string& text, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw FormatError(where + ": not a number: '" + text + "'");
    }
}

// Component evaluated repeatedly: Cholesky factor and log normalizer cached.
struct PreparedComponent {
    Eigen::LLT<MatrixXd> llt;
    VectorXd mu;
    double log_norm = 0.0;
    double beta = 1.0;
    double m_beta = 1.0;  // m^beta

    explicit PreparedComponent(const GgdComponent& c) : llt(c.sigma), mu(c.mu), beta(c.beta) {
        if (llt.info() != Eigen::Success) throw NumericError("GGD covariance is not positive definite");
        if (!(c.beta > 0.0) || !(c.m > 0.0)) throw NumericError("GGD shape and scale must be positive");
        const auto q = static_cast<double>(c.mu.size());
        const MatrixXd& l = llt.matrixL();
        double log_det = 0.0;
        for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
        if (!std::isfinite(log_det)) throw NumericError("GGD covariance is singular");
        const double a = q / (2.0 * c.beta);
        log_norm = std::lgamma(q / 2.0) - (q / 2.0) * std::log(std::numbers::pi) - std::lgamma(a) -
                   a * std::log(2.0) + std::log(c.beta) - (q / 2.0) * std::log(c.m) - 0.5 * log_det;
        m_beta = std::pow(c.m, c.beta);
    }

    double mahalanobis(const VectorXd& h) const {
        const VectorXd y = llt.matrixL().solve(h - mu);
        return y.squaredNorm();
    }

    // Squared Mahalanobis distance of every row of x, in one triangular solve.
    VectorXd mahalanobis_rows(const MatrixXd& x) const {
        const MatrixXd& l = llt.matrixL();
        const Eigen::Index q = mu.size();
        VectorXd out(x.rows());
        VectorXd y(q);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            // Forward substitution L y = x_i - mu.
            double sq = 0.0;
            for (Eigen::Index a = 0; a < q; ++a) {
                double v = x(i, a) - mu(a);
                for (Eigen::Index b = 0; b < a; ++b) v -= l(a, b) * y(b);
                y(a) = v / l(a, a);
                sq += y(a) * y(a);
            }
            out(i) = sq;
        }
        return out;
    }

    double log_pdf(const VectorXd& h) const {
        return log_norm - 0.5 * std::pow(mahalanobis(h), beta) / m_beta;
    }

    double log_pdf_from_distance(double u) const { return log_norm - 0.5 * std::pow(u, beta) / m_beta; }
};

double log_sum_exp(const std::vector<double>& v) {
    const double top = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(top)) return top;
    double s = 0.0;
    for (double x : v) s += std::exp(x - top);
    return top + std::log(s);
}

VectorXd row(const MatrixXd& x, Eigen::Index i) { return x.row(i).transpose(); }

// Weighted expected complete-data log-likelihood of one component.
double component_objective(const MatrixXd& x, const VectorXd& r, const GgdComponent& c) {
    PreparedComponent p(c);
    const VectorXd u = p.mahalanobis_rows(x);
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (r(i) > 0.0) s += r(i) * p.log_pdf_from_distance(u(i));
    }
    return s;
}

void add_ridge(MatrixXd& sigma) {
    const double scale = sigma.trace() / static_cast<double>(sigma.rows());
    sigma.diagonal().array() += 1e-12 * (scale > 0.0 ? scale : 1.0);
    sigma = 0.5 * (sigma + sigma.transpose());
}

// Shape objective in beta with mu, Sigma, m fixed; u are Mahalanobis distances.
struct BetaObjective {
    const VectorXd& r;
    const std::vector<double>& u;
    double q;
    double m;

    double value(double beta) const {
        const double a = q / (2.0 * beta);
        const double mb = std::pow(m, beta);
        const double constant = std::log(beta) - std::lgamma(a) - a * std::log(2.0);
        double s = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            const auto ri = r(static_cast<Eigen::Index>(i));
            if (ri <= 0.0) continue;
            s += ri * (constant - 0.5 * std::pow(u[i], beta) / mb);
        }
        return s;
    }

    struct Local {
        double value = 0.0;
        double g1 = 0.0;
        double g2 = 0.0;
    };

    // Objective with its Newton derivatives for m = 1; with a free scale the
    // step is still a proposal that backtracking validates. The value uses the
    // same expression as value() so the two compare exactly.
    Local local(double beta) const {
        const double a = q / (2.0 * beta);
        const double psi = boost::math::digamma(a);
        const double psi1 = boost::math::trigamma(a);
        const double b2 = beta * beta;
        const double mb = std::pow(m, beta);
        const double log_m = std::log(m);
        const double constant = std::log(beta) - std::lgamma(a) - a * std::log(2.0);
        Local out;
        for (std::size_t i = 0; i < u.size(); ++i) {
            const auto ri = r(static_cast<Eigen::Index>(i));
            if (ri <= 0.0) continue;
            const double lu = std::log(u[i]) - log_m;
            const double pw = std::pow(u[i], beta);
            const double ub = pw / mb;
            out.value += ri * (constant - 0.5 * pw / mb);
            out.g1 += ri * (1.0 / beta + psi * a / beta + a * std::log(2.0) / beta - 0.5 * ub * lu);
            out.g2 += ri * (-1.0 / b2 - psi1 * a * a / b2 - 2.0 * a * psi / b2 - 2.0 * a * std::log(2.0) / b2 -
                            0.5 * ub * lu * lu);
        }
        return out;
    }
};

double update_beta(const BetaObjective& f, double beta, const MixtureOptions& options) {
    const auto [base, g1, g2] = f.local(beta);
    if (!std::isfinite(g1) || g1 == 0.0) return beta;
    double step = g2 < 0.0 ? -g1 / g2 : std::copysign(0.1 * beta, g1);
    for (int tries = 0; tries < 30 && std::abs(step) > 1e-9 * beta; ++tries) {
        const double cand = std::clamp(beta + step, options.beta_min, options.beta_max);
        if (cand != beta && f.value(cand) > base) return cand;
        step *= 0.5;
    }
    return beta;
}

// k-means++ seeding followed by Lloyd iterations; returns hard labels.
std::vector<int> kmeans_labels(const MatrixXd& x, int k, std::mt19937_64& rng) {
    const Eigen::Index n = x.rows();
    std::vector<VectorXd> centres;
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centres.push_back(row(x, pick(rng)));
    std::vector<double> d2(static_cast<std::size_t>(n));
    while (static_cast<int>(centres.size()) < k) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centres) best = std::min(best, (row(x, i) - c).squaredNorm());
            d2[static_cast<std::size_t>(i)] = best;
            total += best;
        }
        if (!(total > 0.0)) {
            centres.push_back(row(x, pick(rng)));
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        Eigen::Index chosen = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            target -= d2[static_cast<std::size_t>(i)];
            if (target <= 0.0) {
                chosen = i;
                break;
            }
        }
        centres.push_back(row(x, chosen));
    }

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < 50; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (row(x, i) - centres[static_cast<std::size_t>(c)]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (labels[static_cast<std::size_t>(i)] != best) changed = true;
            labels[static_cast<std::size_t>(i)] = best;
        }
        if (!changed) break;
        for (int c = 0; c < k; ++c) {
            VectorXd sum = VectorXd::Zero(x.cols());
            int count = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (labels[static_cast<std::size_t>(i)] == c) {
                    sum += row(x, i);
                    ++count;
                }
            }
            if (count > 0) centres[static_cast<std::size_t>(c)] = sum / count;
        }
    }
    return labels;
}

struct Degenerate {};

Mixture run_em(const MatrixXd& x, int k, std::mt19937_64& rng, const MixtureOptions& options) {
    const Eigen::Index n = x.rows();
    const auto q = static_cast<int>(x.cols());
    const auto labels = kmeans_labels(x, k, rng);

    Mixture mix;
    mix.fit_beta = options.fit_beta;
    mix.fit_m = options.fit_m;
    for (int c = 0; c < k; ++c) {
        std::vector<Eigen::Index> members;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (labels[static_cast<std::size_t>(i)] == c) members.push_back(i);
        }
        if (static_cast<int>(members.size()) < q + 1) throw Degenerate{};
        GgdComponent g;
        g.mu = VectorXd::Zero(q);
        for (auto i : members) g.mu += row(x, i);
        g.mu /= static_cast<double>(members.size());
        g.sigma = MatrixXd::Zero(q, q);
        for (auto i : members) {
            const VectorXd d = row(x, i) - g.mu;
            g.sigma += d * d.transpose();
        }
        g.sigma /= static_cast<double>(members.size());
        add_ridge(g.sigma);
        g.phi = static_cast<double>(members.size()) / static_cast<double>(n);
        mix.components.push_back(g);
    }

    MatrixXd resp(n, k);
    std::vector<double> logp(static_cast<std::size_t>(k));
    // Distances and component log densities from the last E-step; the M-step
    // starts from the same parameters and reuses them.
    MatrixXd dists(n, k), powers(n, k), log_dens(n, k);  // u, u^beta, log density
    auto e_step = [&](const Mixture& m) {
        for (int c = 0; c < k; ++c) {
            const PreparedComponent p(m.components[static_cast<std::size_t>(c)]);
            dists.col(c) = p.mahalanobis_rows(x);
            for (Eigen::Index i = 0; i < n; ++i) {
                powers(i, c) = std::pow(dists(i, c), p.beta);
                log_dens(i, c) = p.log_norm - 0.5 * powers(i, c) / p.m_beta;
            }
        }
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int c = 0; c < k; ++c) {
                logp[static_cast<std::size_t>(c)] =
                    std::log(m.components[static_cast<std::size_t>(c)].phi) + log_dens(i, c);
            }
            const double lse = log_sum_exp(logp);
            if (!std::isfinite(lse)) throw Degenerate{};
            ll += lse;
            for (int c = 0; c < k; ++c) resp(i, c) = std::exp(logp[static_cast<std::size_t>(c)] - lse);
        }
        return ll;
    };

    Mixture previous;
    for (int iter = 0; iter < options.max_iter; ++iter) {
        double ll = 0.0;
        try {
            ll = e_step(mix);
        } catch (const NumericError&) {
            throw Degenerate{};
        }
        if (!mix.ll_trace.empty() && ll < mix.ll_trace.back()) {
            // Numerical noise in a converged fit; keep the better parameters.
            previous.ll_trace = mix.ll_trace;
            mix = previous;
            e_step(mix);
            break;
        }
        const bool converged =
            !mix.ll_trace.empty() && ll - mix.ll_trace.back() <= options.tol * std::max(1.0, std::abs(ll));
        mix.ll_trace.push_back(ll);
        mix.log_likelihood = ll;
        if (converged) break;
        previous = mix;

        for (int c = 0; c < k; ++c) {
            auto& comp = mix.components[static_cast<std::size_t>(c)];
            const VectorXd r = resp.col(c);
            const double nk = r.sum();
            if (nk < static_cast<double>(q) + 1.0) throw Degenerate{};
            comp.phi = nk / static_cast<double>(n);

            // Location and scatter: fixed-point step of the generalized-Gaussian likelihood.
            {
                VectorXd w(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double u = dists(i, c);
                    w(i) = r(i) * (u >= kUFloor ? powers(i, c) / u : std::pow(kUFloor, comp.beta - 1.0));
                }
                GgdComponent cand = comp;
                cand.mu = (x.transpose() * w) / w.sum();
                const MatrixXd centred = x.rowwise() - cand.mu.transpose();
                const MatrixXd s = centred.transpose() * w.asDiagonal() * centred;
                cand.sigma = s * (comp.beta / (nk * std::pow(comp.m, comp.beta)));
                add_ridge(cand.sigma);
                if (Eigen::LLT<MatrixXd>(cand.sigma).info() != Eigen::Success) throw Degenerate{};
                double current = 0.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    if (r(i) > 0.0) current += r(i) * log_dens(i, c);
                }
                if (component_objective(x, r, cand) >= current) {
                    comp = cand;
                    dists.col(c) = PreparedComponent(comp).mahalanobis_rows(x);
                }
            }

            if (options.fit_beta || options.fit_m) {
                std::vector<double> u(static_cast<std::size_t>(n));
                for (Eigen::Index i = 0; i < n; ++i) u[static_cast<std::size_t>(i)] = std::max(dists(i, c), kUFloor);
                if (options.fit_beta) {
                    const BetaObjective f{r, u, static_cast<double>(q), comp.m};
                    comp.beta = update_beta(f, comp.beta, options);
                }
                if (options.fit_m) {
                    double s = 0.0;
                    for (Eigen::Index i = 0; i < n; ++i) s += r(i) * std::pow(u[static_cast<std::size_t>(i)], comp.beta);
                    GgdComponent cand = comp;
                    cand.m = std::pow(comp.beta * s / (q * nk), 1.0 / comp.beta);
                    if (cand.m > 0.0 && std::isfinite(cand.m) &&
                        component_objective(x, r, cand) >= component_objective(x, r, comp)) {
                        comp = cand;
                    }
                }
            }
        }
        // Priors must sum to one exactly up to rounding.
        double total = 0.0;
        for (const auto& c : mix.components) total += c.phi;
        for (auto& c : mix.components) c.phi /= total;
    }
    return mix;
}

}  // namespace

void CodaDatabase::add(CodaRecord record) {
    if (record.ici.empty()) throw ArgumentError("coda record needs at least one ICI");
    double span = 0.0;
    for (double v : record.ici) {
        if (!(v > 0.0)) throw ArgumentError("coda record has a non-positive ICI");
        span += v;
    }
    if (span >= kMaxCodaSpan) {
        warnings.push_back("coda of type " + record.type_label + " spans " + std::to_string(span) + " s");
    }
    groups[static_cast<int>(record.ici.size())].push_back(std::move(record));
}

CodaDatabase read_coda_database(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    CodaDatabase db;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line.rfind("click_count", 0) == 0) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        const auto fields = split(line, ',');
        if (fields.size() < 3) throw FormatError(where + ": expected click_count,type_label,ici...");
        const double count = parse_double(trim(fields[0]), where);
        if (count != std::floor(count) || count < 2) throw FormatError(where + ": bad click count");
        if (fields.size() - 2 != static_cast<std::size_t>(count) - 1) {
            throw FormatError(where + ": click count does not match the number of ICIs");
        }
        CodaRecord rec;
        rec.type_label = trim(fields[1]);
        if (rec.type_label.empty()) throw FormatError(where + ": empty type label");
        for (std::size_t i = 2; i < fields.size(); ++i) rec.ici.push_back(parse_double(trim(fields[i]), where));
        try {
            db.add(std::move(rec));
        } catch (const ArgumentError& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return db;
}

void write_coda_database(const CodaDatabase& db, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "click_count,type_label,ici\n";
    out.precision(17);
    for (const auto& [w, records] : db.groups) {
        for (const auto& r : records) {
            out << w + 1 << ',' << r.type_label;
            for (double v : r.ici) out << ',' << v;
            out << '\n';
        }
    }
    if (!out) throw IoError("short write to " + path.string());
}

int choose_q(const MatrixXd& h, double variance_target, int q_cap) {
    const auto w = static_cast<int>(h.cols());
    const auto n = static_cast<int>(h.rows());
    const int cap = std::max(1, std::min({w, q_cap, n - 1}));
    const PcaBasis full = fit_pca(h, std::min(w, std::max(1, n - 1)));
    const double total = full.eigenvalues.sum();
    if (!(total > 0.0)) return 1;
    double acc = 0.0;
    for (int q = 1; q <= cap; ++q) {
        acc += std::max(0.0, full.eigenvalues(q - 1));
        if (acc >= variance_target * total) return q;
    }
    return cap;
}

PcaBasis fit_pca(const MatrixXd& h, int q) {
    const auto n = h.rows();
    const auto w = h.cols();
    if (q < 1 || q > w) throw ArgumentError("fit_pca: Q must lie in [1, W]");
    if (n <= q) throw ArgumentError("fit_pca: need more samples than components");
    PcaBasis out;
    out.mean = h.colwise().mean().transpose();
    const MatrixXd centred = h.rowwise() - out.mean.transpose();
    const MatrixXd cov = centred.transpose() * centred / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("fit_pca: eigen-decomposition failed");
    // Eigen sorts ascending; reverse to descending.
    out.eigenvalues = eig.eigenvalues().reverse();
    out.basis.resize(w, q);
    for (int j = 0; j < q; ++j) {
        VectorXd v = eig.eigenvectors().col(w - 1 - j);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        out.basis.col(j) = v;
    }
    out.q = q;
    return out;
}

PcaBasis fit_pca(const CodaDatabase& db, int w, int q) {
    const auto it = db.groups.find(w);
    if (it == db.groups.end()) throw ArgumentError("fit_pca: no codas with " + std::to_string(w) + " ICIs");
    MatrixXd h(static_cast<Eigen::Index>(it->second.size()), w);
    for (std::size_t i = 0; i < it->second.size(); ++i) {
        for (int j = 0; j < w; ++j) h(static_cast<Eigen::Index>(i), j) = it->second[i].ici[static_cast<std::size_t>(j)];
    }
    return fit_pca(h, q);
}

VectorXd project(const VectorXd& ici, const PcaBasis& basis) {
    if (ici.size() != basis.mean.size()) throw ArgumentError("project: ICI length does not match the basis");
    return basis.basis.transpose() * (ici - basis.mean);
}

VectorXd project(const std::vector<double>& ici, const PcaBasis& basis) {
    return project(Eigen::Map<const VectorXd>(ici.data(), static_cast<Eigen::Index>(ici.size())), basis);
}

double ggd_log_pdf(const VectorXd& h, const GgdComponent& c) {
    if (h.size() != c.mu.size()) throw ArgumentError("ggd_pdf: dimension mismatch");
    return PreparedComponent(c).log_pdf(h);
}

double ggd_pdf(const VectorXd& h, const GgdComponent& c) { return std::exp(ggd_log_pdf(h, c)); }

double mixture_pdf(const VectorXd& h, const Mixture& mixture) {
    double p = 0.0;
    for (const auto& c : mixture.components) p += c.phi * ggd_pdf(h, c);
    return p;
}

double mixture_log_likelihood(const MatrixXd& features, const Mixture& mixture) {
    std::vector<PreparedComponent> prep;
    for (const auto& c : mixture.components) prep.emplace_back(c);
    std::vector<double> logp(prep.size());
    double ll = 0.0;
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const VectorXd h = row(features, i);
        for (std::size_t c = 0; c < prep.size(); ++c) {
            logp[c] = std::log(mixture.components[c].phi) + prep[c].log_pdf(h);
        }
        ll += log_sum_exp(logp);
    }
    return ll;
}

int component_parameter_count(int q, bool fit_beta, bool fit_m) {
    return q + q * (q + 1) / 2 + (fit_beta ? 1 : 0) + (fit_m ? 1 : 0) + 1;
}

double bic(const Mixture& mixture, std::size_t n) {
    if (mixture.components.empty()) throw ArgumentError("bic: empty mixture");
    const auto q = static_cast<int>(mixture.components.front().mu.size());
    const int params =
        static_cast<int>(mixture.components.size()) * component_parameter_count(q, mixture.fit_beta, mixture.fit_m) - 1;
    return std::log(static_cast<double>(n)) * params - 2.0 * mixture.log_likelihood;
}

Mixture fit_mixture(const MatrixXd& features, int k, std::uint64_t seed, const MixtureOptions& options) {
    if (k < 1) throw ArgumentError("fit_mixture: K must be >= 1");
    if (features.rows() <= static_cast<Eigen::Index>(k) * features.cols()) {
        throw ArgumentError("fit_mixture: need more than K*Q samples");
    }
    std::optional<Mixture> best;
    int restarts = 0;
    int successes = 0;
    for (std::uint64_t attempt = 0; successes < std::max(1, options.n_init); ++attempt) {
        std::mt19937_64 rng(seed + attempt);
        try {
            Mixture m = run_em(features, k, rng, options);
            ++successes;
            if (!best || m.log_likelihood > best->log_likelihood) best = std::move(m);
        } catch (const Degenerate&) {
            if (++restarts > options.max_restarts) {
                if (best) break;
                throw NumericError("fit_mixture: degenerate components after " + std::to_string(options.max_restarts) +
                                   " restarts (K=" + std::to_string(k) + ")");
            }
        }
    }
    best->restarts = restarts;
    return *best;
}

BicSelection select_k_bic(const MatrixXd& features, int k_max, std::uint64_t seed, const MixtureOptions& options) {
    if (k_max < 1) throw ArgumentError("select_k_bic: K_max must be >= 1");
    BicSelection out;
    for (int k = 1; k <= k_max; ++k) {
        if (features.rows() <= static_cast<Eigen::Index>(k) * features.cols()) break;
        Mixture m;
        try {
            m = fit_mixture(features, k, seed, options);
        } catch (const NumericError&) {
            if (k == 1) throw;
            out.bic.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        const double b = bic(m, static_cast<std::size_t>(features.rows()));
        out.bic.push_back(b);
        if (out.k == 0 || b < out.bic[static_cast<std::size_t>(out.k - 1)]) {
            out.k = k;
            out.mixture = std::move(m);
        }
    }
    if (out.k == 0) throw ArgumentError("select_k_bic: not enough samples for a single component");
    return out;
}

void CodaTypeModel::refresh_derived() {
    for (auto& [w, group] : groups) {
        group.peak_likelihood = 0.0;
        for (const auto& [label, type] : group.types) {
            for (const auto& c : type.mixture.components) {
                double total = 0.0;
                for (const auto& [other, t2] : group.types) total += mixture_pdf(c.mu, t2.mixture);
                group.peak_likelihood = std::max(group.peak_likelihood, total);
            }
        }
    }
}

CodaTypeModel train_model(const CodaDatabase& db, const TrainOptions& options) {
    CodaTypeModel model;
    for (const auto& [w, records] : db.groups) {
        const auto n = static_cast<Eigen::Index>(records.size());
        if (n < 3) continue;
        MatrixXd h(n, w);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int j = 0; j < w; ++j) h(i, j) = records[static_cast<std::size_t>(i)].ici[static_cast<std::size_t>(j)];
        }
        int q = options.q ? std::min({*options.q, w, static_cast<int>(n) - 1})
                          : choose_q(h, options.variance_target, options.q_cap);
        GroupModel group;
        group.pca = fit_pca(h, q);

        std::map<std::string, std::vector<Eigen::Index>> by_type;
        for (Eigen::Index i = 0; i < n; ++i) by_type[records[static_cast<std::size_t>(i)].type_label].push_back(i);
        std::uint64_t type_index = 0;
        for (const auto& [label, members] : by_type) {
            ++type_index;
            const auto count = static_cast<int>(members.size());
            const int k_max = std::min(options.k_max, (count - 1) / q);
            if (k_max < 1) continue;
            MatrixXd features(count, q);
            VectorXd templ = VectorXd::Zero(w);
            for (int i = 0; i < count; ++i) {
                features.row(i) = project(VectorXd(h.row(members[static_cast<std::size_t>(i)]).transpose()), group.pca).transpose();
                templ += h.row(members[static_cast<std::size_t>(i)]).transpose();
            }
            templ /= count;
            const std::uint64_t seed = options.seed + 1000003ULL * static_cast<std::uint64_t>(w) + 7919ULL * type_index;
            auto sel = select_k_bic(features, k_max, seed, options.mixture);
            TypeModel t;
            t.mixture = std::move(sel.mixture);
            t.mixture.ll_trace.clear();
            t.template_ici.assign(templ.data(), templ.data() + templ.size());
            t.sample_count = static_cast<std::size_t>(count);
            group.types.emplace(label, std::move(t));
        }
        if (!group.types.empty()) model.groups.emplace(w, std::move(group));
    }
    model.refresh_derived();
    return model;
}

TemporalScore temporal_likelihood(const std::vector<double>& ici, const CodaTypeModel& model) {
    const auto it = model.groups.find(static_cast<int>(ici.size()));
    if (it == model.groups.end()) return {};
    const VectorXd o = project(ici, it->second.pca);
    TemporalScore s;
    s.has_model = true;
    for (const auto& [label, type] : it->second.types) s.value += mixture_pdf(o, type.mixture);
    return s;
}

namespace {

json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

VectorXd json_vec(const json& j, Eigen::Index expect, const char* what) {
    const auto v = j.get<std::vector<double>>();
    if (expect >= 0 && static_cast<Eigen::Index>(v.size()) != expect) {
        throw FormatError(std::string("model: wrong length for ") + what);
    }
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

MatrixXd json_mat(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
        throw FormatError(std::string("model: wrong row count for ") + what);
    }
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = json_vec(j[static_cast<std::size_t>(i)], cols, what).transpose();
    return m;
}

}  // namespace

std::string model_to_json(const CodaTypeModel& model) {
    json doc;
    doc["version"] = CodaTypeModel::kVersion;
    json per_w = json::object();
    for (const auto& [w, g] : model.groups) {
        json jg;
        jg["mean"] = vec_json(g.pca.mean);
        jg["basis"] = mat_json(g.pca.basis);
        jg["q"] = g.pca.q;
        jg["eigenvalues"] = vec_json(g.pca.eigenvalues);
        json types = json::object();
        for (const auto& [label, t] : g.types) {
            json jt;
            json comps = json::array();
            for (const auto& c : t.mixture.components) {
                comps.push_back({{"mu", vec_json(c.mu)}, {"sigma", mat_json(c.sigma)}, {"beta", c.beta}, {"m", c.m}, {"phi", c.phi}});
            }
            jt["components"] = comps;
            jt["template"] = t.template_ici;
            jt["samples"] = t.sample_count;
            jt["log_likelihood"] = t.mixture.log_likelihood;
            jt["fit_beta"] = t.mixture.fit_beta;
            jt["fit_m"] = t.mixture.fit_m;
            types[label] = jt;
        }
        jg["types"] = types;
        per_w[std::to_string(w)] = jg;
    }
    doc["per_W"] = per_w;
    return doc.dump(2) + "\n";
}

CodaTypeModel model_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model: invalid JSON: ") + e.what());
    }
    try {
        if (!doc.is_object() || !doc.contains("version") || !doc.contains("per_W")) {
            throw FormatError("model: missing version or per_W");
        }
        if (doc.at("version").get<int>() != CodaTypeModel::kVersion) {
            throw FormatError("model: unsupported version " + doc.at("version").dump());
        }
        CodaTypeModel model;
        for (const auto& [key, jg] : doc.at("per_W").items()) {
            int w = 0;
            try {
                w = std::stoi(key);
            } catch (const std::exception&) {
                throw FormatError("model: bad group key '" + key + "'");
            }
            if (w < 1) throw FormatError("model: bad group key '" + key + "'");
            GroupModel g;
            g.pca.q = jg.at("q").get<int>();
            if (g.pca.q < 1 || g.pca.q > w) throw FormatError("model: q out of range for W=" + key);
            g.pca.mean = json_vec(jg.at("mean"), w, "mean");
            g.pca.basis = json_mat(jg.at("basis"), w, g.pca.q, "basis");
            if (jg.contains("eigenvalues")) g.pca.eigenvalues = json_vec(jg.at("eigenvalues"), -1, "eigenvalues");
            for (const auto& [label, jt] : jg.at("types").items()) {
                TypeModel t;
                t.mixture.fit_beta = jt.value("fit_beta", true);
                t.mixture.fit_m = jt.value("fit_m", false);
                t.mixture.log_likelihood = jt.value("log_likelihood", 0.0);
                t.sample_count = jt.value("samples", std::size_t{0});
                for (const auto& jc : jt.at("components")) {
                    GgdComponent c;
                    c.mu = json_vec(jc.at("mu"), g.pca.q, "mu");
                    c.sigma = json_mat(jc.at("sigma"), g.pca.q, g.pca.q, "sigma");
                    c.beta = jc.at("beta").get<double>();
                    c.m = jc.at("m").get<double>();
                    c.phi = jc.at("phi").get<double>();
                    if (!(c.beta > 0.0) || !(c.m > 0.0) || !(c.phi > 0.0) || c.phi > 1.0) {
                        throw FormatError("model: invalid component parameters for type " + label);
                    }
                    if (Eigen::LLT<MatrixXd>(c.sigma).info() != Eigen::Success) {
                        throw FormatError("model: covariance not positive definite for type " + label);
                    }
                    t.mixture.components.push_back(std::move(c));
                }
                if (t.mixture.components.empty()) throw FormatError("model: type " + label + " has no components");
                if (jt.contains("template")) {
                    t.template_ici = jt.at("template").get<std::vector<double>>();
                    if (static_cast<int>(t.template_ici.size()) != w) throw FormatError("model: template length for " + label);
                }
                g.types.emplace(label, std::move(t));
            }
            model.groups.emplace(w, std::move(g));
        }
        model.refresh_derived();
        return model;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model: schema error: ") + e.what());
    }
}

void save_model(const CodaTypeModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << model_to_json(model);
    if (!out) throw IoError("short write to " + path.string());
}

CodaTypeModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

}  // namespace coda
