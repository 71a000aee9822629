#pragma once

// Shared fixtures and independent oracles for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "gaitprint/evaluation.hpp"
#include "gaitprint/rng.hpp"
#include "gaitprint/signal.hpp"

namespace support {

/// Recording CSV with `rows` samples at 80 Hz starting at `start`, magnitude
/// given by vm(sample index) along the (0.6, 0.8, 0) direction.
template <typename Fn>
std::string recording_csv(const std::string& id, std::size_t rows, Fn vm,
                          const std::string& start = "2024-03-05T10:00:00.000Z") {
    std::ostringstream out;
    out << "participant_id,timestamp,x,y,z\n";
    const gaitprint::TimestampUs t0 = gaitprint::parse_timestamp(start);
    for (std::size_t i = 0; i < rows; ++i) {
        double v = vm(i);
        out << fmt::format("{},{},{:.17g},{:.17g},0\n", id, gaitprint::format_timestamp(t0 + 12'500 * static_cast<std::int64_t>(i)),
                           0.6 * v, 0.8 * v);
    }
    return out.str();
}

inline std::string recording_csv(const std::string& id, std::size_t rows) {
    return recording_csv(id, rows, [](std::size_t) { return 1.0; });
}

inline gaitprint::VmSecond vm_second(std::vector<double> values, const std::string& id = "A", std::int64_t index = 0) {
    gaitprint::VmSecond s;
    s.participant_id = id;
    s.second_index = index;
    s.values = std::move(values);
    return s;
}

inline std::vector<double> random_values(gaitprint::Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// ---------------------------------------------------------------------------
// Penalized logistic oracle: the same objective minimized by GSL's BFGS.

struct LogisticProblem {
    const Eigen::MatrixXd* X;
    const Eigen::VectorXd* y;
    const Eigen::VectorXd* w;
    double ridge;
};

inline double logistic_loss(const gsl_vector* theta, void* params) {
    const auto& p = *static_cast<LogisticProblem*>(params);
    const auto n = p.X->rows(), k = p.X->cols();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double eta = gsl_vector_get(theta, 0);
        for (Eigen::Index j = 0; j < k; ++j) eta += (*p.X)(i, j) * gsl_vector_get(theta, static_cast<std::size_t>(j + 1));
        double log1pexp = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
        loss -= (*p.w)[i] * ((*p.y)[i] * eta - log1pexp);
    }
    double pen = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) pen += std::pow(gsl_vector_get(theta, static_cast<std::size_t>(j + 1)), 2);
    return loss + p.ridge * p.w->mean() * pen;
}

inline void logistic_grad(const gsl_vector* theta, void* params, gsl_vector* g) {
    const auto& p = *static_cast<LogisticProblem*>(params);
    const auto n = p.X->rows(), k = p.X->cols();
    gsl_vector_set_zero(g);
    for (Eigen::Index i = 0; i < n; ++i) {
        double eta = gsl_vector_get(theta, 0);
        for (Eigen::Index j = 0; j < k; ++j) eta += (*p.X)(i, j) * gsl_vector_get(theta, static_cast<std::size_t>(j + 1));
        double mu = 1.0 / (1.0 + std::exp(-eta));
        double r = -(*p.w)[i] * ((*p.y)[i] - mu);
        *gsl_vector_ptr(g, 0) += r;
        for (Eigen::Index j = 0; j < k; ++j) *gsl_vector_ptr(g, static_cast<std::size_t>(j + 1)) += r * (*p.X)(i, j);
    }
    for (Eigen::Index j = 0; j < k; ++j) {
        auto jj = static_cast<std::size_t>(j + 1);
        *gsl_vector_ptr(g, jj) += 2.0 * p.ridge * p.w->mean() * gsl_vector_get(theta, jj);
    }
}

inline void logistic_fdf(const gsl_vector* theta, void* params, double* f, gsl_vector* g) {
    *f = logistic_loss(theta, params);
    logistic_grad(theta, params, g);
}

/// Intercept followed by slopes.
inline Eigen::VectorXd bfgs_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                     double ridge) {
    LogisticProblem prob{&X, &y, &w, ridge};
    const std::size_t dim = static_cast<std::size_t>(X.cols() + 1);
    gsl_multimin_function_fdf fn{&logistic_loss, &logistic_grad, &logistic_fdf, dim, &prob};
    gsl_vector* x = gsl_vector_calloc(dim);
    gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, dim);
    gsl_set_error_handler_off();
    gsl_multimin_fdfminimizer_set(s, &fn, x, 0.1, 0.1);
    for (int iter = 0; iter < 5000; ++iter) {
        if (gsl_multimin_fdfminimizer_iterate(s) != GSL_SUCCESS) break;
        if (gsl_multimin_test_gradient(s->gradient, 1e-12) == GSL_SUCCESS) break;
    }
    Eigen::VectorXd theta(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) theta[static_cast<Eigen::Index>(j)] = gsl_vector_get(s->x, j);
    gsl_multimin_fdfminimizer_free(s);
    gsl_vector_free(x);
    return theta;
}

/// Random 50x5-style instance with overlapping classes.
struct LogisticInstance {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd w;
};

inline LogisticInstance logistic_instance(std::uint64_t seed, int n = 50, int k = 5) {
    gaitprint::Rng rng(seed);
    LogisticInstance inst{Eigen::MatrixXd(n, k), Eigen::VectorXd(n), Eigen::VectorXd::Ones(n)};
    Eigen::VectorXd beta(k);
    for (int j = 0; j < k; ++j) beta[j] = rng.uniform(-0.8, 0.8);
    for (;;) {
        for (int i = 0; i < n; ++i) {
            double eta = 0.2;
            for (int j = 0; j < k; ++j) {
                inst.X(i, j) = rng.normal();
                eta += beta[j] * inst.X(i, j);
            }
            inst.y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
        }
        double s = inst.y.sum();
        if (s >= 5 && s <= n - 5) return inst;
    }
}

// ---------------------------------------------------------------------------
// Rank oracle: full sort per subject with an explicit comparator.

inline std::vector<std::size_t> oracle_ranks(const Eigen::MatrixXd& scores) {
    const auto n = static_cast<std::size_t>(scores.rows());
    std::vector<std::size_t> ranks(n);
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<std::size_t> order(n);
        for (std::size_t c = 0; c < n; ++c) order[c] = c;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            double sa = scores(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
            double sb = scores(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(b));
            if (sa != sb) return sa > sb;
            return a < b;
        });
        ranks[s] = static_cast<std::size_t>(std::find(order.begin(), order.end(), s) - order.begin()) + 1;
    }
    return ranks;
}

/// Percent of subjects ranked within k, by direct counting.
inline double oracle_accuracy(const std::vector<std::size_t>& ranks, std::size_t k) {
    std::size_t hit = 0;
    for (auto r : ranks) hit += r <= k ? 1 : 0;
    return 100.0 * static_cast<double>(hit) / static_cast<double>(ranks.size());
}

inline gaitprint::ScoreMatrix random_scores(gaitprint::Rng& rng, std::size_t n, bool coarse = false) {
    gaitprint::ScoreMatrix m;
    for (std::size_t i = 0; i < n; ++i) m.ids.push_back(fmt::format("S{:03d}", i));
    m.scores.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < m.scores.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.scores.cols(); ++j) {
            // Coarse scores force ties so the tie-break is exercised.
            m.scores(i, j) = coarse ? static_cast<double>(rng.below(4)) / 4.0 : rng.uniform();
        }
    }
    return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / fmt::format("gaitprint-test-{}", name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace support
