#include "gaitprint/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gaitprint/binio.hpp"
#include "gaitprint/errors.hpp"
#include "gaitprint/parallel.hpp"
#include "gaitprint/rng.hpp"

namespace gaitprint {

namespace {

double sigmoid(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    double e = std::exp(eta);
    return e / (1.0 + e);
}

// log(1 + exp(eta))
double softplus(double eta) {
    return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

void check_inputs(const MatrixXd& X, const VectorXd& y, const VectorXd& w) {
    if (y.size() != X.rows() || w.size() != X.rows()) throw ShapeError("X, y and w disagree on row count");
    if (X.rows() == 0) throw EmptyInputError("no rows to fit");
    if (!X.allFinite() || !y.allFinite() || !w.allFinite()) throw NumericError("non-finite design, label or weight");
    double pos = 0.0, neg = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw DataError("labels must be 0 or 1");
        if (w[i] < 0.0) throw DataError("observation weights must be non-negative");
        (y[i] == 1.0 ? pos : neg) += w[i];
    }
    if (pos <= 0.0 || neg <= 0.0) throw DegenerateLabelError("labels contain a single class");
}

MatrixXd with_intercept(const MatrixXd& X) {
    MatrixXd Xa(X.rows(), X.cols() + 1);
    Xa.col(0).setOnes();
    Xa.rightCols(X.cols()) = X;
    return Xa;
}

}  // namespace

// ---------------------------------------------------------------------------

ScreenReport screen_predictors(const MatrixXd& X) {
    ScreenReport report;
    const Eigen::Index n = X.rows();
    std::vector<double> col(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const auto cj = static_cast<std::uint32_t>(j);
        for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = X(i, j);
        std::sort(col.begin(), col.end());
        std::size_t unique = 0, top = 0, second = 0;
        for (std::size_t i = 0; i < col.size();) {
            std::size_t k = i;
            while (k < col.size() && col[k] == col[i]) ++k;
            std::size_t freq = k - i;
            ++unique;
            if (freq > top) {
                second = top;
                top = freq;
            } else if (freq > second) {
                second = freq;
            }
            i = k;
        }
        if (unique <= 1) {
            report.dropped.emplace_back(cj, "single unique value");
            continue;
        }
        double unique_fraction = static_cast<double>(unique) / static_cast<double>(n);
        double ratio = static_cast<double>(top) / static_cast<double>(second);
        if (unique_fraction < 0.10 && ratio > 95.0) {
            report.dropped.emplace_back(
                cj, fmt::format("near-zero variance (unique fraction {:.4g}, frequency ratio {:.4g})",
                                unique_fraction, ratio));
            continue;
        }
        report.retained.push_back(cj);
    }
    return report;
}

// ---------------------------------------------------------------------------

VectorXd penalized_score(const MatrixXd& X, const VectorXd& y, const VectorXd& w, double ridge, double intercept,
                         const VectorXd& slopes) {
    const double wbar = w.sum() / static_cast<double>(w.size());
    VectorXd eta = (X * slopes).array() + intercept;
    VectorXd resid(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) resid[i] = w[i] * (y[i] - sigmoid(eta[i]));
    VectorXd g(X.cols() + 1);
    g[0] = resid.sum();
    g.tail(X.cols()) = X.transpose() * resid - 2.0 * ridge * wbar * slopes;
    return g;
}

LogisticFit fit_logistic(const MatrixXd& X, const VectorXd& y, const VectorXd& w, const LogisticOptions& options) {
    check_inputs(X, y, w);
    if (options.ridge < 0.0) throw ConfigError("ridge must be non-negative");
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    const double wsum = w.sum();
    const double wbar = wsum / static_cast<double>(n);
    const double pen = 2.0 * options.ridge * wbar;

    const MatrixXd Xa = with_intercept(X);
    VectorXd beta = VectorXd::Zero(p + 1);
    const double ybar = w.dot(y) / wsum;
    beta[0] = std::log(ybar / (1.0 - ybar));

    auto deviance = [&](const VectorXd& eta, const VectorXd& b) {
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) ll += w[i] * (y[i] * eta[i] - softplus(eta[i]));
        return -2.0 * ll + pen * b.tail(p).squaredNorm();
    };

    VectorXd eta = Xa * beta;
    double dev = deviance(eta, beta);
    LogisticFit fit;
    VectorXd mu(n), sw(n), resid(n);
    MatrixXd H(p + 1, p + 1);
    for (int it = 1; it <= options.max_iterations; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = sigmoid(eta[i]);
            sw[i] = std::sqrt(w[i] * mu[i] * (1.0 - mu[i]));
            resid[i] = w[i] * (y[i] - mu[i]);
        }
        VectorXd g = Xa.transpose() * resid;
        g.tail(p) -= pen * beta.tail(p);

        const MatrixXd Xw = Xa.array().colwise() * sw.array();
        H.setZero();
        H.selfadjointView<Eigen::Lower>().rankUpdate(Xw.transpose());
        H.diagonal().tail(p).array() += pen;
        H.triangularView<Eigen::StrictlyUpper>() = H.transpose();

        Eigen::LDLT<MatrixXd> ldlt(H);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            MatrixXd Hj = H;
            Hj.diagonal().array() += 1e-12 * std::max(1.0, H.diagonal().maxCoeff());
            ldlt.compute(Hj);
        }
        const VectorXd delta = ldlt.solve(g);
        if (!delta.allFinite()) throw NumericError("IRLS produced a non-finite Newton step");

        double step = 1.0;
        VectorXd beta_new, eta_new;
        double dev_new = dev;
        bool improved = false;
        for (int half = 0; half < 40; ++half) {
            beta_new = beta + step * delta;
            eta_new = Xa * beta_new;
            dev_new = deviance(eta_new, beta_new);
            if (std::isfinite(dev_new) && dev_new <= dev + 1e-12 * std::abs(dev)) {
                improved = true;
                break;
            }
            step *= 0.5;
        }
        fit.iterations = it;
        if (!improved) {
            // no descent direction left: we are at the optimum to machine precision
            fit.converged = true;
            break;
        }
        const double rel = std::abs(dev - dev_new) / (std::abs(dev_new) + 0.1 * wbar);
        beta = std::move(beta_new);
        eta = std::move(eta_new);
        dev = dev_new;
        if (rel < options.tolerance) {
            fit.converged = true;
            break;
        }
    }
    if (!beta.allFinite()) throw NumericError("IRLS diverged");
    fit.intercept = beta[0];
    fit.slopes = beta.tail(p);
    fit.deviance = dev;
    return fit;
}

// ---------------------------------------------------------------------------

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t k = i;
        while (k < order.size() && scores[order[k]] == scores[order[i]]) ++k;
        const double midrank = 0.5 * static_cast<double>(i + 1 + k);  // mean of ranks i+1..k
        for (std::size_t t = i; t < k; ++t) {
            if (labels[order[t]] == 1) {
                rank_sum += midrank;
                ++n_pos;
            }
        }
        i = k;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DegenerateLabelError("auc needs both classes");
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

namespace {

struct Standardization {
    VectorXd mean;
    VectorXd scale;  // zero for constant columns
    MatrixXd Xs;
};

Standardization standardize(const MatrixXd& X, const VectorXd& wn) {
    Standardization s;
    s.mean = X.transpose() * wn;
    s.scale.resize(X.cols());
    s.Xs.resize(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        VectorXd c = X.col(j).array() - s.mean[j];
        double var = wn.dot(c.cwiseProduct(c));
        double sd = std::sqrt(std::max(var, 0.0));
        if (sd > 1e-12) {
            s.scale[j] = sd;
            s.Xs.col(j) = c / sd;
        } else {
            s.scale[j] = 0.0;
            s.Xs.col(j).setZero();
        }
    }
    return s;
}

double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

}  // namespace

double lasso_lambda_max(const MatrixXd& X, const VectorXd& y, const VectorXd& w) {
    check_inputs(X, y, w);
    const VectorXd wn = w / w.sum();
    const Standardization s = standardize(X, wn);
    const double ybar = wn.dot(y);
    const VectorXd r = wn.cwiseProduct((y.array() - ybar).matrix());
    return X.cols() == 0 ? 0.0 : (s.Xs.transpose() * r).cwiseAbs().maxCoeff();
}

std::vector<double> lasso_default_grid(double lambda_max, int count, double ratio) {
    if (count < 1) throw ConfigError("lasso grid needs at least one value");
    std::vector<double> grid;
    for (int k = 0; k < count; ++k) {
        double t = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
        grid.push_back(lambda_max * std::pow(ratio, t));
    }
    return grid;
}

std::vector<LogisticFit> fit_lasso_path(const MatrixXd& X, const VectorXd& y, const VectorXd& w,
                                        std::span<const double> lambdas, const LassoOptions& options) {
    check_inputs(X, y, w);
    if (lambdas.empty()) throw ConfigError("lasso path needs at least one lambda");
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    const VectorXd wn = w / w.sum();
    const Standardization st = standardize(X, wn);
    const MatrixXd& Xs = st.Xs;

    const double ybar = wn.dot(y);
    double b0 = std::log(ybar / (1.0 - ybar));
    VectorXd b = VectorXd::Zero(p);
    VectorXd eta = VectorXd::Constant(n, b0);

    auto objective = [&](const VectorXd& e, const VectorXd& coef, double lambda) {
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) loss += wn[i] * (softplus(e[i]) - y[i] * e[i]);
        return loss + lambda * coef.lpNorm<1>();
    };

    std::vector<LogisticFit> path;
    VectorXd v(n), r(n), xv2(p);
    for (double lambda : lambdas) {
        if (!(lambda >= 0.0)) throw ConfigError("lasso lambda must be non-negative");
        LogisticFit fit;
        double obj = objective(eta, b, lambda);
        for (int outer = 1; outer <= options.max_outer; ++outer) {
            fit.iterations = outer;
            for (Eigen::Index i = 0; i < n; ++i) {
                double mu = std::clamp(sigmoid(eta[i]), 1e-9, 1.0 - 1e-9);
                double d = mu * (1.0 - mu);
                v[i] = wn[i] * d;
                r[i] = (y[i] - mu) / d;  // working residual z - eta
            }
            for (Eigen::Index j = 0; j < p; ++j) xv2[j] = st.scale[j] > 0.0 ? v.dot(Xs.col(j).cwiseAbs2()) : 0.0;
            const double vsum = v.sum();
            const double b0_old = b0;
            const VectorXd b_old = b;

            auto sweep = [&](bool active_only) {
                double max_change = 0.0;
                double d0 = v.dot(r) / vsum;
                if (d0 != 0.0) {
                    b0 += d0;
                    r.array() -= d0;
                    max_change = std::max(max_change, vsum * d0 * d0);
                }
                for (Eigen::Index j = 0; j < p; ++j) {
                    if (xv2[j] <= 0.0) continue;
                    if (active_only && b[j] == 0.0) continue;
                    const auto xj = Xs.col(j);
                    double grad = xj.dot(v.cwiseProduct(r)) + xv2[j] * b[j];
                    double nb = soft_threshold(grad, lambda) / xv2[j];
                    double d = nb - b[j];
                    if (d != 0.0) {
                        r -= d * xj;
                        b[j] = nb;
                        max_change = std::max(max_change, xv2[j] * d * d);
                    }
                }
                return max_change;
            };
            for (int inner = 0; inner < options.max_inner; ++inner) {
                if (sweep(false) < options.tolerance) break;
                for (int a = 0; a < options.max_inner; ++a) {
                    if (sweep(true) < options.tolerance) break;
                }
            }

            VectorXd eta_new = (Xs * b).array() + b0;
            double obj_new = objective(eta_new, b, lambda);
            // damp the quadratic step if it overshot
            for (int half = 0; half < 40 && !(obj_new <= obj + 1e-15 * std::abs(obj)); ++half) {
                b0 = 0.5 * (b0 + b0_old);
                b = 0.5 * (b + b_old);
                eta_new = (Xs * b).array() + b0;
                obj_new = objective(eta_new, b, lambda);
            }
            const double change = std::abs(obj - obj_new);
            eta = std::move(eta_new);
            obj = obj_new;
            if (change <= options.tolerance * std::max(1.0, std::abs(obj))) {
                fit.converged = true;
                break;
            }
        }
        fit.slopes = VectorXd::Zero(p);
        fit.intercept = b0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (st.scale[j] > 0.0) {
                fit.slopes[j] = b[j] / st.scale[j];
                fit.intercept -= fit.slopes[j] * st.mean[j];
            }
        }
        fit.deviance = 2.0 * obj;
        path.push_back(std::move(fit));
    }
    return path;
}

LassoCvResult fit_lasso_cv(const MatrixXd& X, const VectorXd& y, const VectorXd& w, std::vector<double> lambdas,
                           int folds, std::uint64_t seed, const LassoOptions& options) {
    check_inputs(X, y, w);
    if (folds < 2) throw ConfigError("lasso CV needs at least two folds");
    if (lambdas.empty()) lambdas = lasso_default_grid(lasso_lambda_max(X, y, w));
    std::sort(lambdas.begin(), lambdas.end(), std::greater<>());

    // stratified, seeded fold assignment
    std::vector<std::size_t> pos, neg;
    for (Eigen::Index i = 0; i < y.size(); ++i) (y[i] == 1.0 ? pos : neg).push_back(static_cast<std::size_t>(i));
    if (pos.size() < static_cast<std::size_t>(folds) || neg.size() < static_cast<std::size_t>(folds)) {
        throw FoldConstructionError(fmt::format("{} folds requested but only {} positive and {} negative rows",
                                                folds, pos.size(), neg.size()));
    }
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(pos));
    rng.shuffle(std::span<std::size_t>(neg));
    std::vector<int> fold_of(static_cast<std::size_t>(y.size()));
    for (std::size_t i = 0; i < pos.size(); ++i) fold_of[pos[i]] = static_cast<int>(i % folds);
    for (std::size_t i = 0; i < neg.size(); ++i) fold_of[neg[i]] = static_cast<int>(i % folds);

    LassoCvResult result;
    result.lambdas = lambdas;
    result.mean_auc.assign(lambdas.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train_idx, valid_idx;
        for (Eigen::Index i = 0; i < y.size(); ++i) (fold_of[i] == f ? valid_idx : train_idx).push_back(i);
        const MatrixXd Xt = X(train_idx, Eigen::all);
        const VectorXd yt = y(train_idx);
        const VectorXd wt = w(train_idx);
        const MatrixXd Xv = X(valid_idx, Eigen::all);
        std::vector<int> labels;
        for (auto i : valid_idx) labels.push_back(y[i] == 1.0 ? 1 : 0);
        auto path = fit_lasso_path(Xt, yt, wt, lambdas, options);
        for (std::size_t k = 0; k < path.size(); ++k) {
            VectorXd score = (Xv * path[k].slopes).array() + path[k].intercept;
            result.mean_auc[k] += auc(std::span<const double>(score.data(), static_cast<std::size_t>(score.size())),
                                      labels) /
                                  folds;
        }
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < lambdas.size(); ++k) {
        if (result.mean_auc[k] > result.mean_auc[best]) best = k;
    }
    result.lambda = lambdas[best];
    auto refit = fit_lasso_path(X, y, w, std::span<const double>(lambdas.data(), best + 1), options);
    result.fit = std::move(refit.back());
    return result;
}

// ---------------------------------------------------------------------------

std::size_t oversample_target_count(std::size_t n_controls, double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError(fmt::format("oversampling fraction {} outside (0, 1)", p));
    return static_cast<std::size_t>(std::llround(p * static_cast<double>(n_controls) / (1.0 - p)));
}

std::vector<std::size_t> oversample(std::span<const std::size_t> target_rows,
                                    std::span<const std::size_t> control_rows, double p, std::uint64_t seed) {
    const std::size_t m = oversample_target_count(control_rows.size(), p);
    if (target_rows.empty()) throw DataError("oversample needs at least one target row");
    std::vector<std::size_t> out(control_rows.begin(), control_rows.end());
    Rng rng(seed);
    if (m >= target_rows.size()) {
        out.insert(out.end(), target_rows.begin(), target_rows.end());
        for (std::size_t k = target_rows.size(); k < m; ++k) {
            out.push_back(target_rows[static_cast<std::size_t>(rng.below(target_rows.size()))]);
        }
    } else {
        std::vector<std::size_t> pool(target_rows.begin(), target_rows.end());
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
    }
    return out;
}

VectorXd case_control_weights(std::span<const int> labels, std::size_t rows_per_participant) {
    if (rows_per_participant == 0) throw ConfigError("rows_per_participant must be positive");
    std::size_t cases = 0;
    for (int l : labels) cases += l == 1 ? 1 : 0;
    const std::size_t controls = labels.size() - cases;
    if (cases == 0 || controls == 0) throw DegenerateLabelError("case/control weights need both classes");
    const double control_participants =
        static_cast<double>(controls) / static_cast<double>(rows_per_participant);
    const double wc = 1.0 / static_cast<double>(cases);
    const double wn = 1.0 / (static_cast<double>(cases) * control_participants);
    VectorXd w(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) w[static_cast<Eigen::Index>(i)] = labels[i] == 1 ? wc : wn;
    return w;
}

// ---------------------------------------------------------------------------

std::string to_string(ModelKind k) {
    return k == ModelKind::logistic ? "logistic" : "lasso";
}

std::string to_string(VariantMode m) {
    switch (m) {
        case VariantMode::none: return "none";
        case VariantMode::oversample: return "oversample";
        case VariantMode::weighted: return "weighted";
    }
    return "none";
}

ModelKind parse_model_kind(std::string_view s) {
    if (s == "logistic") return ModelKind::logistic;
    if (s == "lasso") return ModelKind::lasso;
    throw ConfigError("unknown model '" + std::string(s) + "'");
}

VariantMode parse_variant_mode(std::string_view s) {
    if (s == "none") return VariantMode::none;
    if (s == "oversample") return VariantMode::oversample;
    if (s == "weighted") return VariantMode::weighted;
    throw ConfigError("unknown variant '" + std::string(s) + "'");
}

std::string VariantConfig::label() const {
    std::string s = to_string(model);
    if (mode == VariantMode::oversample) s += fmt::format("+oversample{}", oversample_p);
    if (mode == VariantMode::weighted) s += "+weighted";
    if (two_stage) s += "+two-stage";
    return s;
}

void VariantConfig::validate() const {
    if (mode == VariantMode::oversample && !(oversample_p > 0.0 && oversample_p < 1.0)) {
        throw ConfigError(fmt::format("oversampling fraction {} outside (0, 1)", oversample_p));
    }
    if (ridge < 0.0) throw ConfigError("ridge must be non-negative");
    if (model == ModelKind::lasso && lasso_folds < 2) throw ConfigError("lasso needs at least two folds");
}

MatrixXd ModelBank::predict(const MatrixXd& X) const {
    if (static_cast<std::uint32_t>(X.cols()) != feature_count) throw ShapeError("predict: feature count mismatch");
    std::vector<Eigen::Index> cols(retained.begin(), retained.end());
    const MatrixXd Xr = X(Eigen::all, cols);
    MatrixXd B(static_cast<Eigen::Index>(retained.size()), static_cast<Eigen::Index>(models.size()));
    Eigen::RowVectorXd b0(static_cast<Eigen::Index>(models.size()));
    for (std::size_t m = 0; m < models.size(); ++m) {
        B.col(static_cast<Eigen::Index>(m)) = models[m].coefficients;
        b0[static_cast<Eigen::Index>(m)] = models[m].intercept;
    }
    MatrixXd eta = Xr * B;
    eta.rowwise() += b0;
    return eta.unaryExpr([](double e) { return sigmoid(e); });
}

RowSet RowSet::subset(std::span<const std::uint32_t> keep) const {
    RowSet out;
    std::vector<std::int64_t> remap(participants.size(), -1);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.participants.push_back(participants.at(keep[k]));
        remap[keep[k]] = static_cast<std::int64_t>(k);
    }
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < row_participant.size(); ++i) {
        if (remap[row_participant[i]] >= 0) {
            rows.push_back(static_cast<Eigen::Index>(i));
            out.row_participant.push_back(static_cast<std::uint32_t>(remap[row_participant[i]]));
        }
    }
    out.X = X(rows, Eigen::all);
    return out;
}

ModelBank ovr_train(const TrainingSet& train, const VariantConfig& config, int workers) {
    config.validate();
    const std::size_t n_part = train.participants.size();
    if (n_part < 2) throw DataError("one-vs-rest training needs at least two participants");
    if (static_cast<std::size_t>(train.X.rows()) != train.row_participant.size()) {
        throw ShapeError("training rows and participant labels differ in length");
    }
    std::vector<std::vector<std::size_t>> rows_of(n_part);
    for (std::size_t i = 0; i < train.row_participant.size(); ++i) rows_of.at(train.row_participant[i]).push_back(i);
    const std::size_t per_participant = rows_of[0].size();
    for (std::size_t t = 0; t < n_part; ++t) {
        if (rows_of[t].size() != per_participant || per_participant == 0) {
            throw DataError(fmt::format("participant {} has {} training rows, expected {}", train.participants[t],
                                        rows_of[t].size(), per_participant));
        }
    }

    const ScreenReport screen = screen_predictors(train.X);
    ModelBank bank;
    bank.feature_count = static_cast<std::uint32_t>(train.X.cols());
    bank.retained = screen.retained;
    std::vector<Eigen::Index> cols(screen.retained.begin(), screen.retained.end());
    const MatrixXd design = train.X(Eigen::all, cols);
    const Eigen::Index n_rows = design.rows();

    struct Slot {
        std::optional<OvrModel> model;
        std::optional<TargetFailure> failure;
    };
    std::vector<Slot> slots(n_part);
    parallel_for(n_part, workers, [&](std::size_t t) {
        const std::string& target = train.participants[t];
        try {
            VectorXd y = VectorXd::Zero(n_rows);
            for (auto r : rows_of[t]) y[static_cast<Eigen::Index>(r)] = 1.0;
            VectorXd w = VectorXd::Ones(n_rows);
            const std::uint64_t seed = participant_seed(config.seed, target);
            if (config.mode == VariantMode::oversample) {
                std::vector<std::size_t> controls;
                controls.reserve(static_cast<std::size_t>(n_rows) - per_participant);
                for (Eigen::Index i = 0; i < n_rows; ++i) {
                    if (y[i] == 0.0) controls.push_back(static_cast<std::size_t>(i));
                }
                w.setZero();
                for (auto r : oversample(rows_of[t], controls, config.oversample_p, seed)) w[static_cast<Eigen::Index>(r)] += 1.0;
            } else if (config.mode == VariantMode::weighted) {
                std::vector<int> labels(static_cast<std::size_t>(n_rows));
                for (Eigen::Index i = 0; i < n_rows; ++i) labels[static_cast<std::size_t>(i)] = y[i] == 1.0 ? 1 : 0;
                w = case_control_weights(labels, per_participant);
            }

            OvrModel model;
            model.target = target;
            model.meta.mode = config.mode;
            model.meta.oversample_p = config.mode == VariantMode::oversample ? config.oversample_p : 0.0;
            model.meta.model = config.model;
            if (config.model == ModelKind::logistic) {
                LogisticOptions opt;
                opt.ridge = config.ridge;
                LogisticFit fit = fit_logistic(design, y, w, opt);
                model.intercept = fit.intercept;
                model.coefficients = std::move(fit.slopes);
                model.meta.iterations = fit.iterations;
                model.meta.converged = fit.converged;
                model.meta.ridge = config.ridge;
            } else {
                LassoCvResult cv = fit_lasso_cv(design, y, w, config.lasso_lambdas, config.lasso_folds, seed);
                model.intercept = cv.fit.intercept;
                model.coefficients = std::move(cv.fit.slopes);
                model.meta.iterations = cv.fit.iterations;
                model.meta.converged = cv.fit.converged;
                model.meta.lambda = cv.lambda;
            }
            if (!std::isfinite(model.intercept) || !model.coefficients.allFinite()) {
                throw NumericError("non-finite coefficients");
            }
            slots[t].model = std::move(model);
        } catch (const std::exception& e) {
            slots[t].failure = TargetFailure{target, e.what()};
        }
    });
    for (auto& s : slots) {
        if (s.model) bank.models.push_back(std::move(*s.model));
        if (s.failure) bank.failures.push_back(std::move(*s.failure));
    }
    return bank;
}

Rankings two_stage_rank(const ScoreMatrix& stage1, const TrainingSet& train, const RowSet& test,
                        const VariantConfig& config, int workers) {
    const std::size_t n = stage1.size();
    if (static_cast<std::size_t>(stage1.scores.rows()) != n || static_cast<std::size_t>(stage1.scores.cols()) != n) {
        throw ShapeError("two-stage ranking needs a square stage-1 score matrix");
    }
    Rankings rankings = rankings_from_scores(stage1);
    const std::size_t k = percent_cutoff(1.0, n);
    if (k <= 1) return rankings;

    std::map<std::string, std::uint32_t> train_index, test_index;
    for (std::size_t i = 0; i < train.participants.size(); ++i) train_index[train.participants[i]] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 0; i < test.participants.size(); ++i) test_index[test.participants[i]] = static_cast<std::uint32_t>(i);
    auto lookup = [](const std::map<std::string, std::uint32_t>& m, const std::string& id, const char* what) {
        auto it = m.find(id);
        if (it == m.end()) throw CompletenessError(fmt::format("{} has no {} rows", id, what));
        return it->second;
    };

    std::vector<std::vector<std::uint32_t>> shortlist(n);
    std::map<std::vector<std::uint32_t>, std::size_t> unique;
    for (std::size_t s = 0; s < n; ++s) {
        shortlist[s].assign(rankings[s].begin(), rankings[s].begin() + static_cast<std::ptrdiff_t>(k));
        std::vector<std::uint32_t> key = shortlist[s];
        std::sort(key.begin(), key.end());
        unique.try_emplace(std::move(key), unique.size());
    }
    std::vector<const std::vector<std::uint32_t>*> keys(unique.size());
    for (const auto& [key, slot] : unique) keys[slot] = &key;

    VariantConfig stage2 = config;
    stage2.two_stage = false;
    std::vector<ModelBank> banks(keys.size());
    parallel_for(keys.size(), workers, [&](std::size_t b) {
        std::vector<std::uint32_t> members;
        for (auto c : *keys[b]) members.push_back(lookup(train_index, stage1.ids[c], "training"));
        banks[b] = ovr_train(train.subset(members), stage2, 1);
        if (!banks[b].failures.empty()) {
            throw NumericError(fmt::format("stage-2 fit failed for {}: {}", banks[b].failures.front().target,
                                           banks[b].failures.front().message));
        }
    });

    for (std::size_t s = 0; s < n; ++s) {
        std::vector<std::uint32_t> key = shortlist[s];
        std::sort(key.begin(), key.end());
        const ModelBank& bank = banks[unique.at(key)];
        const std::uint32_t subject = lookup(test_index, stage1.ids[s], "test");
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < test.row_participant.size(); ++i) {
            if (test.row_participant[i] == subject) rows.push_back(static_cast<Eigen::Index>(i));
        }
        if (rows.empty()) throw CompletenessError(stage1.ids[s] + " has no test rows");
        const VectorXd mean = bank.predict(test.X(rows, Eigen::all)).colwise().mean();
        // bank models follow the sorted shortlist (`key`)
        std::vector<std::size_t> order(key.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (mean[static_cast<Eigen::Index>(a)] != mean[static_cast<Eigen::Index>(b)]) {
                return mean[static_cast<Eigen::Index>(a)] > mean[static_cast<Eigen::Index>(b)];
            }
            return key[a] < key[b];
        });
        for (std::size_t i = 0; i < k; ++i) rankings[s][i] = key[order[i]];
    }
    return rankings;
}

// ---------------------------------------------------------------------------

void write_model_bank(std::ostream& out, const ModelBank& bank) {
    binio::put_magic(out, "GPMB", 1);
    binio::put<std::uint32_t>(out, bank.feature_count);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.retained.size()));
    for (auto c : bank.retained) binio::put<std::uint32_t>(out, c);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.models.size()));
    for (const auto& m : bank.models) {
        binio::put_string16(out, m.target);
        binio::put<double>(out, m.intercept);
        std::vector<std::pair<std::uint32_t, double>> nz;
        for (Eigen::Index j = 0; j < m.coefficients.size(); ++j) {
            if (m.coefficients[j] != 0.0) nz.emplace_back(bank.retained[static_cast<std::size_t>(j)], m.coefficients[j]);
        }
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(nz.size()));
        for (const auto& [c, v] : nz) {
            binio::put<std::uint32_t>(out, c);
            binio::put<double>(out, v);
        }
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.meta.iterations));
        binio::put<std::uint8_t>(out, m.meta.converged ? 1 : 0);
        binio::put<double>(out, m.meta.ridge);
        binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.meta.mode));
        binio::put<double>(out, m.meta.oversample_p);
        binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.meta.model));
        binio::put<double>(out, m.meta.lambda);
    }
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.failures.size()));
    for (const auto& f : bank.failures) {
        binio::put_string16(out, f.target);
        binio::put_string16(out, f.message.substr(0, UINT16_MAX));
    }
}

ModelBank read_model_bank(std::istream& in) {
    binio::expect_magic(in, "GPMB", 1);
    ModelBank bank;
    bank.feature_count = binio::get<std::uint32_t>(in);
    auto n_retained = binio::get<std::uint32_t>(in);
    std::map<std::uint32_t, Eigen::Index> position;
    for (std::uint32_t i = 0; i < n_retained; ++i) {
        auto c = binio::get<std::uint32_t>(in);
        if (c >= bank.feature_count) throw DataError("model bank retains a column beyond the feature count");
        position[c] = static_cast<Eigen::Index>(i);
        bank.retained.push_back(c);
    }
    auto n_models = binio::get<std::uint32_t>(in);
    for (std::uint32_t m = 0; m < n_models; ++m) {
        OvrModel model;
        model.target = binio::get_string16(in);
        model.intercept = binio::get<double>(in);
        model.coefficients = VectorXd::Zero(n_retained);
        auto nnz = binio::get<std::uint32_t>(in);
        for (std::uint32_t k = 0; k < nnz; ++k) {
            auto c = binio::get<std::uint32_t>(in);
            auto v = binio::get<double>(in);
            auto it = position.find(c);
            if (it == position.end()) throw DataError("model coefficient on a screened-out column");
            model.coefficients[it->second] = v;
        }
        model.meta.iterations = static_cast<int>(binio::get<std::uint32_t>(in));
        model.meta.converged = binio::get<std::uint8_t>(in) != 0;
        model.meta.ridge = binio::get<double>(in);
        model.meta.mode = static_cast<VariantMode>(binio::get<std::uint8_t>(in));
        model.meta.oversample_p = binio::get<double>(in);
        model.meta.model = static_cast<ModelKind>(binio::get<std::uint8_t>(in));
        model.meta.lambda = binio::get<double>(in);
        bank.models.push_back(std::move(model));
    }
    auto n_fail = binio::get<std::uint32_t>(in);
    for (std::uint32_t f = 0; f < n_fail; ++f) {
        TargetFailure failure;
        failure.target = binio::get_string16(in);
        failure.message = binio::get_string16(in);
        bank.failures.push_back(std::move(failure));
    }
    return bank;
}

std::string model_bank_json(const ModelBank& bank) {
    nlohmann::ordered_json j;
    j["format"] = "gaitprint-model-bank";
    j["version"] = 1;
    j["feature_count"] = bank.feature_count;
    j["retained"] = bank.retained;
    auto& models = j["models"] = nlohmann::ordered_json::array();
    for (const auto& m : bank.models) {
        nlohmann::ordered_json jm;
        jm["target"] = m.target;
        jm["intercept"] = m.intercept;
        auto& coef = jm["coefficients"] = nlohmann::ordered_json::array();
        for (Eigen::Index k = 0; k < m.coefficients.size(); ++k) {
            if (m.coefficients[k] != 0.0) coef.push_back({bank.retained[static_cast<std::size_t>(k)], m.coefficients[k]});
        }
        jm["meta"] = {{"iterations", m.meta.iterations},   {"converged", m.meta.converged},
                      {"ridge", m.meta.ridge},             {"variant", to_string(m.meta.mode)},
                      {"oversample_p", m.meta.oversample_p}, {"model", to_string(m.meta.model)},
                      {"lambda", m.meta.lambda}};
        models.push_back(std::move(jm));
    }
    auto& failures = j["failures"] = nlohmann::ordered_json::array();
    for (const auto& f : bank.failures) failures.push_back({{"target", f.target}, {"message", f.message}});
    return j.dump(2);
}

}  // namespace gaitprint
