#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gaitprint/evaluation.hpp"

namespace gaitprint {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Predictor screening

struct ScreenReport {
    std::vector<std::uint32_t> retained;                         // ascending column indices
    std::vector<std::pair<std::uint32_t, std::string>> dropped;  // column, reason
};

/// Near-zero-variance screen. A column is dropped when its unique-value
/// fraction is below 0.10 and the ratio of its most common to second most
/// common value exceeds 95. Single-valued columns are always dropped.
ScreenReport screen_predictors(const MatrixXd& X);

// ---------------------------------------------------------------------------
// Penalized logistic regression

struct LogisticOptions {
    double ridge = 1e-6;  // on slopes only, scaled by the mean observation weight
    int max_iterations = 100;
    double tolerance = 1e-8;  // relative change in penalized deviance
};

struct LogisticFit {
    double intercept = 0.0;
    VectorXd slopes;
    int iterations = 0;
    bool converged = false;
    double deviance = 0.0;  // penalized
};

/// Maximizes sum_i w_i * loglik_i - ridge * mean(w) * |slopes|^2 by Newton
/// (IRLS) iterations with step halving. `X` excludes the intercept column.
/// Throws DegenerateLabelError when y has one class and NumericError on
/// non-finite input.
LogisticFit fit_logistic(const MatrixXd& X, const VectorXd& y, const VectorXd& w,
                         const LogisticOptions& options = {});

/// Gradient of the penalized log-likelihood above, intercept first.
VectorXd penalized_score(const MatrixXd& X, const VectorXd& y, const VectorXd& w, double ridge,
                         double intercept, const VectorXd& slopes);

/// Area under the ROC curve via the rank-sum statistic with midranks for ties.
double auc(std::span<const double> scores, std::span<const int> labels);

struct LassoOptions {
    int max_outer = 100;
    int max_inner = 10'000;
    double tolerance = 1e-10;
};

/// L1-penalized logistic regression by coordinate descent on standardized
/// columns, over `lambdas` in the given order with warm starts. Objective:
/// -(1/sum w) * sum_i w_i loglik_i + lambda * sum_j |standardized slope_j|.
/// Returned coefficients are on the original column scale.
std::vector<LogisticFit> fit_lasso_path(const MatrixXd& X, const VectorXd& y, const VectorXd& w,
                                        std::span<const double> lambdas, const LassoOptions& options = {});

/// Smallest lambda that zeroes every slope.
double lasso_lambda_max(const MatrixXd& X, const VectorXd& y, const VectorXd& w);

/// `count` values log-spaced from lambda_max down to lambda_max * ratio.
std::vector<double> lasso_default_grid(double lambda_max, int count = 20, double ratio = 1e-4);

struct LassoCvResult {
    LogisticFit fit;
    double lambda = 0.0;
    std::vector<double> lambdas;
    std::vector<double> mean_auc;
};

/// Stratified k-fold CV over the grid (default grid when empty), picking the
/// lambda with the best mean validation AUC (largest lambda on ties), then
/// refitting on all rows. Throws FoldConstructionError when a fold would
/// lack either class.
LassoCvResult fit_lasso_cv(const MatrixXd& X, const VectorXd& y, const VectorXd& w,
                           std::vector<double> lambdas, int folds, std::uint64_t seed,
                           const LassoOptions& options = {});

// ---------------------------------------------------------------------------
// Class-imbalance variants

/// Row indices of the augmented set: all control rows unchanged, then the
/// target rows resized to m = round(p * n_controls / (1 - p)). The original
/// target rows are kept and extra rows drawn with replacement when m exceeds
/// their count; a seeded subset without replacement is taken when m is
/// smaller.
std::vector<std::size_t> oversample(std::span<const std::size_t> target_rows,
                                    std::span<const std::size_t> control_rows, double p, std::uint64_t seed);

std::size_t oversample_target_count(std::size_t n_controls, double p);

/// Case rows weigh 1/n_case_rows; control rows weigh
/// 1/(n_case_rows * n_control_participants), where the number of control
/// participants is n_control_rows / rows_per_participant.
VectorXd case_control_weights(std::span<const int> labels, std::size_t rows_per_participant);

// ---------------------------------------------------------------------------
// One-vs-rest banks

enum class ModelKind : std::uint8_t { logistic = 0, lasso = 1 };
enum class VariantMode : std::uint8_t { none = 0, oversample = 1, weighted = 2 };

std::string to_string(ModelKind k);
std::string to_string(VariantMode m);
ModelKind parse_model_kind(std::string_view s);
VariantMode parse_variant_mode(std::string_view s);

struct VariantConfig {
    ModelKind model = ModelKind::logistic;
    VariantMode mode = VariantMode::none;
    double oversample_p = 0.0;
    bool two_stage = false;
    double ridge = 1e-6;
    std::uint64_t seed = 0;
    int lasso_folds = 5;
    std::vector<double> lasso_lambdas;  // empty: default grid

    /// Short label such as `logistic`, `logistic+oversample0.25`, `lasso+weighted+two-stage`.
    std::string label() const;
    void validate() const;
};

struct FitMetadata {
    int iterations = 0;
    bool converged = false;
    double ridge = 0.0;
    VariantMode mode = VariantMode::none;
    double oversample_p = 0.0;
    ModelKind model = ModelKind::logistic;
    double lambda = 0.0;
};

struct OvrModel {
    std::string target;
    double intercept = 0.0;
    VectorXd coefficients;  // aligned with ModelBank::retained
    FitMetadata meta;
};

struct TargetFailure {
    std::string target;
    std::string message;
};

struct ModelBank {
    std::uint32_t feature_count = 0;
    std::vector<std::uint32_t> retained;
    std::vector<OvrModel> models;  // in participant order
    std::vector<TargetFailure> failures;

    /// Probability of each model for each row of X (all feature columns).
    MatrixXd predict(const MatrixXd& X) const;
};

/// Rows of a training or test split. Participants are sorted by id.
struct RowSet {
    std::vector<std::string> participants;
    std::vector<std::uint32_t> row_participant;
    MatrixXd X;

    /// Rows whose participant index is in `keep` (indices into participants),
    /// re-indexed to the order of `keep`.
    RowSet subset(std::span<const std::uint32_t> keep) const;
};
using TrainingSet = RowSet;

/// Screens once on the full training matrix, then fits one model per
/// participant (in parallel, assembled in participant order). Per-target
/// failures are collected in the bank rather than thrown.
ModelBank ovr_train(const TrainingSet& train, const VariantConfig& config, int workers = 1);

/// Stage 1 ranks every candidate; the top max(1, floor(0.01 n)) candidates
/// per subject are refit one-vs-rest on their own training rows, and the
/// subject is re-ranked on that shortlist. Remaining candidates follow in
/// stage-1 order. Shortlists of one candidate keep the stage-1 order.
Rankings two_stage_rank(const ScoreMatrix& stage1, const TrainingSet& train, const RowSet& test,
                        const VariantConfig& config, int workers = 1);

// Model bank file (little-endian):
//   magic "GPMB", u8 version (=1),
//   u32 feature_count, u32 n_retained, u32 retained[n_retained],
//   u32 n_models, then per model:
//     u16 target length, target bytes, f64 intercept,
//     u32 n_nonzero, (u32 column, f64 coefficient)[n_nonzero]  (original column indices),
//     u32 iterations, u8 converged, f64 ridge, u8 mode, f64 oversample_p, u8 model, f64 lambda,
//   u32 n_failures, then per failure: u16 length, target bytes, u16 length, message bytes.
void write_model_bank(std::ostream& out, const ModelBank& bank);
ModelBank read_model_bank(std::istream& in);
std::string model_bank_json(const ModelBank& bank);

}  // namespace gaitprint
