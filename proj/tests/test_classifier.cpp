#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gaitprint/classifier.hpp"
#include "gaitprint/errors.hpp"
#include "gaitprint/rng.hpp"
#include "support.hpp"

using namespace gaitprint;

namespace {

// AUC by counting concordant pairs, ties worth one half.
double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double hits = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            pairs += 1;
            hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return hits / pairs;
}

// `n` participants, `rows` rows each, `k` columns; participant p's rows are
// centred on a participant-specific mean so the classes separate well.
RowSet clustered_rows(std::size_t n, std::size_t rows, int k, std::uint64_t seed, double spread = 0.3,
                      std::uint64_t noise_seed = 0) {
    Rng rng(seed), noise(noise_seed);
    RowSet set;
    set.X.resize(static_cast<Eigen::Index>(n * rows), k);
    for (std::size_t p = 0; p < n; ++p) {
        set.participants.push_back(fmt::format("Q{:03d}", p));
        std::vector<double> centre(static_cast<std::size_t>(k));
        for (auto& c : centre) c = rng.uniform(-2, 2);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto i = static_cast<Eigen::Index>(p * rows + r);
            for (int j = 0; j < k; ++j) set.X(i, j) = centre[static_cast<std::size_t>(j)] + spread * noise.normal();
            set.row_participant.push_back(static_cast<std::uint32_t>(p));
        }
    }
    return set;
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_SUITE("classifier") {

TEST_CASE("near-zero-variance screening") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(1000, 4);
    X(17, 1) = 5.0;                                              // 999 zeros and one 5
    for (int i = 0; i < 1000; ++i) X(i, 2) = i;                  // all distinct
    for (int i = 0; i < 1000; ++i) X(i, 3) = i < 900 ? 0 : i % 20;  // ratio 900/5, but 20 values
    auto report = screen_predictors(X);
    // Column 3: unique fraction 0.02 < 0.10 and ratio 901/5 > 95, so it goes too.
    CHECK(report.retained == std::vector<std::uint32_t>{2});
    REQUIRE(report.dropped.size() == 3);
    CHECK(report.dropped[0].first == 0);
    CHECK(report.dropped[0].second == "single unique value");
    CHECK(report.dropped[1].first == 1);

    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(100, 1);
    for (int i = 0; i < 50; ++i) Y(i, 0) = 1.0;  // two values, ratio 1
    CHECK(screen_predictors(Y).retained.size() == 1);
}

TEST_CASE("screening ignores row order") {
    Rng rng(5);
    Eigen::MatrixXd X(300, 6);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = rng.uniform() < 0.02 * static_cast<double>(j) ? 1 + static_cast<double>(rng.below(3)) : 0;
    }
    auto base = screen_predictors(X);
    std::vector<Eigen::Index> perm(300);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<Eigen::Index>(perm));
    Eigen::MatrixXd Xp = X(perm, Eigen::all);
    CHECK(screen_predictors(Xp).retained == base.retained);
}

TEST_CASE("intercept-only fit is logit of the mean") {
    Eigen::MatrixXd X(10, 0);
    Eigen::VectorXd y(10);
    y << 1, 0, 1, 0, 1, 0, 1, 0, 1, 0;
    auto fit = fit_logistic(X, y, Eigen::VectorXd::Ones(10));
    CHECK(fit.converged);
    CHECK(std::abs(fit.intercept) < 1e-12);

    y << 1, 1, 1, 0, 0, 0, 0, 0, 0, 0;
    auto skewed = fit_logistic(X, y, Eigen::VectorXd::Ones(10));
    CHECK(skewed.intercept == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-12));
}

TEST_CASE("symmetric two-point design") {
    Eigen::MatrixXd X(8, 1);
    Eigen::VectorXd y(8);
    for (int i = 0; i < 8; ++i) {
        X(i, 0) = i % 2 == 0 ? -1.0 : 1.0;
        y[i] = i % 2 == 0 ? 0.0 : 1.0;
    }
    auto fit = fit_logistic(X, y, Eigen::VectorXd::Ones(8));
    CHECK(fit.converged);
    CHECK(std::abs(fit.intercept) < 1e-8);
    CHECK(fit.slopes[0] > 0.0);
    CHECK(std::isfinite(fit.slopes[0]));
}

TEST_CASE("logistic fits agree with a BFGS oracle and zero the score") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto inst = support::logistic_instance(seed);
        auto fit = fit_logistic(inst.X, inst.y, inst.w);
        REQUIRE(fit.converged);
        auto g = penalized_score(inst.X, inst.y, inst.w, 1e-6, fit.intercept, fit.slopes);
        CHECK(g.cwiseAbs().maxCoeff() < 1e-6);
        auto theta = support::bfgs_logistic(inst.X, inst.y, inst.w, 1e-6);
        CHECK(std::abs(theta[0] - fit.intercept) < 1e-6);
        CHECK((theta.tail(5) - fit.slopes).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("logistic input checks") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 1);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
    CHECK_THROWS_AS(fit_logistic(X, ones, ones), DegenerateLabelError);
    Eigen::VectorXd y(4);
    y << 0, 1, 0, 1;
    X(2, 0) = std::nan("");
    CHECK_THROWS_AS(fit_logistic(X, y, ones), NumericError);
    CHECK_THROWS_AS(fit_logistic(Eigen::MatrixXd::Ones(3, 1), y, ones), ShapeError);
}

TEST_CASE("weights rescaled by a constant leave probabilities unchanged") {
    auto inst = support::logistic_instance(31, 80, 4);
    Rng rng(2);
    Eigen::VectorXd w(80);
    for (auto& v : w) v = rng.uniform(0.2, 3.0);
    auto a = fit_logistic(inst.X, inst.y, w);
    for (double c : {1e-4, 0.37, 250.0}) {
        auto b = fit_logistic(inst.X, inst.y, c * w);
        Eigen::VectorXd pa = ((inst.X * a.slopes).array() + a.intercept).matrix();
        Eigen::VectorXd pb = ((inst.X * b.slopes).array() + b.intercept).matrix();
        double worst = 0;
        for (Eigen::Index i = 0; i < 80; ++i) {
            worst = std::max(worst, std::abs(1 / (1 + std::exp(-pa[i])) - 1 / (1 + std::exp(-pb[i]))));
        }
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("auc") {
    std::vector<double> s{0.9, 0.8, 0.3, 0.2};
    std::vector<int> y{1, 1, 0, 0};
    CHECK(auc(s, y) == 1.0);
    CHECK(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
    CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1, 1, 1}), DegenerateLabelError);

    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> sc(30);
        std::vector<int> lab(30);
        for (std::size_t i = 0; i < 30; ++i) {
            sc[i] = static_cast<double>(rng.below(6));
            lab[i] = i < 10 ? 1 : static_cast<int>(rng.below(2));
        }
        lab[29] = 0;
        CHECK(auc(sc, lab) == doctest::Approx(pair_auc(sc, lab)).epsilon(1e-12));
    }
}

TEST_CASE("lasso endpoints") {
    auto inst = support::logistic_instance(12, 120, 5);
    const double lmax = lasso_lambda_max(inst.X, inst.y, inst.w);
    auto big = fit_lasso_path(inst.X, inst.y, inst.w, std::vector<double>{lmax * 1.01, 1e6});
    for (const auto& f : big) {
        CHECK(f.slopes.cwiseAbs().maxCoeff() == 0.0);
        double ybar = inst.y.mean();
        CHECK(std::abs(f.intercept - std::log(ybar / (1 - ybar))) < 1e-9);
    }
    auto below = fit_lasso_path(inst.X, inst.y, inst.w, std::vector<double>{lmax * 0.9});
    CHECK(below[0].slopes.cwiseAbs().maxCoeff() > 0.0);

    auto zero = fit_lasso_path(inst.X, inst.y, inst.w, std::vector<double>{0.0});
    auto plain = fit_logistic(inst.X, inst.y, inst.w);
    CHECK(std::abs(zero[0].intercept - plain.intercept) < 1e-4);
    CHECK((zero[0].slopes - plain.slopes).cwiseAbs().maxCoeff() < 1e-4);

    auto grid = lasso_default_grid(2.0);
    REQUIRE(grid.size() == 20);
    CHECK(grid.front() == doctest::Approx(2.0));
    CHECK(grid.back() == doctest::Approx(2e-4));
    CHECK(std::is_sorted(grid.rbegin(), grid.rend()));
}

TEST_CASE("lasso cross-validation") {
    auto inst = support::logistic_instance(13, 150, 5);
    auto cv = fit_lasso_cv(inst.X, inst.y, inst.w, {}, 5, 99);
    REQUIRE(cv.lambdas.size() == 20);
    CHECK(cv.mean_auc.size() == 20);
    auto best = std::max_element(cv.mean_auc.begin(), cv.mean_auc.end());
    CHECK(cv.lambda == cv.lambdas[static_cast<std::size_t>(best - cv.mean_auc.begin())]);
    auto again = fit_lasso_cv(inst.X, inst.y, inst.w, {}, 5, 99);
    CHECK(again.lambda == cv.lambda);
    CHECK(again.fit.slopes == cv.fit.slopes);

    Eigen::VectorXd few = Eigen::VectorXd::Zero(150);
    few.head(3).setOnes();
    CHECK_THROWS_AS(fit_lasso_cv(inst.X, few, inst.w, {}, 5, 1), FoldConstructionError);
}

TEST_CASE("oversampling composition") {
    CHECK(oversample_target_count(13'365, 0.1) == 1485);
    CHECK_THROWS_AS(oversample_target_count(100, 0.0), ConfigError);
    CHECK_THROWS_AS(oversample_target_count(100, 1.0), ConfigError);

    std::vector<std::size_t> target(135), controls(13'365);
    std::iota(target.begin(), target.end(), 0);
    std::iota(controls.begin(), controls.end(), 135);
    for (double p : {0.1, 0.25, 0.5, 0.75, 0.9}) {
        auto rows = oversample(target, controls, p, 7);
        CHECK(std::equal(controls.begin(), controls.end(), rows.begin()));
        const double m = static_cast<double>(rows.size() - controls.size());
        CHECK(std::abs(m - p * static_cast<double>(rows.size())) <= 1.0);
        for (std::size_t i = controls.size(); i < rows.size(); ++i) CHECK(rows[i] < 135);
    }

    // p = 1/n reproduces the input multiset exactly.
    std::vector<std::size_t> small_target{0, 1, 2}, small_controls{3, 4, 5, 6, 7, 8};
    auto fixed = oversample(small_target, small_controls, 1.0 / 3.0, 1);
    CHECK(fixed == std::vector<std::size_t>{3, 4, 5, 6, 7, 8, 0, 1, 2});

    // Small p takes a subset without replacement.
    auto sub = oversample(target, std::vector<std::size_t>(controls.begin(), controls.begin() + 100), 0.1, 3);
    std::vector<std::size_t> picked(sub.begin() + 100, sub.end());
    CHECK(picked.size() == 11);
    std::sort(picked.begin(), picked.end());
    CHECK(std::adjacent_find(picked.begin(), picked.end()) == picked.end());
}

TEST_CASE("case-control weights") {
    std::vector<int> labels(100 * 135, 0);
    std::fill(labels.begin(), labels.begin() + 135, 1);
    auto w = case_control_weights(labels, 135);
    CHECK(w[0] == doctest::Approx(1.0 / 135).epsilon(1e-15));
    CHECK(w[200] == doctest::Approx(1.0 / (135.0 * 99)).epsilon(1e-15));
    CHECK(w.head(135).sum() == doctest::Approx(1.0));
    CHECK(w.tail(99 * 135).sum() == doctest::Approx(1.0));

    std::vector<int> two(20, 0);
    std::fill(two.begin(), two.begin() + 10, 1);
    auto w2 = case_control_weights(two, 10);
    CHECK(w2.head(10).sum() == doctest::Approx(1.0));
    CHECK(w2.tail(10).sum() == doctest::Approx(1.0));
    CHECK_THROWS_AS(case_control_weights(std::vector<int>(10, 1), 5), DegenerateLabelError);
}

TEST_CASE("one-vs-rest banks score their own participant highest") {
    RowSet train = clustered_rows(3, 30, 4, 8);
    RowSet test = clustered_rows(3, 10, 4, 8, 0.3, 1234);  // same centres, fresh noise
    ModelBank bank = ovr_train(train, VariantConfig{});
    CHECK(bank.models.size() == 3);
    CHECK(bank.failures.empty());
    auto probs = bank.predict(test.X);
    auto scores = subject_scores(probs, test.row_participant, test.participants);
    for (Eigen::Index s = 0; s < 3; ++s) {
        Eigen::Index best;
        scores.scores.row(s).maxCoeff(&best);
        CHECK(best == s);
    }
    for (std::size_t m = 0; m < 3; ++m) CHECK(bank.models[m].target == train.participants[m]);
}

TEST_CASE("banks are independent of worker count, and p = 1/n oversampling is a no-op") {
    RowSet train = clustered_rows(5, 20, 3, 19, 0.8);
    ModelBank one = ovr_train(train, VariantConfig{}, 1);
    ModelBank four = ovr_train(train, VariantConfig{}, 4);
    REQUIRE(one.models.size() == four.models.size());
    for (std::size_t m = 0; m < one.models.size(); ++m) {
        CHECK(one.models[m].intercept == four.models[m].intercept);
        CHECK(one.models[m].coefficients == four.models[m].coefficients);
    }
    VariantConfig over;
    over.mode = VariantMode::oversample;
    over.oversample_p = 1.0 / 5.0;
    ModelBank same = ovr_train(train, over, 2);
    for (std::size_t m = 0; m < one.models.size(); ++m) {
        CHECK(same.models[m].intercept == doctest::Approx(one.models[m].intercept).epsilon(1e-12));
        CHECK(max_abs_diff(same.models[m].coefficients, one.models[m].coefficients) < 1e-9);
        CHECK(same.models[m].meta.mode == VariantMode::oversample);
    }
    VariantConfig weighted;
    weighted.mode = VariantMode::weighted;
    CHECK(ovr_train(train, weighted).models.size() == 5);
    VariantConfig lasso;
    lasso.model = ModelKind::lasso;
    ModelBank lb = ovr_train(train, lasso);
    CHECK(lb.models.size() == 5);
    CHECK(lb.models[0].meta.lambda > 0.0);

    RowSet uneven = train;
    uneven.row_participant.back() = 0;
    CHECK_THROWS_AS(ovr_train(uneven, VariantConfig{}), DataError);
}

TEST_CASE("two-stage re-ranking at n = 200") {
    const std::size_t n = 200;
    RowSet train = clustered_rows(n, 4, 3, 41, 1.5);
    RowSet test = clustered_rows(n, 2, 3, 41, 1.5, 77);
    VariantConfig cfg;
    ModelBank bank = ovr_train(train, cfg);
    ScoreMatrix stage1 = subject_scores(bank.predict(test.X), test.row_participant, test.participants);
    Rankings base = rankings_from_scores(stage1);
    Rankings two = two_stage_rank(stage1, train, test, cfg);
    REQUIRE(two.size() == n);
    for (std::size_t s = 0; s < n; ++s) {
        // Shortlist of two; beyond it the stage-1 order stands.
        CHECK(std::equal(two[s].begin() + 2, two[s].end(), base[s].begin() + 2));
        std::vector<std::uint32_t> a(two[s].begin(), two[s].begin() + 2), b(base[s].begin(), base[s].begin() + 2);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
    // Hand refit for subject 0: fit the two shortlisted participants against each other.
    std::vector<std::uint32_t> pair(base[0].begin(), base[0].begin() + 2);
    std::sort(pair.begin(), pair.end());
    RowSet sub = train.subset(pair);
    Eigen::VectorXd y(sub.X.rows());
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = sub.row_participant[static_cast<std::size_t>(i)] == 0 ? 1.0 : 0.0;
    auto screen = screen_predictors(sub.X);
    std::vector<Eigen::Index> cols(screen.retained.begin(), screen.retained.end());
    Eigen::MatrixXd design = sub.X(Eigen::all, cols);
    auto f0 = fit_logistic(design, y, Eigen::VectorXd::Ones(y.size()));
    auto f1 = fit_logistic(design, (1.0 - y.array()).matrix(), Eigen::VectorXd::Ones(y.size()));
    std::vector<Eigen::Index> rows0;
    for (std::size_t i = 0; i < test.row_participant.size(); ++i) {
        if (test.row_participant[i] == 0) rows0.push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd t0 = test.X(rows0, cols);
    auto mean_prob = [&](const LogisticFit& f) {
        Eigen::ArrayXd eta = (t0 * f.slopes).array() + f.intercept;
        return (1.0 / (1.0 + (-eta).exp())).mean();
    };
    const double p0 = mean_prob(f0), p1 = mean_prob(f1);
    const std::uint32_t expected_first = (p0 > p1 || (p0 == p1)) ? pair[0] : pair[1];
    CHECK(two[0][0] == expected_first);

    // With n = 100 the shortlist has one entry and nothing changes.
    RowSet t100 = clustered_rows(100, 4, 3, 5, 1.5);
    RowSet e100 = clustered_rows(100, 2, 3, 5, 1.5, 78);
    ModelBank b100 = ovr_train(t100, cfg);
    ScoreMatrix s100 = subject_scores(b100.predict(e100.X), e100.row_participant, e100.participants);
    CHECK(two_stage_rank(s100, t100, e100, cfg) == rankings_from_scores(s100));
}

TEST_CASE("model bank files") {
    RowSet train = clustered_rows(4, 15, 5, 61, 0.7);
    train.X.col(2).setZero();  // screened away
    VariantConfig cfg;
    cfg.mode = VariantMode::weighted;
    ModelBank bank = ovr_train(train, cfg);
    CHECK(bank.retained == std::vector<std::uint32_t>{0, 1, 3, 4});
    std::stringstream bin;
    write_model_bank(bin, bank);
    CHECK(bin.str().substr(0, 4) == "GPMB");
    ModelBank back = read_model_bank(bin);
    CHECK(back.feature_count == 5);
    CHECK(back.retained == bank.retained);
    REQUIRE(back.models.size() == 4);
    for (std::size_t m = 0; m < 4; ++m) {
        CHECK(back.models[m].target == bank.models[m].target);
        CHECK(back.models[m].intercept == bank.models[m].intercept);
        CHECK(back.models[m].coefficients == bank.models[m].coefficients);
        CHECK(back.models[m].meta.mode == VariantMode::weighted);
    }
    CHECK(max_abs_diff(back.predict(train.X), bank.predict(train.X)) == 0.0);

    auto j = nlohmann::json::parse(model_bank_json(bank));
    CHECK(j["models"].size() == 4);
    CHECK(j["models"][0]["meta"]["variant"] == "weighted");
    CHECK(j["retained"].size() == 4);
}

TEST_CASE("variant labels and validation") {
    VariantConfig v;
    CHECK(v.label() == "logistic");
    v.mode = VariantMode::oversample;
    v.oversample_p = 0.25;
    CHECK(v.label() == "logistic+oversample0.25");
    v.two_stage = true;
    CHECK(v.label() == "logistic+oversample0.25+two-stage");
    v.oversample_p = 1.5;
    CHECK_THROWS_AS(v.validate(), ConfigError);
    CHECK_THROWS_AS(parse_variant_mode("sometimes"), ConfigError);
    CHECK(parse_model_kind("lasso") == ModelKind::lasso);
}

}  // TEST_SUITE
