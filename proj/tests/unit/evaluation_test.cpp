#include <gtest/gtest.h>

#include "mff/evaluation.hpp"
#include "support.hpp"

namespace mff::eval {
namespace {

using testing::Gen;

Matrix random_matrix(Gen& g, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g.real(-1.0, 1.0);
  return m;
}

ModelConfig small_model(std::size_t T, std::size_t D) {
  ModelConfig c;
  c.window = T;
  c.backbone.input_dim = D;
  c.backbone.hidden_dim = 4;
  c.backbone.output_dim = 6;
  c.backbone.num_blocks = 2;
  c.ctcm.kernels = {1, 2};
  c.ctcm.msff_hidden = 3;
  return c;
}

TEST(Score, PerfectOffsetAndHandCase) {
  const Matrix y = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  Scores s = score_predictions(y, y);
  EXPECT_EQ(s.mse, 0.0);
  EXPECT_EQ(s.mae, 0.0);
  s = score_predictions(y.array() + 1.0, y);
  EXPECT_DOUBLE_EQ(s.mse, 1.0);
  EXPECT_DOUBLE_EQ(s.mae, 1.0);
  s = score_predictions(Matrix::Zero(2, 2), y);
  EXPECT_DOUBLE_EQ(s.mse, 7.5);
  EXPECT_DOUBLE_EQ(s.mae, 2.5);
  EXPECT_THROW(score_predictions(Matrix::Zero(2, 3), y), DimensionError);
}

TEST(Ridge, RecoversExactLinearMap) {
  Gen g(1);
  const Matrix X = random_matrix(g, 200, 5);
  const Matrix W = random_matrix(g, 5, 3);
  const Eigen::RowVectorXd b = random_matrix(g, 1, 3);
  Matrix Y = X * W;
  Y.rowwise() += b;
  const Matrix Xv = random_matrix(g, 50, 5);
  Matrix Yv = Xv * W;
  Yv.rowwise() += b;
  const RidgeProbe p = fit_ridge(X, Y, Xv, Yv);
  EXPECT_EQ(p.alpha, 0.01);
  EXPECT_LT((p.weights - W).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((p.intercept - b).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Ridge, HugeAlphaPredictsColumnMeans) {
  Gen g(2);
  const Matrix X = random_matrix(g, 40, 4), Y = random_matrix(g, 40, 2);
  const RidgeProbe p = solve_ridge(X, Y, 1e12);
  EXPECT_LT(p.weights.cwiseAbs().maxCoeff(), 1e-9);
  const Matrix pred = p.predict(random_matrix(g, 5, 4));
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(pred(i, j), Y.col(j).mean(), 1e-9);
}

TEST(Ridge, SatisfiesNormalEquations) {
  Gen g(3);
  const Matrix X = random_matrix(g, 60, 7), Y = random_matrix(g, 60, 3);
  for (double alpha : default_alphas()) {
    const RidgeProbe p = solve_ridge(X, Y, alpha);
    const Matrix Xc = X.rowwise() - X.colwise().mean();
    const Matrix Yc = Y.rowwise() - Y.colwise().mean();
    Matrix A = Xc.transpose() * Xc;
    A.diagonal().array() += alpha;
    const Matrix rhs = Xc.transpose() * Yc;
    EXPECT_LT((A * p.weights - rhs).norm() / rhs.norm(), 1e-8) << "alpha " << alpha;
  }
}

TEST(Ridge, Preconditions) {
  Gen g(4);
  EXPECT_THROW(solve_ridge(random_matrix(g, 1, 2), random_matrix(g, 1, 1), 1.0), ConfigError);
  EXPECT_THROW(solve_ridge(random_matrix(g, 5, 2), random_matrix(g, 5, 1), 0.0), ParameterError);
  EXPECT_THROW(fit_ridge(random_matrix(g, 5, 2), random_matrix(g, 5, 1), random_matrix(g, 3, 2),
                         random_matrix(g, 3, 1), {}),
               ParameterError);
}

TEST(Ridge, AlphaSelectionNeverReadsTestAndTrainFitNeverReadsValidation) {
  Gen g(5);
  const Matrix Xt = random_matrix(g, 80, 4), Yt = random_matrix(g, 80, 2);
  const Matrix Xv = random_matrix(g, 30, 4), Yv = random_matrix(g, 30, 2);
  const RidgeProbe p = fit_ridge(Xt, Yt, Xv, Yv);
  // Weights for a fixed alpha depend on train rows only.
  const RidgeProbe direct = solve_ridge(Xt, Yt, p.alpha);
  EXPECT_EQ(p.weights, direct.weights);
  Matrix Yv2 = Yv;
  Yv2(0, 0) += 100.0;
  const RidgeProbe q = fit_ridge(Xt, Yt, Xv, Yv2);
  EXPECT_EQ(solve_ridge(Xt, Yt, q.alpha).weights, q.weights);
}

TEST(Horizons, Grids) {
  Gen g(6);
  data::SeriesTable t = testing::random_table(g, 10, 1, "ETTh1");
  EXPECT_EQ(horizon_grid(t), (std::vector<std::size_t>{24, 48, 168, 336, 720}));
  t.name = "ETTm2";
  EXPECT_EQ(horizon_grid(t), (std::vector<std::size_t>{24, 48, 96, 288, 672}));
  t.name = "custom";
  EXPECT_EQ(horizon_grid(t), hourly_horizons());
  for (std::size_t i = 0; i < t.rows(); ++i) t.timestamps[i] = data::format_timestamp(1467331200 + 900 * static_cast<std::int64_t>(i));
  EXPECT_EQ(horizon_grid(t), quarter_hour_horizons());
}

TEST(ExtractFeatures, CountsWidthsAndDeterminism) {
  Gen g(7);
  const data::SeriesTable raw = testing::random_table(g, 120, 3);
  const data::SeriesTable t = data::standardize(raw, data::split(raw));
  Model m = Model::create(small_model(10, 3), 1);
  const Features f = extract_features(m, t, {0, 72}, 5, Mode::multivariate);
  EXPECT_EQ(f.X.rows(), 72 - 10 - 5 + 1);
  EXPECT_EQ(f.X.cols(), 6);
  EXPECT_EQ(f.Y.cols(), 5 * 3);
  EXPECT_EQ(f.Y(0, 3), t.values(10 + 1, 0));
  EXPECT_EQ(f.X, extract_features(m, t, {0, 72}, 5, Mode::multivariate).X);
  const Features u = extract_features(m, t, {0, 72}, 5, Mode::univariate);
  EXPECT_EQ(u.Y.cols(), 5);
  EXPECT_EQ(u.Y(2, 4), t.values(2 + 10 + 4, 2));
  EXPECT_THROW(extract_features(m, t, {0, 12}, 5, Mode::multivariate), ConfigError);
}

TEST(ExtractFeatures, FinalStepRepresentation) {
  Gen g(8);
  const data::SeriesTable raw = testing::random_table(g, 60, 2);
  const data::SeriesTable t = data::standardize(raw, data::split(raw));
  Model m = Model::create(small_model(8, 2), 2);
  const Features f = extract_features(m, t, {0, 36}, 3, Mode::multivariate);
  const Tensor r = m.represent(data::window_at(t, 4, 8));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(f.X(4, static_cast<Eigen::Index>(k)), r(7, k));
}

TEST(EvaluateHorizons, SkipsOversizedHorizonsAndAveragesEntries) {
  Gen g(9);
  const data::SeriesTable raw = testing::random_table(g, 200, 2);
  const data::SplitSpec s = data::split(raw);
  const data::SeriesTable t = data::standardize(raw, s);
  Model m = Model::create(small_model(8, 2), 3);
  EvalOptions o;
  o.horizons = {2, 5, 500};
  AccessLog log;
  const ForecastReport r = evaluate_horizons(m, t, s, o, &log);
  ASSERT_EQ(r.entries.size(), 2u);
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0].horizon, 500u);
  EXPECT_NEAR(r.avg_mse, (r.entries[0].mse + r.entries[1].mse) / 2.0, 1e-12);
  EXPECT_NEAR(r.avg_mae, (r.entries[0].mae + r.entries[1].mae) / 2.0, 1e-12);
  EXPECT_EQ(r.entries[0].train_samples, 120u - 8 - 2 + 1);
  // Per horizon: train targets for the fit, validation for alpha, test last.
  EXPECT_EQ(log.events, (std::vector<std::string>{"fit:train", "select:valid", "score:test", "fit:train",
                                                  "select:valid", "score:test"}));
  EXPECT_THROW(evaluate_horizons(m, raw, s, o), ContractError);
}

TEST(EvaluateHorizons, TestTargetsDoNotMoveTheProbe) {
  Gen g(10);
  const data::SeriesTable raw = testing::random_table(g, 200, 2);
  const data::SplitSpec s = data::split(raw);
  data::SeriesTable t = data::standardize(raw, s);
  Model m = Model::create(small_model(8, 2), 4);
  EvalOptions o;
  o.horizons = {3};
  const ForecastReport before = evaluate_horizons(m, t, s, o);
  for (std::size_t i = s.valid_end; i < t.rows(); ++i) t.values(i, 1) += 50.0;
  const ForecastReport after = evaluate_horizons(m, t, s, o);
  EXPECT_EQ(before.entries[0].alpha, after.entries[0].alpha);
  EXPECT_NE(before.entries[0].mse, after.entries[0].mse);
}

TEST(Report, JsonRoundTripIsLossless) {
  ForecastReport r;
  r.dataset = "ETTh1";
  r.mode = Mode::univariate;
  r.window = 64;
  r.entries = {{24, 0.1234567890123, 0.2, 0.01, 10, 5, 5}, {48, 1.0 / 3.0, 0.7, 100, 9, 4, 4}};
  r.skipped = {{720, "too long"}};
  r.recompute_averages();
  r.config = {{"a", "1"}, {"b", "x"}};
  r.timestamp = "2024-01-01";
  const ForecastReport back = report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(to_json(back), to_json(r));
  EXPECT_EQ(back.entries[1].mse, 1.0 / 3.0);
  EXPECT_EQ(to_json(r)["metric_space"], "standardized");
  EXPECT_THROW(report_from_json(nlohmann::json::parse("{\"dataset\": 3}")), ParseError);
  EXPECT_NE(format_table(r).find("avg"), std::string::npos);
}

}  // namespace
}  // namespace mff::eval
