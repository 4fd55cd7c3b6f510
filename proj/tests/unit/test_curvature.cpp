#include <gtest/gtest.h>

#include "lapnet/curvature.hpp"
#include "lapnet/errors.hpp"
#include "oracles.hpp"

using namespace lapnet;

namespace {

CurvatureOperator figure1_ggn() {
  return ggn_vp(oracle::figure1_model(), {LossKind::mse}, {oracle::figure1_data()},
                oracle::figure1_theta());
}

const Matrix kFigure1Ggn{{1.0420421 * 1.0420421, 1.0420421 * 0.6556547},
                         {1.0420421 * 0.6556547, 0.6556547 * 0.6556547}};

Matrix dense(const CurvatureOperator& op) {
  return std::get<FullCurvature>(estimate_full(op).value).matrix;
}

}  // namespace

TEST(Ggn, Figure1RankOneProduct) {
  const Vector out = figure1_ggn().apply(Vector{{1.0, 0.0}});
  EXPECT_NEAR(out(0), 1.08585, 1e-5);
  EXPECT_NEAR(out(1), 0.68322, 1e-5);
  EXPECT_EQ(figure1_ggn().apply(Vector::Zero(2)).norm(), 0.0);
}

TEST(Ggn, LinearModelScalesBySumOfSquares) {
  const Batch b{Matrix{{1.0}, {2.0}, {-3.0}}, Matrix{{0.0}, {1.0}, {2.0}}};
  const auto op = ggn_vp(oracle::linear_model(1, 1, false), {LossKind::mse}, {b},
                         FlatVector{{0.4}});
  EXPECT_NEAR(op.apply(Vector{{2.0}})(0), 14.0 * 2.0, 1e-13);
}

TEST(Ggn, EmptyDataIsDomainError) {
  EXPECT_THROW(ggn_vp(oracle::figure1_model(), {LossKind::mse}, {}, oracle::figure1_theta()),
               DomainError);
  EXPECT_THROW(
      hessian_vp(oracle::figure1_model(), {LossKind::mse}, {}, oracle::figure1_theta()),
      DomainError);
}

TEST(Hessian, EqualsGgnForLinearModels) {
  for (const LossKind kind : {LossKind::mse, LossKind::cross_entropy}) {
    const auto model = oracle::linear_model(3, 2, true);
    const FlatVector theta = oracle::random_matrix(model.param_count(), 1, 3);
    Batch b{oracle::random_matrix(10, 3, 1), oracle::random_matrix(10, 2, 2)};
    if (kind == LossKind::cross_entropy) {
      b.targets = Matrix::Zero(10, 1);
      for (Index i = 0; i < 10; i += 3) b.targets(i, 0) = 1;
    }
    const Matrix g = dense(ggn_vp(model, {kind}, {b}, theta));
    const Matrix h = dense(hessian_vp(model, {kind}, {b}, theta));
    EXPECT_LT((g - h).norm(), 1e-10);
  }
}

TEST(Hessian, QuadraticObjective) {
  // 1/2 (theta x)^2 with x = 3: Hessian a = 9.
  const Batch b{Matrix{{3.0}}, Matrix{{0.0}}};
  const auto op = hessian_vp(oracle::linear_model(1, 1, false), {LossKind::mse}, {b},
                             FlatVector{{1.3}});
  EXPECT_NEAR(op.apply(Vector{{0.5}})(0), 4.5, 1e-13);
}

TEST(Hessian, MatchesCentralDifferenceOfGradient) {
  const auto model = ModelSpec::mlp(2, {5}, 3, ActivationKind::tanh);
  const FlatVector theta = flatten(init_params(model, 4));
  const Batch b{oracle::random_matrix(6, 2, 5), Matrix{{0}, {2}, {1}, {1}, {0}, {2}}};
  const LossSpec loss{LossKind::cross_entropy};
  const auto op = hessian_vp(model, loss, {b}, theta);
  const FlatVector v = oracle::random_matrix(theta.size(), 1, 6);
  const double h = 1e-4;
  const FlatVector fd =
      (grad(model, theta + h * v, b, loss) - grad(model, theta - h * v, b, loss)) / (2 * h);
  EXPECT_LT(oracle::rel_err(op.apply(v), fd), 1e-4);
}

TEST(EstimateFull, Figure1Matrix) {
  const auto est = estimate_full(figure1_ggn());
  const Matrix& m = std::get<FullCurvature>(est.value).matrix;
  EXPECT_LT((m - kFigure1Ggn).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(m(1, 1), 0.42988, 1e-5);
}

TEST(EstimateFull, RoundTripsDenseOperatorAndZero) {
  const Matrix a = oracle::random_matrix(12, 12, 9);
  const Matrix sym = 0.5 * (a + a.transpose());
  const Matrix back = std::get<FullCurvature>(estimate_full(dense_operator(sym)).value).matrix;
  EXPECT_LT((back - sym).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix zero =
      std::get<FullCurvature>(estimate_full(dense_operator(Matrix::Zero(4, 4))).value).matrix;
  EXPECT_EQ(zero.norm(), 0.0);
}

TEST(EstimateFull, CapRaisesResourceError) {
  EXPECT_THROW(estimate_full(identity_operator(50), 10), ResourceError);
}

TEST(EstimateDiagonal, Figure1AndIdentity) {
  const Vector d = std::get<DiagonalCurvature>(estimate_diagonal(figure1_ggn()).value).diagonal;
  EXPECT_NEAR(d(0), 1.08585, 1e-5);
  EXPECT_NEAR(d(1), 0.42988, 1e-5);
  const Vector ones =
      std::get<DiagonalCurvature>(estimate_diagonal(identity_operator(7)).value).diagonal;
  EXPECT_EQ(ones, Vector::Ones(7));
}

TEST(EstimateDiagonal, EqualsDiagonalOfFullExactly) {
  const auto model = ModelSpec::mlp(2, {6}, 2, ActivationKind::tanh);
  const FlatVector theta = flatten(init_params(model, 1));
  const Batch b{oracle::random_matrix(8, 2, 2), oracle::random_matrix(8, 2, 3)};
  const auto op = ggn_vp(model, {LossKind::mse}, {b}, theta);
  const Vector d = std::get<DiagonalCurvature>(estimate_diagonal(op).value).diagonal;
  const Matrix f = std::get<FullCurvature>(estimate_full(op).value).matrix;
  EXPECT_EQ(d, Vector(f.diagonal()));
}

TEST(Lanczos, Figure1RankOne) {
  const auto est = estimate_lanczos(figure1_ggn(), {1, 3, 1e-12, 100});
  const auto& lr = std::get<LowRankCurvature>(est.value);
  const Vector j{{1.0420421, 0.6556547}};
  EXPECT_NEAR(lr.S(0), j.squaredNorm(), 1e-8);
  EXPECT_NEAR(lr.S(0), 1.51573, 1e-5);
  EXPECT_LT((lr.U.col(0) - j.normalized()).norm(), 1e-8);  // sign rule: first entry positive
}

TEST(Lanczos, FullRankMatchesDenseEigensolver) {
  const Matrix a = oracle::random_spd(30, 17);
  const auto est = estimate_lanczos(dense_operator(a), {30, 1, 1e-12, 1000});
  const auto& lr = std::get<LowRankCurvature>(est.value);
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  Vector expected = es.eigenvalues().reverse();
  EXPECT_LT((lr.S - expected).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_TRUE(est.converged);
}

TEST(Lanczos, IdentityRitzValuesAreOne) {
  const auto est = estimate_lanczos(identity_operator(9), {4, 2, 1e-12, 100});
  const auto& lr = std::get<LowRankCurvature>(est.value);
  EXPECT_LT((lr.S.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Lobpcg, Figure1RankOneAndFullRank) {
  const auto est = estimate_lobpcg(figure1_ggn(), {1, 0, 3, 1e-12, 500});
  const auto& lr = std::get<LowRankCurvature>(est.value);
  const Vector j{{1.0420421, 0.6556547}};
  EXPECT_NEAR(lr.S(0), j.squaredNorm(), 1e-8);
  EXPECT_LT((lr.U.col(0) - j.normalized()).norm(), 1e-8);

  const Matrix a = oracle::random_spd(20, 5);
  const auto full = estimate_lobpcg(dense_operator(a), {20, 0, 1, 1e-12, 2000});
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  EXPECT_LT((std::get<LowRankCurvature>(full.value).S - es.eigenvalues().reverse())
                .cwiseAbs()
                .maxCoeff(),
            1e-8);
}

TEST(Lobpcg, SingleVectorBlockConverges) {
  Vector eig = Vector::LinSpaced(15, 1.0, 15.0);
  eig(14) = 40.0;
  const Matrix q = Eigen::HouseholderQR<Matrix>(oracle::random_matrix(15, 15, 3)).householderQ();
  const Matrix a = q * eig.asDiagonal() * q.transpose();
  const auto est = estimate_lobpcg(dense_operator(0.5 * (a + a.transpose())), {1, 1, 4, 1e-10, 500});
  EXPECT_NEAR(std::get<LowRankCurvature>(est.value).S(0), 40.0, 1e-8);
}

TEST(Lanczos, MatvecCountsAreRecorded) {
  const Matrix a = oracle::random_spd(200, 8);
  const auto op = dense_operator(a);
  const auto l = estimate_lanczos(op, {10, 1, 1e-8, 1000});
  const auto b = estimate_lobpcg(op, {10, 0, 1, 1e-8, 1000});
  EXPECT_GT(l.matvecs, 0u);
  EXPECT_GT(b.matvecs, 0u);
  RecordProperty("lanczos_matvecs", static_cast<int>(l.matvecs));
  RecordProperty("lobpcg_matvecs", static_cast<int>(b.matvecs));
}

TEST(Mask, LastLayerRestriction) {
  const auto model = ModelSpec::mlp(2, {5}, 3, ActivationKind::tanh);
  const auto mask = ParamMask::last_layer(model);
  EXPECT_EQ(mask.dim(), 5 * 3 + 3);
  const FlatVector theta = flatten(init_params(model, 2));
  const Batch b{oracle::random_matrix(4, 2, 1), oracle::random_matrix(4, 3, 2)};
  const auto full = ggn_vp(model, {LossKind::mse}, {b}, theta);
  const auto sub = restrict_to(full, mask);
  const Matrix fm = std::get<FullCurvature>(estimate_full(full).value).matrix;
  const Matrix sm = std::get<FullCurvature>(estimate_full(sub).value).matrix;
  const auto [begin, end] = last_layer_range(model);
  EXPECT_LT((sm - fm.block(begin, begin, end - begin, end - begin)).norm(), 1e-13);
}

TEST(Estimate, JsonRoundTrip) {
  const auto est = estimate_lanczos(dense_operator(oracle::random_spd(6, 1)), {3, 1, 1e-12, 100});
  const auto back = estimate_from_json(estimate_to_json(est));
  EXPECT_EQ(to_dense(back), to_dense(est));
  EXPECT_EQ(back.kind_name(), "low_rank");
}
