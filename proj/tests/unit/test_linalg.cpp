#include "doctest.h"
#include "oracles.hpp"

#include "strata_id/linalg.hpp"
#include "strata_id/rng.hpp"

#include <cmath>
#include <stdexcept>

using namespace strata;

namespace {

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = rng.normal();
  return M;
}

Matrix random_simplex_columns(int r, int c, Rng& rng) {
  Matrix M(r, c);
  const std::vector<double> ones(static_cast<std::size_t>(r), 1.0);
  for (int j = 0; j < c; ++j) {
    auto col = rng.dirichlet(ones);
    for (int i = 0; i < r; ++i) M(i, j) = col[static_cast<std::size_t>(i)];
  }
  return M;
}

}  // namespace

TEST_CASE("numerical rank") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const int k = 1 + static_cast<int>(rng.uniform_int(5));
    const Matrix M = random_matrix(6, k, rng) * random_matrix(k, 7, rng);
    CHECK(numerical_rank(M) == k);
    CHECK(numerical_rank(M) == oracle::lu_rank(M));
  }
  CHECK(numerical_rank(Matrix::Zero(3, 3)) == 0);
}

TEST_CASE("kruskal rank of a small hand example") {
  Matrix B(2, 3);
  B << 1, 0, 1,
       0, 1, 1;
  CHECK(kruskal_rank(B) == 2);
  CHECK(oracle::subset_kruskal_rank(B) == 2);
}

TEST_CASE("kruskal rank against exhaustive subset enumeration") {
  Rng rng(23);
  for (int t = 0; t < 40; ++t) {
    const int rows = 2 + static_cast<int>(rng.uniform_int(4));
    const int cols = 2 + static_cast<int>(rng.uniform_int(6));
    Matrix B = random_matrix(rows, cols, rng);
    // make some of them degenerate
    if (t % 3 == 0) B.col(cols - 1) = B.col(0) * 2.0;
    if (t % 5 == 0 && cols > 2) B.col(1) = B.col(0) + B.col(cols - 1);
    if (t % 7 == 0) B.col(0).setZero();
    CHECK(kruskal_rank(B) == oracle::subset_kruskal_rank(B));
  }
}

TEST_CASE("kruskal rank detail reports the first deficient subset") {
  Matrix B(3, 4);
  B << 1, 0, 0, 1,
       0, 1, 0, 1,
       0, 0, 1, 0;
  const auto d = kruskal_rank_detail(B);
  CHECK(d.rank == 2);
  CHECK(d.deficient_subset.size() == 3);
  CHECK(d.margin > 0.0);
  CHECK_FALSE(d.near_deficient());
  Matrix near = B;
  near(2, 2) = 1e-13;  // numerically a zero column
  CHECK(kruskal_rank_detail(near).rank == 0);
}

TEST_CASE("kruskal rank refuses more than 24 columns") {
  CHECK_THROWS_AS(kruskal_rank(Matrix::Identity(25, 25)), std::length_error);
}

TEST_CASE("pseudoinverse satisfies the four Penrose conditions") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const int k = 1 + static_cast<int>(rng.uniform_int(4));
    const Matrix B = random_matrix(5, k, rng) * random_matrix(k, 4, rng);
    const Matrix P = pseudoinverse(B);
    CHECK((B * P * B - B).norm() < 1e-10);
    CHECK((P * B * P - P).norm() < 1e-10);
    CHECK(((B * P).transpose() - B * P).norm() < 1e-10);
    CHECK(((P * B).transpose() - P * B).norm() < 1e-10);
  }
  CHECK(pseudoinverse(Matrix::Zero(2, 3)).norm() == 0.0);
}

TEST_CASE("triple product matches the naive sum") {
  Rng rng(7);
  const Matrix A = random_matrix(3, 4, rng), B = random_matrix(5, 4, rng), C = random_matrix(2, 4, rng);
  const ThreeWayArray X = triple_product(A, B, C);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j)
      for (int k = 0; k < 2; ++k) CHECK(X(i, j, k) == doctest::Approx(oracle::naive_triple(A, B, C, i, j, k)).epsilon(1e-14));
  CHECK(frobenius_distance(X, X) == 0.0);
}

TEST_CASE("unfoldings hold every entry once") {
  ThreeWayArray X(2, 3, 4);
  int v = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) X(i, j, k) = ++v;
  for (int mode = 0; mode < 3; ++mode) {
    const Matrix U = X.unfold(mode);
    CHECK(U.size() == 24);
    CHECK(U.sum() == doctest::Approx(300.0));
  }
  CHECK(X.unfold(0).rows() == 2);
  CHECK(X.unfold(1).rows() == 3);
  CHECK(X.unfold(2).rows() == 4);
}

TEST_CASE("unconstrained CP recovers an exact rank-3 array") {
  Rng rng(101);
  const Matrix A = random_matrix(5, 3, rng), B = random_matrix(4, 3, rng), C = random_matrix(6, 3, rng);
  const ThreeWayArray X = triple_product(A, B, C);
  CpOptions o;
  o.restarts = 10;
  const CpFactors f = cp_decompose(X, 3, {}, o);
  CHECK(f.residual < 1e-10);
  CHECK(frobenius_distance(X, triple_product(f.A, f.B, f.C)) < 1e-8 * X.frobenius_norm());
}

TEST_CASE("CP with a fixed first factor recovers the other two") {
  Rng rng(202);
  // block-rank identity: krank 3 + 3 + 4 >= 2 * 4 + 2
  Matrix A(4, 4);
  A << 0, 1, 0, 1,
       0, 0, 1, 1,
       1, 0, 1, 0,
       1, 1, 0, 0;
  CHECK(oracle::subset_kruskal_rank(A) == 3);
  const Matrix B = random_simplex_columns(3, 4, rng);
  const Matrix C = random_simplex_columns(4, 4, rng);
  CHECK(oracle::subset_kruskal_rank(B) == 3);
  CHECK(oracle::subset_kruskal_rank(C) == 4);
  const ThreeWayArray X = triple_product(A, B, C);
  CpConstraints cons;
  cons.fixed_A = A;
  cons.columns_of_C_sum_to_one = true;
  const CpFactors f = cp_decompose(X, 4, cons);
  CHECK(f.residual < 1e-10);
  CHECK((f.B - B).cwiseAbs().maxCoeff() < 1e-7);
  CHECK((f.C - C).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("CP convergence failure carries the best restart") {
  Rng rng(3);
  ThreeWayArray X(3, 3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) X(i, j, k) = rng.normal();
  CpOptions o;
  o.restarts = 2;
  o.max_iter = 50;
  o.polish = false;
  try {
    cp_decompose(X, 1, {}, o);
    FAIL("expected CpConvergenceError");
  } catch (const CpConvergenceError& e) {
    CHECK(e.best_residual() > 1e-3);
    CHECK(e.best().A.cols() == 1);
  }
  CHECK_THROWS_AS(cp_decompose(X, 0, {}, o), std::invalid_argument);
}

TEST_CASE("match_columns undoes a known permutation") {
  Rng rng(9);
  const Matrix ref = random_matrix(4, 5, rng);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  Matrix est(4, 5);
  for (int r = 0; r < 5; ++r) est.col(perm[static_cast<std::size_t>(r)]) = ref.col(r);
  const auto m = match_columns(ref, est);
  CHECK(m == perm);
  CHECK((permute_columns(est, m) - ref).norm() == 0.0);
}

TEST_CASE("Levenberg-Marquardt solves the Rosenbrock residuals") {
  LmProblem f = [](const Vector& x, Vector& r, Matrix* J) {
    r.resize(2);
    r << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
    if (J) {
      J->resize(2, 2);
      *J << -20.0 * x(0), 10.0, -1.0, 0.0;
    }
  };
  Vector x0(2);
  x0 << -1.2, 1.0;
  const LmResult res = levenberg_marquardt(f, x0);
  CHECK(res.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(res.x(1) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(res.cost < 1e-20);
}
