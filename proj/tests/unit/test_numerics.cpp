#include <cmath>
#include <numbers>

#include "doctest.h"
#include "util.hpp"

#include "eet/kernels.hpp"
#include "eet/numerics.hpp"

using namespace eet;

// Extended-precision value of the tanh-approximation GELU at 1, from
// tests/oracles/compute_oracles.py.
constexpr double kGeluAtOne = 0.8411919906082767047819958;

TEST_CASE("gelu: fixed point, asymptote and oracle value") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(std::abs(gelu(100.0) - 100.0) <= 1e-9);
  CHECK(std::abs(gelu(1.0) - kGeluAtOne) <= 1e-15);
}

TEST_CASE("gelu: single minimum near -0.75246, monotone on either side") {
  // The tanh form dips below zero for negative inputs; its derivative vanishes
  // once on the real line, near x = -0.7524614 (mpmath root of the derivative).
  double lo = -1.0, hi = -0.5;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (gelu_grad(mid) < 0.0 ? lo : hi) = mid;
  }
  CHECK(std::abs(lo + 0.7524614220710163) <= 1e-9);
  double prev = gelu(-10.0);
  for (int i = 1; i <= 20000; ++i) {
    const double x = -10.0 + 1e-3 * i;
    const double y = gelu(x);
    if (x <= lo) {
      REQUIRE(y <= prev + 1e-15);
    } else if (x - 1e-3 >= lo) {
      REQUIRE(y >= prev);
    }
    prev = y;
  }
  CHECK(gelu(lo) == doctest::Approx(-0.17004075057125405).epsilon(1e-12));
}

TEST_CASE("gelu: matrix form is elementwise") {
  Rng rng(3);
  const Matrix m = test::random_matrix(3, 4, rng);
  const Matrix g = gelu(m);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(g[i] == gelu(m[i]));
}

TEST_CASE("gelu_grad agrees with central differences") {
  for (double x = -6.0; x <= 6.0; x += 0.37) {
    const double h = 1e-6;
    const double numeric = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(std::abs(gelu_grad(x) - numeric) <= 1e-8);
  }
}

TEST_CASE("softmax: analytic cases") {
  for (double c : {-50.0, 0.0, 3.5, 700.0}) {
    const std::vector<double> v{c, c, c};
    for (double p : softmax(v)) CHECK(std::abs(p - 1.0 / 3.0) <= 1e-15);
  }
  const std::vector<double> v{0.0, std::log(2.0)};
  const auto p = softmax(v);
  CHECK(std::abs(p[0] - 1.0 / 3.0) <= 1e-15);
  CHECK(std::abs(p[1] - 2.0 / 3.0) <= 1e-15);
  CHECK_THROWS_AS(softmax(std::vector<double>{}), Error);
}

TEST_CASE("softmax: naive long-double oracle on random vectors") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = test::random_vector(5, rng, 3.0);
    long double z = 0;
    for (double x : v) z += std::exp(static_cast<long double>(x));
    const auto p = softmax(v);
    double sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(std::abs(p[i] - static_cast<double>(std::exp(static_cast<long double>(v[i])) / z)) <= 1e-12);
      sum += p[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax: invariant to adding a constant") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = test::random_vector(6, rng, 2.0);
    const auto p = softmax(v);
    for (double& x : v) x += 17.25;
    const auto q = softmax(v);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
  }
}

TEST_CASE("cross_entropy: analytic cases, clamping and oracle") {
  CHECK(std::abs(cross_entropy(std::vector<double>{1, 0, 0}, 0)) <= 1e-12);
  CHECK(std::abs(cross_entropy(std::vector<double>{0.5, 0.5}, 1) - std::numbers::ln2) <= 1e-15);
  CHECK(std::isfinite(cross_entropy(std::vector<double>{1, 0}, 1)));
  CHECK_THROWS_AS(cross_entropy(std::vector<double>{0.5, 0.5}, 2), Error);

  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = softmax(test::random_vector(4, rng));
    const std::size_t label = static_cast<std::size_t>(trial % 4);
    CHECK(std::abs(cross_entropy(p, label) - static_cast<double>(-std::log(static_cast<long double>(p[label])))) <=
          1e-12);
  }
}

TEST_CASE("grad_check: exact on a quadratic") {
  ParamStore ps;
  Rng rng(1);
  ps.add("w", test::random_matrix(3, 4, rng));
  ps.add("u", test::random_matrix(1, 5, rng));
  const GradObjective f = [](ParamStore& p) {
    double v = 0;
    for (auto& e : p.entries()) {
      v += 0.5 * frobenius_sq(e.value);
      e.grad += e.value;
    }
    return v;
  };
  CHECK(grad_check(f, ps, 1e-5) <= 1e-7);
}

TEST_CASE("grad_check: detects a corrupted backward") {
  ParamStore ps;
  Rng rng(2);
  ps.add("w", test::random_matrix(2, 3, rng));
  const GradObjective f = [](ParamStore& p) {
    auto& e = p.entry(0);
    e.grad += e.value * 2.0;
    return 0.5 * frobenius_sq(e.value);
  };
  CHECK(grad_check(f, ps, 1e-5) >= 0.3);
}

TEST_CASE("grad_check: rejects bad eps and non-finite objectives") {
  ParamStore ps;
  ps.add("w", Matrix(1, 1, 1.0));
  const GradObjective ok = [](ParamStore&) { return 0.0; };
  CHECK_THROWS_AS(grad_check(ok, ps, 0.0), Error);
  CHECK_THROWS_AS(grad_check(ok, ps, 0.1), Error);
  const GradObjective bad = [](ParamStore&) { return std::nan(""); };
  CHECK_THROWS_AS(grad_check(bad, ps, 1e-5), Error);
}

TEST_CASE("matmul agrees with a naive triple loop") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = test::random_matrix(7, 5, rng), b = test::random_matrix(5, 3, rng);
    const Matrix c = matmul(a, b);
    REQUIRE(c.rows() == 7);
    REQUIRE(c.cols() == 3);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        long double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
        CHECK(std::abs(c(i, j) - static_cast<double>(s)) <= 1e-10);
      }
    }
  }
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), Error);
}

TEST_CASE("serial and OpenMP kernels are bitwise identical") {
  Rng rng(22);
  for (std::size_t n : {3u, 40u, 130u}) {
    const Matrix a = test::random_matrix(n, n + 1, rng), b = test::random_matrix(n + 1, n, rng);
    CHECK(kernels::serial::matmul(a, b) == kernels::omp::matmul(a, b));
    const Matrix c = test::random_matrix(n, n + 1, rng);
    CHECK(kernels::serial::matmul_bt(a, c) == kernels::omp::matmul_bt(a, c));
    CHECK(kernels::serial::matmul_at(a, c) == kernels::omp::matmul_at(a, c));
  }
  const std::vector<Face> faces{{0, 1, 2}, {1, 3, 2}};
  const Matrix frames = test::random_matrix(300, 12, rng), other = test::random_matrix(300, 12, rng);
  CHECK(kernels::serial::vertex_normals(frames, faces) == kernels::omp::vertex_normals(frames, faces));
  CHECK(kernels::serial::vertex_distances(frames, other) == kernels::omp::vertex_distances(frames, other));
}

TEST_CASE("ParamStore rejects duplicate names and unknown lookups") {
  ParamStore ps;
  ps.add("a", Matrix(2, 2));
  CHECK_THROWS_AS(ps.add("a", Matrix(1, 1)), Error);
  CHECK_THROWS_AS(ps.index_of("b"), Error);
  CHECK(ps.scalar_count() == 4);
  CHECK(ps["a"].grad.same_shape(ps["a"].value));
}
