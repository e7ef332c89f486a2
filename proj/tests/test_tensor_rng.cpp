#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "doctest.h"
#include "flmg/rng.hpp"
#include "flmg/tensor.hpp"

using namespace flmg;

TEST_CASE("tensor construction and access") {
  Tensor t = Tensor::matrix(2, 3);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
  for (double v : t.data()) CHECK(v == 0.0);

  t.at(1, 2) = 4.5;
  CHECK(t[1 * 3 + 2] == 4.5);
  CHECK(t.row(1)[2] == 4.5);

  Tensor u = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(u.at(0, 1) == 2);
  CHECK(u.at(1, 0) == 3);
  CHECK(u.same_shape(Tensor::matrix(2, 2)));
  CHECK_FALSE(u.same_shape(t));
}

TEST_CASE("tensor rejects malformed construction") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_data({1, 2}, {1.0, std::nan("")}), std::invalid_argument);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(Tensor::from_data({1, 1}, {inf}), std::invalid_argument);

  Tensor flat = Tensor::zeros({4});
  CHECK_THROWS_AS((void)flat.rows(), std::logic_error);
  CHECK_THROWS_AS((void)flat.row(0), std::logic_error);
}

TEST_CASE("tensor gradient buffer") {
  Tensor t = Tensor::matrix(2, 2);
  CHECK_FALSE(t.has_grad());
  const Tensor& ct = t;
  CHECK_THROWS_AS((void)ct.grad(), std::logic_error);
  t.grad()[3] = 2.0;
  CHECK(t.has_grad());
  CHECK(ct.grad()[3] == 2.0);
  t.zero_grad();
  CHECK(ct.grad()[3] == 0.0);
}

TEST_CASE("rng is deterministic per seed and distinct across seeds") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_equal_c = false;
  for (int i = 0; i < 64; ++i) {
    auto va = a.next_u64();
    auto vb = b.next_u64();
    auto vc = c.next_u64();
    all_equal = all_equal && (va == vb);
    any_equal_c = any_equal_c || (va == vc);
  }
  CHECK(all_equal);
  CHECK_FALSE(any_equal_c);
}

TEST_CASE("derive_seed separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 32; ++s) seen.insert(derive_seed(7, s));
  CHECK(seen.size() == 32);
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
  CHECK(derive_seed(7, 1, 2) != derive_seed(7, 2, 1));
}

TEST_CASE("uniform stays in range and covers it") {
  Rng r(5);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("uniform_int hits every value in a small range") {
  Rng r(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) {
    auto v = r.uniform_int(10, 14);
    REQUIRE(v >= 10);
    REQUIRE(v <= 14);
    counts[static_cast<std::size_t>(v - 10)]++;
  }
  for (int c : counts) CHECK(c > 800);  // fair within sampling noise
  CHECK_THROWS_AS(r.uniform_int(3, 2), std::invalid_argument);
}

TEST_CASE("normal moments match the standard normal") {
  Rng r(17);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);        // sigma/sqrt(n) ~ 0.0022
  CHECK(std::abs(var - 1.0) < 0.02);   // sd(var-hat) ~ 0.0032
}

TEST_CASE("gamma mean and variance match shape") {
  Rng r(23);
  for (double shape : {0.5, 2.0, 7.5}) {
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      double v = r.gamma(shape);
      CHECK(v > 0.0);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(mean == doctest::Approx(shape).epsilon(0.03));
    CHECK(var == doctest::Approx(shape).epsilon(0.08));
  }
  CHECK_THROWS_AS(r.gamma(0.0), std::invalid_argument);
}

TEST_CASE("dirichlet draws live on the simplex") {
  Rng r(31);
  for (double alpha : {0.1, 1.0, 100.0}) {
    auto w = r.dirichlet(alpha, 6);
    REQUIRE(w.size() == 6);
    double sum = 0.0;
    for (double v : w) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("shuffle permutes without loss") {
  Rng r(9);
  std::vector<int> v(40);
  for (int i = 0; i < 40; ++i) v[static_cast<std::size_t>(i)] = i;
  auto orig = v;
  r.shuffle(v);
  CHECK(v != orig);  // 1/40! chance of a false failure
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}

TEST_CASE("fill_normal consumes the same stream as repeated normal calls") {
  Rng a(77), b(77);
  std::vector<double> buf(9, 0.0);
  a.fill_normal(buf);
  for (double v : buf) CHECK(v == b.normal());
}
