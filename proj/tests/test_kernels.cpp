#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "istr/nn/kernels.hpp"

using namespace istr::nn;

namespace {

std::vector<float> random_vec(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-2.f, 2.f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("omp matmul is bitwise identical to the serial reference") {
  std::mt19937_64 rng(1);
  for (auto [m, k, n] : {std::tuple{3, 5, 7}, {17, 23, 31}, {64, 144, 256}}) {
    const auto a = random_vec(static_cast<size_t>(m) * k, rng);
    const auto b = random_vec(static_cast<size_t>(k) * n, rng);
    std::vector<float> c_par(static_cast<size_t>(m) * n), c_ser(c_par.size());
    matmul(a.data(), b.data(), c_par.data(), m, k, n);
    serial::matmul(a.data(), b.data(), c_ser.data(), m, k, n);
    CHECK(c_par == c_ser);
  }
}

TEST_CASE("omp matmul_tn matches serial") {
  std::mt19937_64 rng(2);
  const int m = 29, k = 13, n = 41;
  const auto a = random_vec(static_cast<size_t>(k) * m, rng);
  const auto b = random_vec(static_cast<size_t>(k) * n, rng);
  std::vector<float> c_par(static_cast<size_t>(m) * n), c_ser(c_par.size());
  matmul_tn(a.data(), b.data(), c_par.data(), m, k, n);
  serial::matmul_tn(a.data(), b.data(), c_ser.data(), m, k, n);
  CHECK(c_par == c_ser);
}

TEST_CASE("omp matmul_nt matches serial") {
  std::mt19937_64 rng(3);
  const int m = 19, k = 37, n = 11;
  const auto a = random_vec(static_cast<size_t>(m) * k, rng);
  const auto b = random_vec(static_cast<size_t>(n) * k, rng);
  std::vector<float> c_par(static_cast<size_t>(m) * n), c_ser(c_par.size());
  matmul_nt(a.data(), b.data(), c_par.data(), m, k, n);
  serial::matmul_nt(a.data(), b.data(), c_ser.data(), m, k, n);
  CHECK(c_par == c_ser);
}

TEST_CASE("im2col3 matches serial and known values") {
  std::mt19937_64 rng(4);
  const int c = 3, h = 9, w = 7;
  const auto x = random_vec(static_cast<size_t>(c) * h * w, rng);
  std::vector<float> col_par(static_cast<size_t>(c) * 9 * h * w),
      col_ser(col_par.size());
  im2col3(x.data(), col_par.data(), c, h, w);
  serial::im2col3(x.data(), col_ser.data(), c, h, w);
  CHECK(col_par == col_ser);

  // center tap (kh=0,kw=0) reproduces the input
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < h * w; ++i)
      CHECK(col_par[(ci * 9 + 4) * h * w + i] == x[ci * h * w + i]);
  // top-left tap of pixel (0,0) is zero padding
  CHECK(col_par[0] == 0.f);
}

TEST_CASE("matmul against a tiny hand computation") {
  const float a[6] = {1, 2, 3, 4, 5, 6};   // 2x3
  const float b[6] = {7, 8, 9, 10, 11, 12};  // 3x2
  float c[4];
  matmul(a, b, c, 2, 3, 2);
  CHECK(c[0] == doctest::Approx(58));
  CHECK(c[1] == doctest::Approx(64));
  CHECK(c[2] == doctest::Approx(139));
  CHECK(c[3] == doctest::Approx(154));
}
