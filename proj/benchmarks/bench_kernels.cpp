// Times the OpenMP kernels against their serial references.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "istr/nn/kernels.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);

  std::printf("%-28s %12s %12s %8s\n", "kernel", "serial [ms]", "omp [ms]",
              "speedup");

  {
    const int m = 64, k = 144, n = 4096;
    std::vector<float> a(m * k), b(k * n), c(m * n);
    for (auto& v : a) v = dist(rng);
    for (auto& v : b) v = dist(rng);
    const double ts = time_ms([&] { istr::nn::serial::matmul(a.data(), b.data(), c.data(), m, k, n); }, 5);
    const double tp = time_ms([&] { istr::nn::matmul(a.data(), b.data(), c.data(), m, k, n); }, 5);
    std::printf("%-28s %12.3f %12.3f %8.2f\n", "matmul 64x144x4096", ts, tp, ts / tp);
  }
  {
    const int m = 144, k = 64, n = 4096;
    std::vector<float> a(k * m), b(k * n), c(m * n);
    for (auto& v : a) v = dist(rng);
    for (auto& v : b) v = dist(rng);
    const double ts = time_ms([&] { istr::nn::serial::matmul_tn(a.data(), b.data(), c.data(), m, k, n); }, 5);
    const double tp = time_ms([&] { istr::nn::matmul_tn(a.data(), b.data(), c.data(), m, k, n); }, 5);
    std::printf("%-28s %12.3f %12.3f %8.2f\n", "matmul_tn 144x64x4096", ts, tp, ts / tp);
  }
  {
    const int m = 64, k = 4096, n = 144;
    std::vector<float> a(m * k), b(n * k), c(m * n);
    for (auto& v : a) v = dist(rng);
    for (auto& v : b) v = dist(rng);
    const double ts = time_ms([&] { istr::nn::serial::matmul_nt(a.data(), b.data(), c.data(), m, k, n); }, 5);
    const double tp = time_ms([&] { istr::nn::matmul_nt(a.data(), b.data(), c.data(), m, k, n); }, 5);
    std::printf("%-28s %12.3f %12.3f %8.2f\n", "matmul_nt 64x4096x144", ts, tp, ts / tp);
  }
  {
    const int c = 16, h = 96, w = 96;
    std::vector<float> x(c * h * w), col(c * 9 * h * w);
    for (auto& v : x) v = dist(rng);
    const double ts = time_ms([&] { istr::nn::serial::im2col3(x.data(), col.data(), c, h, w); }, 10);
    const double tp = time_ms([&] { istr::nn::im2col3(x.data(), col.data(), c, h, w); }, 10);
    std::printf("%-28s %12.3f %12.3f %8.2f\n", "im2col3 16x96x96", ts, tp, ts / tp);
  }
  return 0;
}
