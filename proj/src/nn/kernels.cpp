#include "istr/nn/kernels.hpp"

#include <cstring>

namespace istr::nn {

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    float* ci = c + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(float) * n);
    const float* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      const float* bp = b + static_cast<size_t>(p) * n;
#pragma omp simd
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    float* ci = c + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(float) * n);
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<size_t>(p) * m + i];
      const float* bp = b + static_cast<size_t>(p) * n;
#pragma omp simd
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + static_cast<size_t>(j) * k;
      // no simd reduction here: reassociating the sum would break bitwise
      // agreement with the serial reference
      float acc = 0.f;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void im2col3(const float* x, float* col, int c, int h, int w) {
  const int hw = h * w;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < c * 9; ++row) {
    const int ci = row / 9;
    const int kh = (row % 9) / 3 - 1;
    const int kw = (row % 9) % 3 - 1;
    const float* xc = x + static_cast<size_t>(ci) * hw;
    float* out = col + static_cast<size_t>(row) * hw;
    for (int y = 0; y < h; ++y) {
      const int sy = y + kh;
      float* orow = out + y * w;
      if (sy < 0 || sy >= h) {
        std::memset(orow, 0, sizeof(float) * w);
        continue;
      }
      const float* xrow = xc + sy * w;
      for (int xx = 0; xx < w; ++xx) {
        const int sx = xx + kw;
        orow[xx] = (sx < 0 || sx >= w) ? 0.f : xrow[sx];
      }
    }
  }
}

namespace serial {

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float acc = 0.f;
      for (int p = 0; p < k; ++p) acc += a[size_t(i) * k + p] * b[size_t(p) * n + j];
      c[size_t(i) * n + j] = acc;
    }
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float acc = 0.f;
      for (int p = 0; p < k; ++p) acc += a[size_t(p) * m + i] * b[size_t(p) * n + j];
      c[size_t(i) * n + j] = acc;
    }
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float acc = 0.f;
      for (int p = 0; p < k; ++p) acc += a[size_t(i) * k + p] * b[size_t(j) * k + p];
      c[size_t(i) * n + j] = acc;
    }
}

void im2col3(const float* x, float* col, int c, int h, int w) {
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int kh = -1; kh <= 1; ++kh)
      for (int kw = -1; kw <= 1; ++kw) {
        const int row = ci * 9 + (kh + 1) * 3 + (kw + 1);
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const int sy = y + kh, sx = xx + kw;
            col[size_t(row) * hw + y * w + xx] =
                (sy < 0 || sy >= h || sx < 0 || sx >= w)
                    ? 0.f
                    : x[size_t(ci) * hw + sy * w + sx];
          }
      }
}

}  // namespace serial

}  // namespace istr::nn
