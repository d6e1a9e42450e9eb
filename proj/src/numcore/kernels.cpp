#include "wmnav/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wmnav::kernels {

namespace {

void transpose(int rows, int cols, const float* in, float* out) {
  constexpr int kBlock = 32;
  for (int i0 = 0; i0 < rows; i0 += kBlock)
    for (int j0 = 0; j0 < cols; j0 += kBlock) {
      const int i1 = std::min(rows, i0 + kBlock), j1 = std::min(cols, j0 + kBlock);
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j) out[static_cast<long>(j) * rows + i] = in[static_cast<long>(i) * cols + j];
    }
}

// Row-major C += A * B with A [M,K], B [K,N].
void gemm_nn(int M, int N, int K, const float* __restrict A, const float* __restrict B, float* __restrict C) {
  constexpr int kBlockK = 128;
  const long work = static_cast<long>(M) * N * K;
#pragma omp parallel for schedule(static) if (work > (1L << 18))
  for (int i = 0; i < M; ++i) {
    float* c = C + static_cast<long>(i) * N;
    const float* a = A + static_cast<long>(i) * K;
    for (int k0 = 0; k0 < K; k0 += kBlockK) {
      const int k1 = std::min(K, k0 + kBlockK);
      for (int k = k0; k < k1; ++k) {
        const float av = a[k];
        if (av == 0.0f) continue;
        const float* b = B + static_cast<long>(k) * N;
        for (int j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  }
}

}  // namespace

void gemm(int M, int N, int K, const float* A, bool trans_a, const float* B, bool trans_b, float* C,
          bool accumulate) {
  if (!accumulate) std::fill(C, C + static_cast<long>(M) * N, 0.0f);
  if (M == 0 || N == 0 || K == 0) return;
  thread_local std::vector<float> scratch_a, scratch_b;
  if (trans_a) {
    scratch_a.resize(static_cast<std::size_t>(M) * K);
    transpose(K, M, A, scratch_a.data());
    A = scratch_a.data();
  }
  if (trans_b) {
    scratch_b.resize(static_cast<std::size_t>(K) * N);
    transpose(N, K, B, scratch_b.data());
    B = scratch_b.data();
  }
  gemm_nn(M, N, K, A, B, C);
}

void gemm_reference(int M, int N, int K, const float* A, bool trans_a, const float* B, bool trans_b,
                    float* C, bool accumulate) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      float acc = accumulate ? C[static_cast<long>(i) * N + j] : 0.0f;
      for (int k = 0; k < K; ++k) {
        const float a = trans_a ? A[static_cast<long>(k) * M + i] : A[static_cast<long>(i) * K + k];
        const float b = trans_b ? B[static_cast<long>(j) * K + k] : B[static_cast<long>(k) * N + j];
        acc += a * b;
      }
      C[static_cast<long>(i) * N + j] = acc;
    }
}

void im2col(const ConvGeom& g, const float* image, float* cols) {
  const int oh = g.out_h(), ow = g.out_w();
  const long ncols = static_cast<long>(g.col_cols());
  const int kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static) if (ncols * g.col_rows() > (1L << 16))
  for (int row = 0; row < g.col_rows(); ++row) {
    const int c = row / kk, ki = (row % kk) / g.kernel, kj = row % g.kernel;
    float* out = cols + row * ncols;
    for (int n = 0; n < g.batch; ++n) {
      const float* src = image + (static_cast<long>(n) * g.channels + c) * g.height * g.width;
      for (int y = 0; y < oh; ++y) {
        const int iy = y * g.stride - g.pad + ki;
        float* dst = out + (static_cast<long>(n) * oh + y) * ow;
        if (iy < 0 || iy >= g.height) {
          std::fill(dst, dst + ow, 0.0f);
          continue;
        }
        const float* srow = src + static_cast<long>(iy) * g.width;
        for (int x = 0; x < ow; ++x) {
          const int ix = x * g.stride - g.pad + kj;
          dst[x] = (ix >= 0 && ix < g.width) ? srow[ix] : 0.0f;
        }
      }
    }
  }
}

void im2col_reference(const ConvGeom& g, const float* image, float* cols) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int c = 0; c < g.channels; ++c)
    for (int ki = 0; ki < g.kernel; ++ki)
      for (int kj = 0; kj < g.kernel; ++kj) {
        const long row = (static_cast<long>(c) * g.kernel + ki) * g.kernel + kj;
        for (int n = 0; n < g.batch; ++n)
          for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
              const int iy = y * g.stride - g.pad + ki, ix = x * g.stride - g.pad + kj;
              const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
              const long col = (static_cast<long>(n) * oh + y) * ow + x;
              cols[row * g.col_cols() + col] =
                  inside ? image[((static_cast<long>(n) * g.channels + c) * g.height + iy) * g.width + ix] : 0.0f;
            }
      }
}

void col2im(const ConvGeom& g, const float* cols, float* image) {
  const int oh = g.out_h(), ow = g.out_w();
  const long ncols = static_cast<long>(g.col_cols());
  const int kk = g.kernel * g.kernel;
  // Parallel over channels: every channel owns a disjoint slice of the image.
#pragma omp parallel for schedule(static) if (ncols * g.col_rows() > (1L << 16))
  for (int c = 0; c < g.channels; ++c) {
    for (int r = 0; r < kk; ++r) {
      const int ki = r / g.kernel, kj = r % g.kernel;
      const float* in = cols + (static_cast<long>(c) * kk + r) * ncols;
      for (int n = 0; n < g.batch; ++n) {
        float* dst = image + (static_cast<long>(n) * g.channels + c) * g.height * g.width;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          const float* src = in + (static_cast<long>(n) * oh + y) * ow;
          float* drow = dst + static_cast<long>(iy) * g.width;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) drow[ix] += src[x];
          }
        }
      }
    }
  }
}

void swap_leading(int a, int b, int s, const float* in, float* out) {
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      std::memcpy(out + (static_cast<long>(j) * a + i) * s, in + (static_cast<long>(i) * b + j) * s,
                  sizeof(float) * static_cast<std::size_t>(s));
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace wmnav::kernels
