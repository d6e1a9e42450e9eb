#pragma once

// Dense compute kernels. Each parallel kernel has a serial reference twin
// used by the tests and the benchmark; parallel variants split work over
// disjoint output rows so results do not depend on the thread count.

#include <span>

namespace wmnav::kernels {

/// C[M,N] = op(A) * op(B) (+ C if accumulate). op transposes when the flag is set.
/// A is stored M x K (or K x M when trans_a), B is K x N (or N x K when trans_b).
void gemm(int M, int N, int K, const float* A, bool trans_a, const float* B, bool trans_b, float* C,
          bool accumulate);

void gemm_reference(int M, int N, int K, const float* A, bool trans_a, const float* B, bool trans_b,
                    float* C, bool accumulate);

struct ConvGeom {
  int batch, channels, height, width;
  int kernel, stride, pad;
  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  int col_rows() const { return channels * kernel * kernel; }
  int col_cols() const { return batch * out_h() * out_w(); }
};

/// NCHW image batch -> columns [C*k*k, N*Ho*Wo].
void im2col(const ConvGeom& g, const float* image, float* cols);
void im2col_reference(const ConvGeom& g, const float* image, float* cols);

/// Adjoint of im2col: scatter-add columns back into an NCHW batch (image must be zeroed by caller).
void col2im(const ConvGeom& g, const float* cols, float* image);

/// [A, B, S] -> [B, A, S] block transpose; moves channel/batch axes around GEMM calls.
void swap_leading(int a, int b, int s, const float* in, float* out);

int max_threads();

}  // namespace wmnav::kernels
