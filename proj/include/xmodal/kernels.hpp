#pragma once

#include <cstdint>
#include <vector>

// Dense compute kernels. Each kernel has a serial reference implementation
// (ground truth for tests) and an OpenMP-parallel variant. The parallel
// variants split work over independent output elements only, so results are
// bit-identical to the serial path for any thread count.

namespace xmodal::kernels {

// C[m x n] = A[m x k] * B[k x n], row-major.
void matmul_serial(const double* a, const double* b, double* c,
                   int64_t m, int64_t k, int64_t n);
void matmul_omp(const double* a, const double* b, double* c,
                int64_t m, int64_t k, int64_t n);

// Dispatches to the OpenMP variant when compiled with OpenMP.
void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n);

// Cross-correlation, 1 spatial dim.
// in:  [batch x cin x len], w: [cout x cin x kernel], bias: [cout] or null.
// out: [batch x cout x olen], olen = (len + pad_l + pad_r - kernel)/stride + 1.
void conv1d_serial(const double* in, const double* w, const double* bias,
                   double* out, int64_t batch, int64_t cin, int64_t len,
                   int64_t cout, int64_t kernel, int64_t stride,
                   int64_t pad_l, int64_t pad_r);
void conv1d_omp(const double* in, const double* w, const double* bias,
                double* out, int64_t batch, int64_t cin, int64_t len,
                int64_t cout, int64_t kernel, int64_t stride,
                int64_t pad_l, int64_t pad_r);
void conv1d(const double* in, const double* w, const double* bias,
            double* out, int64_t batch, int64_t cin, int64_t len,
            int64_t cout, int64_t kernel, int64_t stride,
            int64_t pad_l, int64_t pad_r);

// Cross-correlation, 2 spatial dims, square kernel/stride per-dim.
// in: [batch x cin x h x w], wgt: [cout x cin x kh x kw].
void conv2d_serial(const double* in, const double* wgt, const double* bias,
                   double* out, int64_t batch, int64_t cin, int64_t h, int64_t w,
                   int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                   int64_t pad);
void conv2d_omp(const double* in, const double* wgt, const double* bias,
                double* out, int64_t batch, int64_t cin, int64_t h, int64_t w,
                int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                int64_t pad);
void conv2d(const double* in, const double* wgt, const double* bias,
            double* out, int64_t batch, int64_t cin, int64_t h, int64_t w,
            int64_t cout, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad);

// Squared euclidean distances: D[i,j] = ||A_i - B_j||^2.
// a: [n x d], b: [m x d], out: [n x m].
void pairwise_sqdist_serial(const double* a, const double* b, double* out,
                            int64_t n, int64_t m, int64_t d);
void pairwise_sqdist_omp(const double* a, const double* b, double* out,
                         int64_t n, int64_t m, int64_t d);
void pairwise_sqdist(const double* a, const double* b, double* out,
                     int64_t n, int64_t m, int64_t d);

int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride,
                        int64_t pad_before, int64_t pad_after);

} // namespace xmodal::kernels
