#include "xmodal/kernels.hpp"

#include <cstring>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace xmodal::kernels {

int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride,
                        int64_t pad_before, int64_t pad_after) {
  int64_t padded = in + pad_before + pad_after;
  if (kernel > padded) {
    throw std::invalid_argument("conv kernel larger than padded input");
  }
  return (padded - kernel) / stride + 1;
}

namespace {

inline void matmul_row(const double* a, const double* b, double* c,
                       int64_t i, int64_t k, int64_t n) {
  double* ci = c + i * n;
  std::memset(ci, 0, sizeof(double) * static_cast<size_t>(n));
  const double* ai = a + i * k;
  for (int64_t p = 0; p < k; ++p) {
    double av = ai[p];
    const double* bp = b + p * n;
    for (int64_t j = 0; j < n; ++j) {
      ci[j] += av * bp[j];
    }
  }
}

inline double conv1d_one(const double* in, const double* w, int64_t cin,
                         int64_t len, int64_t kernel, int64_t stride,
                         int64_t pad_l, int64_t o) {
  double acc = 0.0;
  int64_t start = o * stride - pad_l;
  for (int64_t c = 0; c < cin; ++c) {
    const double* ic = in + c * len;
    const double* wc = w + c * kernel;
    for (int64_t t = 0; t < kernel; ++t) {
      int64_t pos = start + t;
      if (pos >= 0 && pos < len) acc += ic[pos] * wc[t];
    }
  }
  return acc;
}

inline double conv2d_one(const double* in, const double* wgt, int64_t cin,
                         int64_t h, int64_t w, int64_t kh, int64_t kw,
                         int64_t stride, int64_t pad, int64_t oy, int64_t ox) {
  double acc = 0.0;
  int64_t sy = oy * stride - pad;
  int64_t sx = ox * stride - pad;
  for (int64_t c = 0; c < cin; ++c) {
    const double* ic = in + c * h * w;
    const double* wc = wgt + c * kh * kw;
    for (int64_t ky = 0; ky < kh; ++ky) {
      int64_t y = sy + ky;
      if (y < 0 || y >= h) continue;
      for (int64_t kx = 0; kx < kw; ++kx) {
        int64_t x = sx + kx;
        if (x < 0 || x >= w) continue;
        acc += ic[y * w + x] * wc[ky * kw + kx];
      }
    }
  }
  return acc;
}

inline double sqdist_one(const double* ai, const double* bj, int64_t d) {
  double acc = 0.0;
  for (int64_t t = 0; t < d; ++t) {
    double diff = ai[t] - bj[t];
    acc += diff * diff;
  }
  return acc;
}

} // namespace

void matmul_serial(const double* a, const double* b, double* c,
                   int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul_omp(const double* a, const double* b, double* c,
                int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
  for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul(const double* a, const double* b, double* c,
            int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
  matmul_omp(a, b, c, m, k, n);
#else
  matmul_serial(a, b, c, m, k, n);
#endif
}

void conv1d_serial(const double* in, const double* w, const double* bias,
                   double* out, int64_t batch, int64_t cin, int64_t len,
                   int64_t cout, int64_t kernel, int64_t stride,
                   int64_t pad_l, int64_t pad_r) {
  int64_t olen = conv_out_extent(len, kernel, stride, pad_l, pad_r);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t oc = 0; oc < cout; ++oc) {
      double bs = bias ? bias[oc] : 0.0;
      double* op = out + (b * cout + oc) * olen;
      for (int64_t o = 0; o < olen; ++o) {
        op[o] = bs + conv1d_one(in + b * cin * len, w + oc * cin * kernel,
                                cin, len, kernel, stride, pad_l, o);
      }
    }
  }
}

void conv1d_omp(const double* in, const double* w, const double* bias,
                double* out, int64_t batch, int64_t cin, int64_t len,
                int64_t cout, int64_t kernel, int64_t stride,
                int64_t pad_l, int64_t pad_r) {
  int64_t olen = conv_out_extent(len, kernel, stride, pad_l, pad_r);
#pragma omp parallel for collapse(2) schedule(static) if (batch * cout > 1)
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t oc = 0; oc < cout; ++oc) {
      double bs = bias ? bias[oc] : 0.0;
      double* op = out + (b * cout + oc) * olen;
      for (int64_t o = 0; o < olen; ++o) {
        op[o] = bs + conv1d_one(in + b * cin * len, w + oc * cin * kernel,
                                cin, len, kernel, stride, pad_l, o);
      }
    }
  }
}

void conv1d(const double* in, const double* w, const double* bias, double* out,
            int64_t batch, int64_t cin, int64_t len, int64_t cout,
            int64_t kernel, int64_t stride, int64_t pad_l, int64_t pad_r) {
#ifdef _OPENMP
  conv1d_omp(in, w, bias, out, batch, cin, len, cout, kernel, stride, pad_l, pad_r);
#else
  conv1d_serial(in, w, bias, out, batch, cin, len, cout, kernel, stride, pad_l, pad_r);
#endif
}

void conv2d_serial(const double* in, const double* wgt, const double* bias,
                   double* out, int64_t batch, int64_t cin, int64_t h, int64_t w,
                   int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                   int64_t pad) {
  int64_t oh = conv_out_extent(h, kh, stride, pad, pad);
  int64_t ow = conv_out_extent(w, kw, stride, pad, pad);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t oc = 0; oc < cout; ++oc) {
      double bs = bias ? bias[oc] : 0.0;
      double* op = out + (b * cout + oc) * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          op[oy * ow + ox] =
              bs + conv2d_one(in + b * cin * h * w, wgt + oc * cin * kh * kw,
                              cin, h, w, kh, kw, stride, pad, oy, ox);
        }
      }
    }
  }
}

void conv2d_omp(const double* in, const double* wgt, const double* bias,
                double* out, int64_t batch, int64_t cin, int64_t h, int64_t w,
                int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                int64_t pad) {
  int64_t oh = conv_out_extent(h, kh, stride, pad, pad);
  int64_t ow = conv_out_extent(w, kw, stride, pad, pad);
#pragma omp parallel for collapse(2) schedule(static) if (batch * cout > 1)
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t oc = 0; oc < cout; ++oc) {
      double bs = bias ? bias[oc] : 0.0;
      double* op = out + (b * cout + oc) * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          op[oy * ow + ox] =
              bs + conv2d_one(in + b * cin * h * w, wgt + oc * cin * kh * kw,
                              cin, h, w, kh, kw, stride, pad, oy, ox);
        }
      }
    }
  }
}

void conv2d(const double* in, const double* wgt, const double* bias, double* out,
            int64_t batch, int64_t cin, int64_t h, int64_t w, int64_t cout,
            int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
#ifdef _OPENMP
  conv2d_omp(in, wgt, bias, out, batch, cin, h, w, cout, kh, kw, stride, pad);
#else
  conv2d_serial(in, wgt, bias, out, batch, cin, h, w, cout, kh, kw, stride, pad);
#endif
}

void pairwise_sqdist_serial(const double* a, const double* b, double* out,
                            int64_t n, int64_t m, int64_t d) {
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      out[i * m + j] = sqdist_one(a + i * d, b + j * d, d);
    }
  }
}

void pairwise_sqdist_omp(const double* a, const double* b, double* out,
                         int64_t n, int64_t m, int64_t d) {
#pragma omp parallel for schedule(static) if (n * m * d > 16384)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      out[i * m + j] = sqdist_one(a + i * d, b + j * d, d);
    }
  }
}

void pairwise_sqdist(const double* a, const double* b, double* out,
                     int64_t n, int64_t m, int64_t d) {
#ifdef _OPENMP
  pairwise_sqdist_omp(a, b, out, n, m, d);
#else
  pairwise_sqdist_serial(a, b, out, n, m, d);
#endif
}

} // namespace xmodal::kernels
