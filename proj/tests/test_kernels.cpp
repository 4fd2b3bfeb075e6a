#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <vector>

#include "xmodal/kernels.hpp"
#include "xmodal/rng.hpp"

#include "test_util.hpp"

using namespace xmodal;
using testutil::randn_vec;

namespace {

void naive_matmul(const double* a, const double* b, double* c, int64_t m,
                  int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
}

void naive_conv1d(const std::vector<double>& in, const std::vector<double>& w,
                  const std::vector<double>& bias, std::vector<double>& out,
                  int64_t batch, int64_t cin, int64_t len, int64_t cout,
                  int64_t kernel, int64_t stride, int64_t pad_l, int64_t pad_r) {
  int64_t olen = kernels::conv_out_extent(len, kernel, stride, pad_l, pad_r);
  out.assign(static_cast<size_t>(batch * cout * olen), 0.0);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t o = 0; o < olen; ++o) {
        double acc = bias.empty() ? 0.0 : bias[co];
        for (int64_t ci = 0; ci < cin; ++ci)
          for (int64_t kk = 0; kk < kernel; ++kk) {
            int64_t pos = o * stride + kk - pad_l;
            if (pos < 0 || pos >= len) continue;
            acc += in[(b * cin + ci) * len + pos] *
                   w[(co * cin + ci) * kernel + kk];
          }
        out[(b * cout + co) * olen + o] = acc;
      }
}

} // namespace

TEST_CASE("matmul identity and hand cases") {
  double I[4] = {1, 0, 0, 1}, A[4] = {1, 2, 3, 4}, C[4];
  kernels::matmul_serial(I, A, C, 2, 2, 2);
  for (int i = 0; i < 4; ++i) CHECK(C[i] == A[i]);

  double a[2] = {1, 2}, b[2] = {3, 4}, c[1];
  kernels::matmul_serial(a, b, c, 1, 2, 1);
  CHECK(c[0] == 11.0);
}

TEST_CASE("matmul matches naive oracle and omp is bit-identical") {
  Rng rng(1);
  for (auto [m, k, n] : {std::tuple<int64_t, int64_t, int64_t>{3, 5, 4},
                         {1, 7, 1},
                         {8, 8, 8},
                         {13, 2, 9}}) {
    auto a = randn_vec(m * k, rng), b = randn_vec(k * n, rng);
    std::vector<double> c_ser(m * n), c_omp(m * n), c_ref(m * n);
    kernels::matmul_serial(a.data(), b.data(), c_ser.data(), m, k, n);
    kernels::matmul_omp(a.data(), b.data(), c_omp.data(), m, k, n);
    naive_matmul(a.data(), b.data(), c_ref.data(), m, k, n);
    for (int64_t i = 0; i < m * n; ++i) {
      CHECK(c_ser[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));
      CHECK(c_ser[i] == c_omp[i]); // bit-identical
    }
  }
}

#ifdef _OPENMP
TEST_CASE("results do not depend on thread count") {
  Rng rng(2);
  const int64_t m = 17, k = 23, n = 11;
  auto a = randn_vec(m * k, rng), b = randn_vec(k * n, rng);
  std::vector<double> ref(m * n), got(m * n);
  int save = omp_get_max_threads();
  omp_set_num_threads(1);
  kernels::matmul_omp(a.data(), b.data(), ref.data(), m, k, n);
  for (int t : {2, 3, 4}) {
    omp_set_num_threads(t);
    kernels::matmul_omp(a.data(), b.data(), got.data(), m, k, n);
    CHECK(got == ref);
  }
  omp_set_num_threads(save);
}
#endif

TEST_CASE("conv1d hand cases") {
  std::vector<double> in = {1, 2, 3, 4};
  std::vector<double> w1 = {1.0};
  std::vector<double> out;
  naive_conv1d(in, w1, {}, out, 1, 1, 4, 1, 1, 1, 0, 0);
  CHECK(out == std::vector<double>{1, 2, 3, 4});
  std::vector<double> got(4);
  kernels::conv1d_serial(in.data(), w1.data(), nullptr, got.data(), 1, 1, 4, 1,
                         1, 1, 0, 0);
  CHECK(got == std::vector<double>{1, 2, 3, 4});

  std::vector<double> w2 = {1.0, 1.0};
  got.assign(2, 0.0);
  kernels::conv1d_serial(in.data(), w2.data(), nullptr, got.data(), 1, 1, 4, 1,
                         2, 2, 0, 0);
  CHECK(got == std::vector<double>{3, 7});
}

TEST_CASE("conv2d hand case: 2x2 ones, kernel 2x2 ones, stride 2") {
  std::vector<double> in(4, 1.0), w(4, 1.0), out(1);
  kernels::conv2d_serial(in.data(), w.data(), nullptr, out.data(), 1, 1, 2, 2,
                         1, 2, 2, 2, 0);
  CHECK(out[0] == 4.0);
}

TEST_CASE("conv1d matches naive oracle, serial == omp") {
  Rng rng(3);
  for (auto [cin, len, cout, kk, stride, pl, pr] :
       {std::tuple<int64_t, int64_t, int64_t, int64_t, int64_t, int64_t,
                   int64_t>{2, 12, 3, 3, 2, 0, 0},
        {1, 9, 2, 4, 4, 0, 3},
        {3, 7, 1, 2, 1, 1, 1}}) {
    const int64_t batch = 2;
    auto in = randn_vec(batch * cin * len, rng);
    auto w = randn_vec(cout * cin * kk, rng);
    auto bias = randn_vec(cout, rng);
    std::vector<double> ref;
    naive_conv1d(in, w, bias, ref, batch, cin, len, cout, kk, stride, pl, pr);
    std::vector<double> ser(ref.size()), omp(ref.size());
    kernels::conv1d_serial(in.data(), w.data(), bias.data(), ser.data(), batch,
                           cin, len, cout, kk, stride, pl, pr);
    kernels::conv1d_omp(in.data(), w.data(), bias.data(), omp.data(), batch,
                        cin, len, cout, kk, stride, pl, pr);
    for (size_t i = 0; i < ref.size(); ++i) {
      CHECK(ser[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      CHECK(ser[i] == omp[i]);
    }
  }
}

TEST_CASE("conv2d serial == omp on random instance") {
  Rng rng(4);
  const int64_t batch = 2, cin = 3, h = 8, w = 8, cout = 4, kk = 4, stride = 4;
  auto in = randn_vec(batch * cin * h * w, rng);
  auto wgt = randn_vec(cout * cin * kk * kk, rng);
  auto bias = randn_vec(cout, rng);
  int64_t oh = kernels::conv_out_extent(h, kk, stride, 0, 0);
  std::vector<double> ser(batch * cout * oh * oh), par(ser.size());
  kernels::conv2d_serial(in.data(), wgt.data(), bias.data(), ser.data(), batch,
                         cin, h, w, cout, kk, kk, stride, 0);
  kernels::conv2d_omp(in.data(), wgt.data(), bias.data(), par.data(), batch,
                      cin, h, w, cout, kk, kk, stride, 0);
  CHECK(ser == par);
}

TEST_CASE("conv output extents obey the floor formula") {
  for (int64_t in = 1; in <= 12; ++in)
    for (int64_t k = 1; k <= 5; ++k)
      for (int64_t s = 1; s <= 3; ++s)
        for (int64_t p = 0; p <= 2; ++p) {
          if (in + 2 * p < k) continue;
          CHECK(kernels::conv_out_extent(in, k, s, p, p) ==
                (in + 2 * p - k) / s + 1);
        }
}

TEST_CASE("pairwise_sqdist matches naive oracle, serial == omp") {
  Rng rng(5);
  const int64_t n = 7, m = 5, d = 4;
  auto a = randn_vec(n * d, rng), b = randn_vec(m * d, rng);
  std::vector<double> ser(n * m), par(n * m);
  kernels::pairwise_sqdist_serial(a.data(), b.data(), ser.data(), n, m, d);
  kernels::pairwise_sqdist_omp(a.data(), b.data(), par.data(), n, m, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int64_t t = 0; t < d; ++t) {
        double diff = a[i * d + t] - b[j * d + t];
        acc += diff * diff;
      }
      CHECK(ser[i * m + j] == doctest::Approx(acc).epsilon(1e-12));
      CHECK(ser[i * m + j] == par[i * m + j]);
    }
}
