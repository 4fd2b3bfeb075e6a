#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "xmodal/kernels.hpp"
#include "xmodal/rng.hpp"

using namespace xmodal;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn(); // warm-up
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  auto dt = std::chrono::steady_clock::now() - t0;
  return std::chrono::duration<double, std::milli>(dt).count() / reps;
}

std::vector<double> randn(int64_t n, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

void report(const char* name, double serial_ms, double omp_ms) {
  std::printf("%-18s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx\n", name,
              serial_ms, omp_ms, serial_ms / omp_ms);
}

} // namespace

int main() {
  Rng rng(7);
  const int reps = 5;

  {
    const int64_t m = 384, k = 384, n = 384;
    auto a = randn(m * k, rng), b = randn(k * n, rng);
    std::vector<double> c(static_cast<size_t>(m * n));
    report("matmul 384^3",
           time_ms([&] { kernels::matmul_serial(a.data(), b.data(), c.data(), m, k, n); }, reps),
           time_ms([&] { kernels::matmul_omp(a.data(), b.data(), c.data(), m, k, n); }, reps));
  }

  {
    const int64_t batch = 32, cin = 3, h = 64, w = 64, cout = 32, kk = 4, stride = 4;
    auto in = randn(batch * cin * h * w, rng);
    auto wgt = randn(cout * cin * kk * kk, rng);
    auto bias = randn(cout, rng);
    int64_t oh = kernels::conv_out_extent(h, kk, stride, 0, 0);
    int64_t ow = kernels::conv_out_extent(w, kk, stride, 0, 0);
    std::vector<double> out(static_cast<size_t>(batch * cout * oh * ow));
    report("conv2d 32x3x64^2",
           time_ms([&] {
             kernels::conv2d_serial(in.data(), wgt.data(), bias.data(), out.data(),
                                    batch, cin, h, w, cout, kk, kk, stride, 0);
           }, reps),
           time_ms([&] {
             kernels::conv2d_omp(in.data(), wgt.data(), bias.data(), out.data(),
                                 batch, cin, h, w, cout, kk, kk, stride, 0);
           }, reps));
  }

  {
    const int64_t batch = 64, cin = 4, len = 4096, cout = 32, kk = 8, stride = 4;
    auto in = randn(batch * cin * len, rng);
    auto wgt = randn(cout * cin * kk, rng);
    auto bias = randn(cout, rng);
    int64_t olen = kernels::conv_out_extent(len, kk, stride, 0, 0);
    std::vector<double> out(static_cast<size_t>(batch * cout * olen));
    report("conv1d 64x4x4096",
           time_ms([&] {
             kernels::conv1d_serial(in.data(), wgt.data(), bias.data(), out.data(),
                                    batch, cin, len, cout, kk, stride, 0, 0);
           }, reps),
           time_ms([&] {
             kernels::conv1d_omp(in.data(), wgt.data(), bias.data(), out.data(),
                                 batch, cin, len, cout, kk, stride, 0, 0);
           }, reps));
  }

  {
    const int64_t n = 1024, m = 1024, d = 64;
    auto a = randn(n * d, rng), b = randn(m * d, rng);
    std::vector<double> out(static_cast<size_t>(n * m));
    report("sqdist 1024^2x64",
           time_ms([&] { kernels::pairwise_sqdist_serial(a.data(), b.data(), out.data(), n, m, d); }, reps),
           time_ms([&] { kernels::pairwise_sqdist_omp(a.data(), b.data(), out.data(), n, m, d); }, reps));
  }
  return 0;
}
