#include "xmodal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "xmodal/kernels.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

namespace {

bool g_grad_enabled = true;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<double> transposed(const std::vector<double>& a, int64_t rows,
                               int64_t cols) {
  std::vector<double> t(a.size());
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

} // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(impl->numel()), value);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  require(shape_numel(shape) == static_cast<int64_t>(data.size()),
          "tensor data length does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

double Tensor::item() const {
  require(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::check_finite(const std::string& what) const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite value in " + what);
    }
  }
}

namespace detail {

Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  auto out = Tensor::from(std::move(shape), std::move(data));
  bool need_grad = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p.requires_grad()) need_grad = true;
  }
  if (need_grad) {
    out.set_requires_grad(true);
    auto impl = out.impl();
    for (const auto& p : parents) impl->parents.push_back(p.impl());
    impl->backward_fn = std::move(backward_fn);
  }
  return out;
}

} // namespace detail

using detail::make_node;

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto* ai = a.impl().get();
  auto* bi = b.impl().get();
  return make_node(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto* ai = a.impl().get();
  auto* bi = b.impl().get();
  return make_node(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        ai->grad[i] += self.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        bi->grad[i] += self.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto* ai = a.impl().get();
  return make_node(a.shape(), std::move(out), {a}, [ai, c](TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * c;
  });
}

Tensor add_broadcast0(const Tensor& x, const Tensor& t) {
  require(x.rank() >= 2, "add_broadcast0: x must have a batch axis");
  Shape rest(x.shape().begin() + 1, x.shape().end());
  require(rest == t.shape(), "add_broadcast0: trailing shape mismatch " +
                                 shape_str(rest) + " vs " + shape_str(t.shape()));
  int64_t batch = x.dim(0);
  int64_t inner = t.numel();
  std::vector<double> out(x.data().size());
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < inner; ++i)
      out[b * inner + i] = x.data()[b * inner + i] + t.data()[i];
  auto* xi = x.impl().get();
  auto* ti = t.impl().get();
  return make_node(x.shape(), std::move(out), {x, t},
                   [xi, ti, batch, inner](TensorImpl& self) {
                     if (xi->requires_grad) {
                       xi->ensure_grad();
                       for (size_t i = 0; i < self.grad.size(); ++i)
                         xi->grad[i] += self.grad[i];
                     }
                     if (ti->requires_grad) {
                       ti->ensure_grad();
                       for (int64_t b = 0; b < batch; ++b)
                         for (int64_t i = 0; i < inner; ++i)
                           ti->grad[i] += self.grad[b * inner + i];
                     }
                   });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors, got " +
                                              shape_str(a.shape()) + " and " +
                                              shape_str(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul: inner extents differ, " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto* ai = a.impl().get();
  auto* bi = b.impl().get();
  return make_node({m, n}, std::move(out), {a, b},
                   [ai, bi, m, k, n](TensorImpl& self) {
                     if (ai->requires_grad) {
                       ai->ensure_grad();
                       // dA += G * B^T
                       auto bt = transposed(bi->data, k, n);
                       std::vector<double> da(static_cast<size_t>(m * k));
                       kernels::matmul(self.grad.data(), bt.data(), da.data(), m, n, k);
                       for (size_t i = 0; i < da.size(); ++i) ai->grad[i] += da[i];
                     }
                     if (bi->requires_grad) {
                       bi->ensure_grad();
                       // dB += A^T * G
                       auto at = transposed(ai->data, m, k);
                       std::vector<double> db(static_cast<size_t>(k * n));
                       kernels::matmul(at.data(), self.grad.data(), db.data(), k, m, n);
                       for (size_t i = 0; i < db.size(); ++i) bi->grad[i] += db[i];
                     }
                   });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
              a.dim(2) == b.dim(1),
          "bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  int64_t N = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(static_cast<size_t>(N * m * n));
  for (int64_t s = 0; s < N; ++s) {
    kernels::matmul(a.data().data() + s * m * k, b.data().data() + s * k * n,
                    out.data() + s * m * n, m, k, n);
  }
  auto* ai = a.impl().get();
  auto* bi = b.impl().get();
  return make_node({N, m, n}, std::move(out), {a, b},
                   [ai, bi, N, m, k, n](TensorImpl& self) {
                     for (int64_t s = 0; s < N; ++s) {
                       const double* g = self.grad.data() + s * m * n;
                       if (ai->requires_grad) {
                         ai->ensure_grad();
                         auto bt = transposed(
                             {bi->data.begin() + s * k * n,
                              bi->data.begin() + (s + 1) * k * n},
                             k, n);
                         std::vector<double> da(static_cast<size_t>(m * k));
                         kernels::matmul(g, bt.data(), da.data(), m, n, k);
                         double* dst = ai->grad.data() + s * m * k;
                         for (int64_t i = 0; i < m * k; ++i) dst[i] += da[i];
                       }
                       if (bi->requires_grad) {
                         bi->ensure_grad();
                         auto at = transposed(
                             {ai->data.begin() + s * m * k,
                              ai->data.begin() + (s + 1) * m * k},
                             m, k);
                         std::vector<double> db(static_cast<size_t>(k * n));
                         kernels::matmul(at.data(), g, db.data(), k, m, n);
                         double* dst = bi->grad.data() + s * k * n;
                         for (int64_t i = 0; i < k * n; ++i) dst[i] += db[i];
                       }
                     }
                   });
}

namespace {

std::vector<int64_t> row_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

} // namespace

Tensor permute(const Tensor& a, const std::vector<size_t>& axes) {
  require(axes.size() == a.rank(), "permute: axes rank mismatch");
  Shape out_shape(a.rank());
  for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = a.dim(axes[i]);
  auto in_st = row_strides(a.shape());
  auto out_st = row_strides(out_shape);
  int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  size_t r = a.rank();
  // Maps a flat output index to the source flat index.
  auto src_index = [out_st, out_shape, in_st, axes, r](int64_t oi) {
    int64_t si = 0;
    for (size_t ax = 0; ax < r; ++ax) {
      int64_t coord = (oi / out_st[ax]) % out_shape[ax];
      si += coord * in_st[axes[ax]];
    }
    return si;
  };
  for (int64_t oi = 0; oi < n; ++oi) out[oi] = a.data()[src_index(oi)];
  auto* ai = a.impl().get();
  return make_node(out_shape, std::move(out), {a},
                   [ai, src_index, n](TensorImpl& self) {
                     if (!ai->requires_grad) return;
                     ai->ensure_grad();
                     for (int64_t oi = 0; oi < n; ++oi)
                       ai->grad[src_index(oi)] += self.grad[oi];
                   });
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  require(shape_numel(new_shape) == a.numel(),
          "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
              shape_str(new_shape));
  auto* ai = a.impl().get();
  return make_node(std::move(new_shape), a.data(), {a}, [ai](TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
  });
}

// ---- nonlinearities ----

Tensor softmax_last(const Tensor& a) {
  int64_t d = a.shape().back();
  int64_t rows = a.numel() / d;
  std::vector<double> out(a.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * d;
    double* y = out.data() + r * d;
    double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    for (int64_t i = 0; i < d; ++i) y[i] /= z;
  }
  auto* ai = a.impl().get();
  return make_node(a.shape(), std::move(out), {a},
                   [ai, rows, d](TensorImpl& self) {
                     if (!ai->requires_grad) return;
                     ai->ensure_grad();
                     for (int64_t r = 0; r < rows; ++r) {
                       const double* s = self.data.data() + r * d;
                       const double* g = self.grad.data() + r * d;
                       double dot = 0.0;
                       for (int64_t i = 0; i < d; ++i) dot += g[i] * s[i];
                       double* dx = ai->grad.data() + r * d;
                       for (int64_t i = 0; i < d; ++i)
                         dx[i] += s[i] * (g[i] - dot);
                     }
                   });
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654; // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  auto* ai = a.impl().get();
  return make_node(a.shape(), std::move(out), {a}, [ai](TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double x = ai->data[i];
      double u = kC * (x + kA * x * x * x);
      double t = std::tanh(u);
      double du = kC * (1.0 + 3.0 * kA * x * x);
      double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      ai->grad[i] += self.grad[i] * d;
    }
  });
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1)");
  if (rate == 0.0) return a;
  double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(a.data().size());
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    out[i] = a.data()[i] * (*mask)[i];
  }
  auto* ai = a.impl().get();
  return make_node(a.shape(), std::move(out), {a}, [ai, mask](TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      ai->grad[i] += self.grad[i] * (*mask)[i];
  });
}

// ---- convolution ----

namespace {

Tensor conv1d_node(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   int64_t stride, int64_t pad_l, int64_t pad_r) {
  int64_t batch = input.dim(0), cin = input.dim(1), len = input.dim(2);
  int64_t cout = weight.dim(0), kernel = weight.dim(2);
  require(weight.dim(1) == cin, "conv: channel mismatch " +
                                    shape_str(input.shape()) + " vs " +
                                    shape_str(weight.shape()));
  int64_t olen = kernels::conv_out_extent(len, kernel, stride, pad_l, pad_r);
  std::vector<double> out(static_cast<size_t>(batch * cout * olen));
  kernels::conv1d(input.data().data(), weight.data().data(), bias.data().data(),
                  out.data(), batch, cin, len, cout, kernel, stride, pad_l, pad_r);
  auto* ii = input.impl().get();
  auto* wi = weight.impl().get();
  auto* bi = bias.impl().get();
  return make_node(
      {batch, cout, olen}, std::move(out), {input, weight, bias},
      [=](TensorImpl& self) {
        if (ii->requires_grad) ii->ensure_grad();
        if (wi->requires_grad) wi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t oc = 0; oc < cout; ++oc) {
            for (int64_t o = 0; o < olen; ++o) {
              double g = self.grad[(b * cout + oc) * olen + o];
              if (g == 0.0) continue;
              if (bi->requires_grad) bi->grad[oc] += g;
              int64_t start = o * stride - pad_l;
              for (int64_t c = 0; c < cin; ++c) {
                for (int64_t t = 0; t < kernel; ++t) {
                  int64_t pos = start + t;
                  if (pos < 0 || pos >= len) continue;
                  int64_t in_idx = (b * cin + c) * len + pos;
                  int64_t w_idx = (oc * cin + c) * kernel + t;
                  if (ii->requires_grad) ii->grad[in_idx] += g * wi->data[w_idx];
                  if (wi->requires_grad) wi->grad[w_idx] += g * ii->data[in_idx];
                }
              }
            }
          }
        }
      });
}

Tensor conv2d_node(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   int64_t stride, int64_t pad) {
  int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2),
          w = input.dim(3);
  int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(1) == cin, "conv: channel mismatch " +
                                    shape_str(input.shape()) + " vs " +
                                    shape_str(weight.shape()));
  int64_t oh = kernels::conv_out_extent(h, kh, stride, pad, pad);
  int64_t ow = kernels::conv_out_extent(w, kw, stride, pad, pad);
  std::vector<double> out(static_cast<size_t>(batch * cout * oh * ow));
  kernels::conv2d(input.data().data(), weight.data().data(), bias.data().data(),
                  out.data(), batch, cin, h, w, cout, kh, kw, stride, pad);
  auto* ii = input.impl().get();
  auto* wi = weight.impl().get();
  auto* bi = bias.impl().get();
  return make_node(
      {batch, cout, oh, ow}, std::move(out), {input, weight, bias},
      [=](TensorImpl& self) {
        if (ii->requires_grad) ii->ensure_grad();
        if (wi->requires_grad) wi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t oc = 0; oc < cout; ++oc) {
            for (int64_t oy = 0; oy < oh; ++oy) {
              for (int64_t ox = 0; ox < ow; ++ox) {
                double g = self.grad[((b * cout + oc) * oh + oy) * ow + ox];
                if (g == 0.0) continue;
                if (bi->requires_grad) bi->grad[oc] += g;
                int64_t sy = oy * stride - pad;
                int64_t sx = ox * stride - pad;
                for (int64_t c = 0; c < cin; ++c) {
                  for (int64_t ky = 0; ky < kh; ++ky) {
                    int64_t y = sy + ky;
                    if (y < 0 || y >= h) continue;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                      int64_t x = sx + kx;
                      if (x < 0 || x >= w) continue;
                      int64_t in_idx = ((b * cin + c) * h + y) * w + x;
                      int64_t w_idx = ((oc * cin + c) * kh + ky) * kw + kx;
                      if (ii->requires_grad)
                        ii->grad[in_idx] += g * wi->data[w_idx];
                      if (wi->requires_grad)
                        wi->grad[w_idx] += g * ii->data[in_idx];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

} // namespace

Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias,
            int64_t stride, int64_t pad_before, int64_t pad_after) {
  if (input.rank() == 3) {
    return conv1d_node(input, weight, bias, stride, pad_before, pad_after);
  }
  if (input.rank() == 4) {
    require(pad_before == pad_after, "2D conv uses symmetric padding");
    return conv2d_node(input, weight, bias, stride, pad_before);
  }
  throw std::invalid_argument("conv: unsupported spatial rank for input " +
                              shape_str(input.shape()));
}

// ---- layer norm ----

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps) {
  int64_t d = x.shape().back();
  require(gain.numel() == d && shift.numel() == d,
          "layer_norm: gain/shift must have " + std::to_string(d) + " entries");
  require(eps > 0.0, "layer_norm: eps must be positive");
  int64_t rows = x.numel() / d;
  std::vector<double> out(x.data().size());
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= d;
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int64_t i = 0; i < d; ++i) {
      double xh = (xr[i] - mu) * is;
      (*xhat)[r * d + i] = xh;
      out[r * d + i] = gain.data()[i] * xh + shift.data()[i];
    }
  }
  auto* xi = x.impl().get();
  auto* gi = gain.impl().get();
  auto* si = shift.impl().get();
  return make_node(
      x.shape(), std::move(out), {x, gain, shift},
      [xi, gi, si, xhat, inv_std, rows, d](TensorImpl& self) {
        if (xi->requires_grad) xi->ensure_grad();
        if (gi->requires_grad) gi->ensure_grad();
        if (si->requires_grad) si->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * d;
          const double* xh = xhat->data() + r * d;
          double is = (*inv_std)[r];
          if (gi->requires_grad || si->requires_grad) {
            for (int64_t i = 0; i < d; ++i) {
              if (gi->requires_grad) gi->grad[i] += g[i] * xh[i];
              if (si->requires_grad) si->grad[i] += g[i];
            }
          }
          if (xi->requires_grad) {
            // dxhat = g * gain; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            double m1 = 0.0, m2 = 0.0;
            for (int64_t i = 0; i < d; ++i) {
              double dxh = g[i] * gi->data[i];
              m1 += dxh;
              m2 += dxh * xh[i];
            }
            m1 /= d;
            m2 /= d;
            double* dx = xi->grad.data() + r * d;
            for (int64_t i = 0; i < d; ++i) {
              double dxh = g[i] * gi->data[i];
              dx[i] += is * (dxh - m1 - xh[i] * m2);
            }
          }
        }
      });
}

// ---- lookup / gather ----

Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
  require(table.rank() == 2, "embedding table must be rank 2");
  int64_t V = table.dim(0), H = table.dim(1);
  int64_t n = static_cast<int64_t>(ids.size());
  std::vector<double> out(static_cast<size_t>(n * H));
  for (int64_t i = 0; i < n; ++i) {
    require(ids[i] >= 0 && ids[i] < V, "embedding id out of range");
    std::memcpy(out.data() + i * H, table.data().data() + ids[i] * H,
                sizeof(double) * static_cast<size_t>(H));
  }
  auto* ti = table.impl().get();
  auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
  return make_node({n, H}, std::move(out), {table},
                   [ti, ids_copy, H](TensorImpl& self) {
                     if (!ti->requires_grad) return;
                     ti->ensure_grad();
                     for (size_t i = 0; i < ids_copy->size(); ++i) {
                       double* dst = ti->grad.data() + (*ids_copy)[i] * H;
                       const double* g = self.grad.data() + i * H;
                       for (int64_t j = 0; j < H; ++j) dst[j] += g[j];
                     }
                   });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  require(x.rank() == 2, "gather_rows expects a matrix");
  int64_t n = x.dim(0), d = x.dim(1);
  int64_t k = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(k * d));
  for (int64_t i = 0; i < k; ++i) {
    require(idx[i] >= 0 && idx[i] < n, "gather_rows index out of range");
    std::memcpy(out.data() + i * d, x.data().data() + idx[i] * d,
                sizeof(double) * static_cast<size_t>(d));
  }
  auto* xi = x.impl().get();
  auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
  return make_node({k, d}, std::move(out), {x},
                   [xi, idx_copy, d](TensorImpl& self) {
                     if (!xi->requires_grad) return;
                     xi->ensure_grad();
                     for (size_t i = 0; i < idx_copy->size(); ++i) {
                       double* dst = xi->grad.data() + (*idx_copy)[i] * d;
                       const double* g = self.grad.data() + i * d;
                       for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                     }
                   });
}

Tensor mean_axis1(const Tensor& x) {
  require(x.rank() == 3, "mean_axis1 expects [batch x seq x d]");
  int64_t B = x.dim(0), S = x.dim(1), d = x.dim(2);
  std::vector<double> out(static_cast<size_t>(B * d), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t s = 0; s < S; ++s)
      for (int64_t i = 0; i < d; ++i)
        out[b * d + i] += x.data()[(b * S + s) * d + i] / S;
  auto* xi = x.impl().get();
  return make_node({B, d}, std::move(out), {x}, [xi, B, S, d](TensorImpl& self) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t s = 0; s < S; ++s)
        for (int64_t i = 0; i < d; ++i)
          xi->grad[(b * S + s) * d + i] += self.grad[b * d + i] / S;
  });
}

// ---- reductions / losses ----

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto* ai = a.impl().get();
  return make_node({1}, {acc}, {a}, [ai](TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (double& g : ai->grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.numel()); }

Tensor softmax_ce(const Tensor& logits, const std::vector<int64_t>& labels) {
  require(logits.rank() == 2, "softmax_ce expects [batch x K] logits");
  int64_t B = logits.dim(0), K = logits.dim(1);
  require(static_cast<int64_t>(labels.size()) == B,
          "softmax_ce: label count mismatch");
  auto probs = std::make_shared<std::vector<double>>(logits.data().size());
  double loss = 0.0;
  int64_t counted = 0;
  for (int64_t b = 0; b < B; ++b) {
    const double* x = logits.data().data() + b * K;
    double* p = probs->data() + b * K;
    double mx = *std::max_element(x, x + K);
    double z = 0.0;
    for (int64_t i = 0; i < K; ++i) {
      p[i] = std::exp(x[i] - mx);
      z += p[i];
    }
    for (int64_t i = 0; i < K; ++i) p[i] /= z;
    int64_t y = labels[b];
    if (y < 0) continue; // masked out
    require(y < K, "softmax_ce: class index " + std::to_string(y) +
                       " >= K=" + std::to_string(K));
    loss -= std::log(std::max(p[y], 1e-300));
    ++counted;
  }
  require(counted > 0, "softmax_ce: no unmasked labels");
  loss /= counted;
  auto* li = logits.impl().get();
  auto labels_copy = std::make_shared<std::vector<int64_t>>(labels);
  return make_node({1}, {loss}, {logits},
                   [li, probs, labels_copy, B, K, counted](TensorImpl& self) {
                     if (!li->requires_grad) return;
                     li->ensure_grad();
                     double g = self.grad[0] / counted;
                     for (int64_t b = 0; b < B; ++b) {
                       int64_t y = (*labels_copy)[b];
                       if (y < 0) continue;
                       const double* p = probs->data() + b * K;
                       double* dx = li->grad.data() + b * K;
                       for (int64_t i = 0; i < K; ++i) {
                         dx[i] += g * (p[i] - (i == y ? 1.0 : 0.0));
                       }
                     }
                   });
}

Tensor bce_multilabel(const Tensor& logits, const std::vector<double>& targets) {
  require(logits.numel() == static_cast<int64_t>(targets.size()),
          "bce_multilabel: size mismatch");
  int64_t n = logits.numel();
  auto sig = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double x = logits.data()[i];
    double t = targets[i];
    // log(1+exp(-|x|)) form for stability
    double sp = std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
    loss += sp - t * x;
    (*sig)[i] = 1.0 / (1.0 + std::exp(-x));
  }
  loss /= n;
  auto* li = logits.impl().get();
  auto tgt = std::make_shared<std::vector<double>>(targets);
  return make_node({1}, {loss}, {logits}, [li, sig, tgt, n](TensorImpl& self) {
    if (!li->requires_grad) return;
    li->ensure_grad();
    double g = self.grad[0] / n;
    for (int64_t i = 0; i < n; ++i)
      li->grad[i] += g * ((*sig)[i] - (*tgt)[i]);
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(), "mse_loss: shape mismatch " +
                                              shape_str(pred.shape()) + " vs " +
                                              shape_str(target.shape()));
  int64_t n = pred.numel();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double d = pred.data()[i] - target.data()[i];
    loss += d * d;
  }
  loss /= n;
  auto* pi = pred.impl().get();
  auto* ti = target.impl().get();
  return make_node({1}, {loss}, {pred, target}, [pi, ti, n](TensorImpl& self) {
    double g = 2.0 * self.grad[0] / n;
    if (pi->requires_grad) {
      pi->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        pi->grad[i] += g * (pi->data[i] - ti->data[i]);
    }
    if (ti->requires_grad) {
      ti->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        ti->grad[i] -= g * (pi->data[i] - ti->data[i]);
    }
  });
}

// ---- column statistics (OTDD gaussian moments) ----

Tensor col_mean(const Tensor& x) {
  require(x.rank() == 2, "col_mean expects a matrix");
  int64_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out[j] += x.data()[i * d + j] / n;
  auto* xi = x.impl().get();
  return make_node({1, d}, std::move(out), {x}, [xi, n, d](TensorImpl& self) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j)
        xi->grad[i * d + j] += self.grad[j] / n;
  });
}

Tensor col_sigma(const Tensor& x, double var_floor) {
  require(x.rank() == 2, "col_sigma expects a matrix");
  int64_t n = x.dim(0), d = x.dim(1);
  auto mu = std::make_shared<std::vector<double>>(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) (*mu)[j] += x.data()[i * d + j] / n;
  std::vector<double> sig(static_cast<size_t>(d), 0.0);
  auto clamped = std::make_shared<std::vector<bool>>(static_cast<size_t>(d));
  for (int64_t j = 0; j < d; ++j) {
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double c = x.data()[i * d + j] - (*mu)[j];
      var += c * c;
    }
    var /= n;
    (*clamped)[j] = var < var_floor;
    sig[j] = std::sqrt(std::max(var, var_floor));
  }
  auto* xi = x.impl().get();
  return make_node({1, d}, std::move(sig), {x},
                   [xi, mu, clamped, n, d](TensorImpl& self) {
                     if (!xi->requires_grad) return;
                     xi->ensure_grad();
                     for (int64_t j = 0; j < d; ++j) {
                       if ((*clamped)[j]) continue; // flat region of the clamp
                       double g = self.grad[j] / (n * self.data[j]);
                       for (int64_t i = 0; i < n; ++i)
                         xi->grad[i * d + j] += g * (xi->data[i * d + j] - (*mu)[j]);
                     }
                   });
}

Tensor pairwise_sqdist_const(const Tensor& a, const std::vector<double>& b,
                             int64_t m) {
  require(a.rank() == 2, "pairwise_sqdist_const expects a matrix");
  int64_t n = a.dim(0), d = a.dim(1);
  require(static_cast<int64_t>(b.size()) == m * d,
          "pairwise_sqdist_const: b size mismatch");
  std::vector<double> out(static_cast<size_t>(n * m));
  kernels::pairwise_sqdist(a.data().data(), b.data(), out.data(), n, m, d);
  auto* ai = a.impl().get();
  auto bc = std::make_shared<std::vector<double>>(b);
  return make_node({n, m}, std::move(out), {a},
                   [ai, bc, n, m, d](TensorImpl& self) {
                     if (!ai->requires_grad) return;
                     ai->ensure_grad();
                     for (int64_t i = 0; i < n; ++i) {
                       for (int64_t j = 0; j < m; ++j) {
                         double g = 2.0 * self.grad[i * m + j];
                         if (g == 0.0) continue;
                         for (int64_t k = 0; k < d; ++k)
                           ai->grad[i * d + k] +=
                               g * (ai->data[i * d + k] - (*bc)[j * d + k]);
                       }
                     }
                   });
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "pairwise_sqdist: incompatible shapes " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
  int64_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n * m));
  kernels::pairwise_sqdist(a.data().data(), b.data().data(), out.data(), n, m, d);
  auto* ai = a.impl().get();
  auto* bi = b.impl().get();
  return make_node({n, m}, std::move(out), {a, b},
                   [ai, bi, n, m, d](TensorImpl& self) {
                     for (int64_t i = 0; i < n; ++i) {
                       for (int64_t j = 0; j < m; ++j) {
                         double g = 2.0 * self.grad[i * m + j];
                         if (g == 0.0) continue;
                         for (int64_t k = 0; k < d; ++k) {
                           double diff = ai->data[i * d + k] - bi->data[j * d + k];
                           if (ai->requires_grad) {
                             ai->ensure_grad();
                             ai->grad[i * d + k] += g * diff;
                           }
                           if (bi->requires_grad) {
                             bi->ensure_grad();
                             bi->grad[j * d + k] -= g * diff;
                           }
                         }
                       }
                     }
                   });
}

// ---- backward ----

void backward(const Tensor& loss) {
  require(loss.numel() == 1,
          "backward: loss must be scalar, got " + shape_str(loss.shape()));
  // Iterative post-order DFS: children before parents in `order`.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
    }
  }
}

} // namespace xmodal
